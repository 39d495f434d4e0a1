use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dilation of layer `n` (1-based) within a stack: `k^(n-1)`.
pub fn dilation_for_layer(n: usize, kernel_size: usize) -> usize {
    assert!(n >= 1 && kernel_size >= 2);
    kernel_size.pow((n - 1) as u32)
}

/// Receptive field of `layers` stacked convolutions with geometrically
/// growing dilation: `(k - 1) · Σ_{i=1..L} k^(i-1) + 1`, which equals `k^L`.
pub fn receptive_field(kernel_size: usize, layers: usize) -> usize {
    assert!(layers >= 1 && kernel_size >= 2);
    let span: usize = (1..=layers).map(|i| dilation_for_layer(i, kernel_size)).sum();
    (kernel_size - 1) * span + 1
}

/// Architecture hyperparameters of the spike detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Depthwise kernel size (odd).
    pub kernel_size: usize,
    /// Base channels of the residual stream.
    pub channels: usize,
    /// Expanded channels inside each block.
    pub hidden: usize,
    /// Side channels of the skip branches and head.
    pub side: usize,
    /// Residual blocks per stack.
    pub layers: usize,
    /// Parallel filter stacks.
    pub stacks: usize,
    /// Segment length `T`.
    pub seg_len: usize,
    /// Margin `P` cropped from each end of the segment.
    pub pad: usize,
    /// Output classes `M`.
    pub classes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl DetectorConfig {
    /// k=3, C=32, H=40, S=72, L=4, F=2, T=32, P=4, M=1.
    pub const fn reference() -> Self {
        Self {
            kernel_size: 3,
            channels: 32,
            hidden: 40,
            side: 72,
            layers: 4,
            stacks: 2,
            seg_len: 32,
            pad: 4,
            classes: 1,
        }
    }

    /// Length of the predicted central slice, `T - 2P`.
    pub fn target_len(&self) -> usize {
        self.seg_len - 2 * self.pad
    }

    /// Squeeze-and-excitation bottleneck width, `ceil(H / 4)`.
    pub fn se_channels(&self) -> usize {
        self.hidden.div_ceil(4)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size must be odd and >= 3, got {}", self.kernel_size));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("side", self.side),
            ("layers", self.layers),
            ("stacks", self.stacks),
            ("classes", self.classes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.seg_len <= 2 * self.pad {
            return bad(format!(
                "segment length {} leaves no target after cropping {} per side",
                self.seg_len, self.pad
            ));
        }
        let deepest = (self.kernel_size as u128).checked_pow(self.layers as u32 - 1);
        if deepest.is_none_or(|d| d > self.seg_len as u128) {
            return bad(format!(
                "deepest dilation {}^{} exceeds segment length {}",
                self.kernel_size,
                self.layers - 1,
                self.seg_len
            ));
        }
        Ok(())
    }

    /// Canonical parameter inventory: `(name, shape)` in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (k, c, h, s, r, m) = (
            self.kernel_size,
            self.channels,
            self.hidden,
            self.side,
            self.se_channels(),
            self.classes,
        );
        let mut out = Vec::new();
        let mut linear = |prefix: String, rows: usize, cols: usize| {
            out.push((format!("{prefix}.weight"), vec![rows, cols]));
            out.push((format!("{prefix}.bias"), vec![cols]));
        };
        linear("embed".into(), 1, c);
        for stack in 0..self.stacks {
            for layer in 0..self.layers {
                let p = format!("stack{stack}.layer{layer}");
                linear(format!("{p}.expand"), c, h);
                linear(format!("{p}.depthwise"), k, h);
                linear(format!("{p}.se_reduce"), h, r);
                linear(format!("{p}.se_expand"), r, h);
                linear(format!("{p}.compress"), h, c);
                linear(format!("{p}.skip"), c, s);
            }
        }
        linear("head.hidden".into(), s, s);
        linear("head.out".into(), s, m);
        out
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (k, c, h, s, r, m) = (
            self.kernel_size,
            self.channels,
            self.hidden,
            self.side,
            self.se_channels(),
            self.classes,
        );
        let per_layer = (c * h + h) + (k * h + h) + (h * r + r) + (r * h + h) + (h * c + c) + (c * s + s);
        (c + c) + self.stacks * self.layers * per_layer + (s * s + s) + (s * m + m)
    }

    /// Largest distance between an output sample and an input sample that
    /// can influence it through the convolutional path of one stack,
    /// `(k^L - 1) / 2`. Stacks run in parallel, so this is also the bound
    /// for the whole detector when the excitation gates are input-independent.
    pub fn receptive_radius(&self) -> usize {
        (receptive_field(self.kernel_size, self.layers) - 1) / 2
    }
}
