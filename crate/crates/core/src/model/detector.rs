//! Forward pass of the spike detector.
//!
//! ```text
//! rr (T,1) ─ embed ─┬─ stack 0: block(d=1) → block(d=k) → … ─┐ skips
//!                   └─ stack 1: block(d=1) → block(d=k) → … ─┤ summed
//!                                                            └→ head → (Ts,M)
//! ```

use super::{dilation_for_layer, BlockParams, DetectorConfig, DetectorParams, HeadParams, Linear, ModelError};
use crate::graph::{Graph, Var};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

fn mix(g: &mut Graph, x: Var, lin: &Linear<Var>) -> Result<Var, ModelError> {
    Ok(g.channel_mix(x, lin.weight, lin.bias)?)
}

/// One residual base block. Returns the block output `(T, C)` and its skip
/// projection `(T - 2·crop, S)`.
pub fn residual_block_forward(
    g: &mut Graph,
    x: Var,
    block: &BlockParams<Var>,
    dilation: usize,
    crop: usize,
) -> Result<(Var, Var), ModelError> {
    let expanded = mix(g, x, &block.expand)?;
    let u = g.gelu(expanded);
    let conv = g.conv1d_depthwise(u, block.depthwise.weight, block.depthwise.bias, dilation)?;
    let v = g.gelu(conv);

    let squeezed = g.mean_over_time(v)?;
    let reduced = mix(g, squeezed, &block.se_reduce)?;
    let reduced = g.gelu(reduced);
    let excite = mix(g, reduced, &block.se_expand)?;
    let gate = g.sigmoid(excite);
    let gated = g.scale_channels(v, gate)?;

    let compressed = mix(g, gated, &block.compress)?;
    let y = g.add(x, compressed)?;
    let cropped = g.crop_time(y, crop, crop)?;
    let skip = mix(g, cropped, &block.skip)?;
    Ok((y, skip))
}

/// Per-timestep `S -> S -> M` map producing logits.
pub fn head_forward(g: &mut Graph, skip_sum: Var, head: &HeadParams<Var>) -> Result<Var, ModelError> {
    let hidden = mix(g, skip_sum, &head.hidden)?;
    let hidden = g.gelu(hidden);
    mix(g, hidden, &head.out)
}

/// Maps `(T, 1)` or `(B, T, 1)` RR input to `(Ts, M)` / `(B, Ts, M)` logits.
pub fn detector_forward(
    g: &mut Graph,
    input: Var,
    params: &DetectorParams<Var>,
    cfg: &DetectorConfig,
) -> Result<Var, ModelError> {
    let shape = g.shape(input);
    let (len, width) = match *shape {
        [t, c] | [_, t, c] => (t, c),
        _ => (0, 0),
    };
    if len != cfg.seg_len || width != 1 {
        return Err(ModelError::InputShape {
            expected: cfg.seg_len,
            found: shape.to_vec(),
        });
    }

    let embedded = mix(g, input, &params.embed)?;
    let mut skip_sum: Option<Var> = None;
    for stack in &params.stacks {
        let mut x = embedded;
        for (n, block) in stack.iter().enumerate() {
            let dilation = dilation_for_layer(n + 1, cfg.kernel_size);
            let (y, skip) = residual_block_forward(g, x, block, dilation, cfg.pad)?;
            x = y;
            skip_sum = Some(match skip_sum {
                Some(acc) => g.add(acc, skip)?,
                None => skip,
            });
        }
    }
    let skip_sum = skip_sum.expect("validated config has at least one layer");
    head_forward(g, skip_sum, &params.head)
}

/// Inference on a batch of normalized segments, each `seg_len` long.
/// Returns logits, `target_len · classes` per segment.
pub fn predict_logits(
    params: &DetectorParams,
    cfg: &DetectorConfig,
    segments: &[&[f64]],
) -> Result<Vec<Vec<f64>>, ModelError> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = segments.iter().find(|s| s.len() != cfg.seg_len) {
        return Err(ModelError::InputShape {
            expected: cfg.seg_len,
            found: vec![bad.len(), 1],
        });
    }
    let mut g = Graph::new();
    let vars = params.register_frozen(&mut g);
    let data = segments.concat();
    let input = g.constant(Tensor::new(vec![segments.len(), cfg.seg_len, 1], data)?);
    let logits = detector_forward(&mut g, input, &vars, cfg)?;
    let per = cfg.target_len() * cfg.classes;
    Ok(g.data(logits).chunks_exact(per).map(<[f64]>::to_vec).collect())
}

/// Spike probabilities for one normalized segment (`M = 1`).
pub fn predict_segment(params: &DetectorParams, cfg: &DetectorConfig, segment: &[f64]) -> Result<Vec<f64>, ModelError> {
    let logits = predict_logits(params, cfg, &[segment])?;
    Ok(logits[0].iter().map(|&z| sigmoid_scalar(z)).collect())
}
