//! The differentiable operations the detector is built from.
//!
//! Sequence operations accept `[T, C]` or batched `[B, T, C]` inputs; the
//! batch axis is carried through untouched.

use crate::graph::{Function, Graph, Value, Var};
use crate::tensor::{seq_dims, Result, Tensor, TensorError};

/// How a dilated convolution reads taps that fall outside the sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    /// Out-of-range taps read the nearest boundary sample.
    #[default]
    Replicate,
    /// Out-of-range taps contribute nothing.
    Zero,
}

fn mismatch(op: &'static str, expected: impl Into<String>, found: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.into(),
        found: found.to_vec(),
    }
}

/// `c = a · b (+ beta · c)` for row-major slices described by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index touched for the given
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `x · Φ(x)` with the exact error-function form of `Φ`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct DepthwiseConv {
    dilation: usize,
    padding: Padding,
}

impl DepthwiseConv {
    /// Source index for tap `j` at time `t`, or `None` for a zero tap.
    #[inline]
    fn source(&self, t: usize, j: usize, k: usize, len: usize) -> Option<usize> {
        let offset = (j as isize - (k as isize - 1) / 2) * self.dilation as isize;
        let src = t as isize + offset;
        if (0..len as isize).contains(&src) {
            Some(src as usize)
        } else {
            match self.padding {
                Padding::Replicate => Some(src.clamp(0, len as isize - 1) as usize),
                Padding::Zero => None,
            }
        }
    }
}

impl Function for DepthwiseConv {
    fn name(&self) -> &'static str {
        "conv1d_depthwise"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, kernel) = (inputs[0], inputs[1]);
        let (b, t_len, c) = seq_dims(x.shape()).unwrap();
        let k = kernel.shape()[0];
        let (xd, kd) = (x.data(), kernel.data());
        let mut dx = needs[0].then(|| vec![0.0; xd.len()]);
        let mut dk = needs[1].then(|| vec![0.0; kd.len()]);
        let mut db = needs[2].then(|| vec![0.0; c]);
        for bi in 0..b {
            for t in 0..t_len {
                let orow = (bi * t_len + t) * c;
                let g = &dy[orow..orow + c];
                if let Some(db) = db.as_mut() {
                    db.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                for j in 0..k {
                    let Some(src) = self.source(t, j, k, t_len) else {
                        continue;
                    };
                    let irow = (bi * t_len + src) * c;
                    let krow = &kd[j * c..(j + 1) * c];
                    if let Some(dx) = dx.as_mut() {
                        for ch in 0..c {
                            dx[irow + ch] += krow[ch] * g[ch];
                        }
                    }
                    if let Some(dk) = dk.as_mut() {
                        let xrow = &xd[irow..irow + c];
                        for ch in 0..c {
                            dk[j * c + ch] += xrow[ch] * g[ch];
                        }
                    }
                }
            }
        }
        vec![dx, dk, db]
    }
}

struct ChannelMix {
    rows: usize,
    cin: usize,
    cout: usize,
}

impl Function for ChannelMix {
    fn name(&self) -> &'static str {
        "channel_mix"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (rows, cin, cout) = (self.rows, self.cin, self.cout);
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; rows * cin];
            // dX = dY · Wᵀ
            gemm(rows, cout, cin, dy, (cout, 1), w, (1, cout), &mut dx, 0.0);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; cin * cout];
            // dW = Xᵀ · dY
            gemm(cin, rows, cout, x, (1, cin), dy, (cout, 1), &mut dw, 0.0);
            dw
        });
        let db = needs[2].then(|| {
            let mut db = vec![0.0; cout];
            for row in dy.chunks_exact(cout) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
            }
            db
        });
        vec![dx, dw, db]
    }
}

/// Keeps `Φ(x)` from the forward pass.
struct Gelu {
    cdf: Vec<f64>,
}

impl Function for Gelu {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let dx = inputs[0]
            .data()
            .iter()
            .zip(&self.cdf)
            .zip(dy)
            .map(|((&x, &cdf), &g)| {
                let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
                g * (cdf + x * pdf)
            })
            .collect();
        vec![Some(dx)]
    }
}

struct Sigmoid;

impl Function for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Value], out: &Value, dy: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let dx = out.data().iter().zip(dy).map(|(&y, &g)| g * y * (1.0 - y)).collect();
        vec![Some(dx)]
    }
}

struct MeanOverTime {
    batch: usize,
    time: usize,
    channels: usize,
}

impl Function for MeanOverTime {
    fn name(&self) -> &'static str {
        "mean_over_time"
    }

    fn backward(&self, _: &[&Value], _: &Value, dy: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (b, t, c) = (self.batch, self.time, self.channels);
        let scale = 1.0 / t as f64;
        let mut dx = vec![0.0; b * t * c];
        for bi in 0..b {
            let g = &dy[bi * c..(bi + 1) * c];
            for row in dx[bi * t * c..(bi + 1) * t * c].chunks_exact_mut(c) {
                row.iter_mut().zip(g).for_each(|(d, g)| *d = g * scale);
            }
        }
        vec![Some(dx)]
    }
}

struct CropTime {
    batch: usize,
    time: usize,
    channels: usize,
    left: usize,
    kept: usize,
}

impl Function for CropTime {
    fn name(&self) -> &'static str {
        "crop_time"
    }

    fn backward(&self, _: &[&Value], _: &Value, dy: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, kept) = (self.channels, self.kept);
        let mut dx = vec![0.0; self.batch * self.time * c];
        for bi in 0..self.batch {
            let dst = (bi * self.time + self.left) * c;
            let src = bi * kept * c;
            dx[dst..dst + kept * c].copy_from_slice(&dy[src..src + kept * c]);
        }
        vec![Some(dx)]
    }
}

struct Add;

impl Function for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| dy.to_vec()), needs[1].then(|| dy.to_vec())]
    }
}

struct Mul;

impl Function for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = needs[0].then(|| b.iter().zip(dy).map(|(b, g)| b * g).collect());
        let db = needs[1].then(|| a.iter().zip(dy).map(|(a, g)| a * g).collect());
        vec![da, db]
    }
}

struct ScaleChannels {
    batch: usize,
    time: usize,
    channels: usize,
}

impl Function for ScaleChannels {
    fn name(&self) -> &'static str {
        "scale_channels"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, gate) = (inputs[0].data(), inputs[1].data());
        let (b, t, c) = (self.batch, self.time, self.channels);
        let mut dx = needs[0].then(|| vec![0.0; x.len()]);
        let mut dg = needs[1].then(|| vec![0.0; gate.len()]);
        for bi in 0..b {
            let grow = &gate[bi * c..(bi + 1) * c];
            for ti in 0..t {
                let off = (bi * t + ti) * c;
                if let Some(dx) = dx.as_mut() {
                    for ch in 0..c {
                        dx[off + ch] = dy[off + ch] * grow[ch];
                    }
                }
                if let Some(dg) = dg.as_mut() {
                    for ch in 0..c {
                        dg[bi * c + ch] += dy[off + ch] * x[off + ch];
                    }
                }
            }
        }
        vec![dx, dg]
    }
}

struct Sum;

impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Value], _: &Value, dy: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![dy[0]; inputs[0].len()])]
    }
}

impl Graph {
    /// Per-channel dilated convolution with replicate padding.
    ///
    /// `out[t, c] = bias[c] + Σ_j kernel[j, c] · x[t + (j - (k-1)/2)·dilation, c]`
    /// with out-of-range time indices clamped to the boundary. Output length
    /// equals input length.
    pub fn conv1d_depthwise(&mut self, x: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        self.conv1d_depthwise_padded(x, kernel, bias, dilation, Padding::Replicate)
    }

    pub fn conv1d_depthwise_padded(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "conv1d_depthwise";
        let (b, t_len, c) = seq_dims(self.shape(x)).ok_or_else(|| mismatch(OP, "[T, C] or [B, T, C]", self.shape(x)))?;
        let kshape = self.shape(kernel);
        if kshape.len() != 2 || kshape[1] != c {
            return Err(mismatch(OP, format!("kernel [k, {c}]"), kshape));
        }
        let k = kshape[0];
        if k.is_multiple_of(2) {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("kernel size must be odd, got {k}"),
            });
        }
        if dilation < 1 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "dilation must be at least 1".into(),
            });
        }
        if self.shape(bias) != [c] {
            return Err(mismatch(OP, format!("bias [{c}]"), self.shape(bias)));
        }

        let func = DepthwiseConv { dilation, padding };
        let (xd, kd, bd) = (self.data(x), self.data(kernel), self.data(bias));
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for t in 0..t_len {
                let orow = (bi * t_len + t) * c;
                let o = &mut out[orow..orow + c];
                o.copy_from_slice(bd);
                for j in 0..k {
                    let Some(src) = func.source(t, j, k, t_len) else {
                        continue;
                    };
                    let irow = (bi * t_len + src) * c;
                    let xrow = &xd[irow..irow + c];
                    let krow = &kd[j * c..(j + 1) * c];
                    for ch in 0..c {
                        o[ch] += krow[ch] * xrow[ch];
                    }
                }
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.apply(Box::new(func), &[x, kernel, bias], out))
    }

    /// Per-timestep linear map over the last axis: `out = x · weight + bias`.
    pub fn channel_mix(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "channel_mix";
        let xshape = self.shape(x).to_vec();
        let cin = *xshape.last().expect("tensors have rank >= 1");
        let wshape = self.shape(weight);
        if wshape.len() != 2 || wshape[0] != cin {
            return Err(mismatch(OP, format!("weight [{cin}, Cout]"), wshape));
        }
        let cout = wshape[1];
        if self.shape(bias) != [cout] {
            return Err(mismatch(OP, format!("bias [{cout}]"), self.shape(bias)));
        }
        let rows = self.value(x).len() / cin;
        let mut out = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            out.extend_from_slice(self.data(bias));
        }
        gemm(rows, cin, cout, self.data(x), (cin, 1), self.data(weight), (cout, 1), &mut out, 1.0);
        let mut oshape = xshape;
        *oshape.last_mut().unwrap() = cout;
        let out = Tensor::new(oshape, out)?;
        Ok(self.apply(Box::new(ChannelMix { rows, cin, cout }), &[x, weight, bias], out))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xd = self.data(x);
        let cdf: Vec<f64> = xd.iter().map(|&v| std_normal_cdf(v)).collect();
        let data = xd.iter().zip(&cdf).map(|(&v, &p)| v * p).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).unwrap();
        let cdf = if self.value(x).requires_grad() { cdf } else { Vec::new() };
        self.apply(Box::new(Gelu { cdf }), &[x], out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).unwrap();
        self.apply(Box::new(Sigmoid), &[x], out)
    }

    /// Averages over the time axis: `[T, C] -> [C]`, `[B, T, C] -> [B, C]`.
    pub fn mean_over_time(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "mean_over_time";
        let shape = self.shape(x).to_vec();
        let (b, t, c) = seq_dims(&shape).ok_or_else(|| mismatch(OP, "[T, C] or [B, T, C]", &shape))?;
        if t == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "empty time axis".into(),
            });
        }
        let xd = self.data(x);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            let o = &mut out[bi * c..(bi + 1) * c];
            for row in xd[bi * t * c..(bi + 1) * t * c].chunks_exact(c) {
                o.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            o.iter_mut().for_each(|o| *o /= t as f64);
        }
        let oshape = if shape.len() == 2 { vec![c] } else { vec![b, c] };
        let out = Tensor::new(oshape, out)?;
        Ok(self.apply(
            Box::new(MeanOverTime {
                batch: b,
                time: t,
                channels: c,
            }),
            &[x],
            out,
        ))
    }

    /// Keeps time steps `left .. T - right`.
    pub fn crop_time(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        const OP: &str = "crop_time";
        let shape = self.shape(x).to_vec();
        let (b, t, c) = seq_dims(&shape).ok_or_else(|| mismatch(OP, "[T, C] or [B, T, C]", &shape))?;
        if left + right >= t {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("cropping {left}+{right} from length {t} leaves nothing"),
            });
        }
        let kept = t - left - right;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(b * kept * c);
        for bi in 0..b {
            let start = (bi * t + left) * c;
            out.extend_from_slice(&xd[start..start + kept * c]);
        }
        let mut oshape = shape;
        let tpos = oshape.len() - 2;
        oshape[tpos] = kept;
        let out = Tensor::new(oshape, out)?;
        Ok(self.apply(
            Box::new(CropTime {
                batch: b,
                time: t,
                channels: c,
                left,
                kept,
            }),
            &[x],
            out,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", format!("{:?}", self.shape(a)), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.apply(Box::new(Add), &[a, b], out))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", format!("{:?}", self.shape(a)), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.apply(Box::new(Mul), &[a, b], out))
    }

    /// Multiplies every time step of `x` by a per-channel gate: `[T, C] ⊙ [C]`
    /// or `[B, T, C] ⊙ [B, C]`.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        const OP: &str = "scale_channels";
        let shape = self.shape(x).to_vec();
        let (b, t, c) = seq_dims(&shape).ok_or_else(|| mismatch(OP, "[T, C] or [B, T, C]", &shape))?;
        let expected = if shape.len() == 2 { vec![c] } else { vec![b, c] };
        if self.shape(gate) != expected.as_slice() {
            return Err(mismatch(OP, format!("gate {expected:?}"), self.shape(gate)));
        }
        let (xd, gd) = (self.data(x), self.data(gate));
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            let grow = &gd[bi * c..(bi + 1) * c];
            for ti in 0..t {
                let off = (bi * t + ti) * c;
                for ch in 0..c {
                    out[off + ch] = xd[off + ch] * grow[ch];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.apply(
            Box::new(ScaleChannels {
                batch: b,
                time: t,
                channels: c,
            }),
            &[x, gate],
            out,
        ))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.apply(Box::new(Sum), &[x], Tensor::scalar(total))
    }
}
