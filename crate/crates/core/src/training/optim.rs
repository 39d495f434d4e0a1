//! AdamW with decoupled weight decay.

use crate::model::DetectorParams;

use super::{TrainConfig, TrainError};

/// Moment accumulators, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn for_params(params: &DetectorParams) -> Self {
        Self::new(params.leaves().iter().map(|t| t.len()))
    }
}

/// One AdamW update over aligned weight and gradient buffers. Every
/// gradient is checked before anything is modified; a non-finite entry
/// rejects the whole step. Returns the number of scalars updated.
pub fn adamw_step(
    weights: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<usize, TrainError> {
    if weights.len() != grads.len() || weights.len() != state.m.len() {
        return Err(TrainError::LengthMismatch {
            what: "optimizer buffers",
            expected: state.m.len(),
            found: weights.len(),
        });
    }
    for (i, ((w, g), m)) in weights.iter().zip(grads).zip(&state.m).enumerate() {
        if w.len() != g.len() || w.len() != m.len() {
            return Err(TrainError::LengthMismatch {
                what: "optimizer tensor",
                expected: m.len(),
                found: g.len(),
            });
        }
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { tensor: i, index: j });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    let mut count = 0;
    for (((w, g), m), v) in weights.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] = w[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        count += w.len();
    }
    Ok(count)
}

/// [`adamw_step`] over detector parameters in canonical order.
pub fn adamw_step_params(
    params: &mut DetectorParams,
    grads: &DetectorParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<usize, TrainError> {
    let grads: Vec<&[f64]> = grads.leaves().into_iter().map(|t| t.data()).collect();
    let mut weights: Vec<&mut [f64]> = params.leaves_mut().into_iter().map(|t| t.data_mut()).collect();
    adamw_step(&mut weights, &grads, state, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    fn step1(w: f64, g: f64, c: &TrainConfig, st: &mut OptimizerState) -> f64 {
        let mut w = [w];
        adamw_step(&mut [&mut w[..]], &[&[g][..]], st, c).unwrap();
        w[0]
    }

    #[test]
    fn first_step_example() {
        let mut st = OptimizerState::new([1]);
        let w = step1(1.0, 1.0, &cfg(0.1, 0.01), &mut st);
        assert!((w - 0.899).abs() < 1e-8, "{w}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut st = OptimizerState::new([1]);
        assert_eq!(step1(0.37, 0.0, &cfg(0.1, 0.0), &mut st), 0.37);
        assert_eq!((st.m[0][0], st.v[0][0]), (0.0, 0.0));
    }

    #[test]
    fn zero_gradient_decay_is_exact_scaling() {
        let mut st = OptimizerState::new([1]);
        assert_eq!(step1(2.5, 0.0, &cfg(0.1, 0.01), &mut st), 2.5 * (1.0 - 0.001));
    }

    #[test]
    fn nan_gradient_rejects_whole_step() {
        let mut st = OptimizerState::new([2, 1]);
        let (mut a, mut b) = ([1.0, 2.0], [3.0]);
        let err = adamw_step(&mut [&mut a[..], &mut b[..]], &[&[0.1, 0.2][..], &[f64::NAN][..]], &mut st, &cfg(0.1, 0.0));
        assert!(matches!(err, Err(TrainError::NonFiniteGradient { tensor: 1, index: 0 })));
        assert_eq!((a, b, st.step), ([1.0, 2.0], [3.0], 0));
    }
}
