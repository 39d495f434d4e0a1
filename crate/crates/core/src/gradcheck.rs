//! Central finite-difference checks for reverse-mode gradients.

use crate::graph::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn scalar_of(g: &Graph, out: Var) -> Result<f64> {
    match g.data(out) {
        [v] => Ok(*v),
        _ => Err(TensorError::NonScalarLoss(g.shape(out).to_vec())),
    }
}

/// Checks every coordinate of every input. `f` must build a scalar from the
/// given leaves deterministically. Returns the worst relative error.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    grad_check_coords(f, inputs, &coords, step)
}

/// Like [`grad_check_many`] but probes only the listed coordinates of each
/// input, for graphs too large to sweep exhaustively.
pub fn grad_check_coords<F>(f: F, inputs: &[Tensor], coords: &[Vec<usize>], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert_eq!(inputs.len(), coords.len());
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_tensor(v).into_data()).collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (which, idxs) in coords.iter().enumerate() {
        for &i in idxs {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[which][i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form: compares reverse-mode gradients of `f` at `input`
/// against `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn grad_check<F>(f: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(input), step)
}
