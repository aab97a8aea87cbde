//! Finite-difference verification of the reverse pass.

use super::eval64::eval_scalar_f64;
use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ParamStore;

/// Verifies the analytic gradient of a scalar loss w.r.t. one named
/// parameter against central finite differences, returning the maximum
/// relative error over the parameter's entries:
///
/// `max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-8)`
///
/// `build` must construct the same graph on every call (it is invoked once;
/// perturbed evaluations replay the recorded graph in `f64`). A parameter
/// the loss never touches yields zero for both sides, hence error 0.
pub fn gradient_check<F>(build: F, store: &ParamStore, param: &str, epsilon: f32) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-5..=1e-2).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "gradient_check epsilon {epsilon} outside [1e-5, 1e-2]"
        )));
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::LossNotScalar(tape.shape(loss).to_vec()));
    }
    tape.backward(loss)?;

    let Some(var) = tape.param_var(param) else {
        // Parameter not bound by the graph: analytic and numeric are both 0.
        if store.get(param).is_none() {
            return Err(Error::InvalidArgument(format!("unknown parameter `{param}`")));
        }
        return Ok(0.0);
    };
    let analytic: Vec<f32> = match tape.grad(var) {
        Some(g) => g.to_vec(),
        None => vec![0.0; tape.value(var).numel()],
    };

    let base: Vec<f64> = tape.value(var).data().iter().map(|&x| x as f64).collect();
    let eps = epsilon as f64;
    let mut max_rel = 0.0f64;
    let mut perturbed = base.clone();
    for i in 0..base.len() {
        perturbed[i] = base[i] + eps;
        let plus = eval_scalar_f64(&tape, loss, Some((var, &perturbed)));
        perturbed[i] = base[i] - eps;
        let minus = eval_scalar_f64(&tape, loss, Some((var, &perturbed)));
        perturbed[i] = base[i];
        let central = (plus - minus) / (2.0 * eps);
        let a = analytic[i] as f64;
        let denom = a.abs().max(central.abs()).max(1e-8);
        let rel = (a - central).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
