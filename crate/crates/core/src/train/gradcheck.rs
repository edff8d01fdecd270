use super::Trainable;
use crate::error::Result;
use crate::signals::Sample;

/// Denominator floor for the relative discrepancy. Components whose true
/// gradient is below it are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn relative_discrepancy(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Worst relative discrepancy between analytic gradients and central finite
/// differences with step `epsilon`, over every parameter.
pub fn grad_check<M: Trainable>(model: &M, sample: &Sample, epsilon: f64) -> Result<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, grad) = model.loss_and_grad(sample)?;
    let analytic: Vec<f64> = grad.tensors().concat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for t in 0..model.tensors().len() {
        for i in 0..model.tensors()[t].len() {
            let orig = model.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + epsilon;
            let up = probe.loss(sample)?;
            probe.tensors_mut()[t][i] = orig - epsilon;
            let down = probe.loss(sample)?;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_discrepancy(analytic[flat], numeric));
            flat += 1;
        }
    }
    Ok(worst)
}
