//! Multi-step prediction error `E_p` over randomly drawn windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::signals::Series;

/// `E_p = sqrt( (1/(kp)) * sum_i ||pred_i - truth_i||^2 )`.
pub fn ep_error(pred: &[Vector], truth: &[Vector]) -> Result<f64> {
    Ok(crate::train::loss_mse(pred, truth)?.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub horizon: usize,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    /// Root-mean-square deviation at each of the `kp` horizon steps, pooled over trials.
    pub per_horizon: Vec<f64>,
    pub errors: Vec<f64>,
    pub starts: Vec<usize>,
}

/// Draws `trials` start indices from `rng`, asks `predict(input, k*p)` for a
/// forecast on each window and scores it against the series continuation.
/// Trials run in parallel; statistics are accumulated in trial order.
pub fn eval_ep<F>(
    predict: F,
    series: &Series,
    m: usize,
    k: usize,
    p: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<EvalReport>
where
    F: Fn(&[Vector], usize) -> Result<Vec<Vector>> + Sync,
{
    if trials == 0 || m == 0 || k == 0 || p == 0 {
        return Err(Error::InvalidConfig("trials, m, k and p must be >= 1".into()));
    }
    let horizon = k * p;
    if m + horizon > series.len() {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: m + horizon,
        });
    }
    let last = series.len() - m - horizon + 1;
    let starts: Vec<usize> = (0..trials).map(|_| rng.index(1, last)).collect();

    let per_trial: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let input = series.window(s, m);
            let truth = series.window(s + m, horizon);
            let pred = predict(&input, horizon)?;
            let sq: Vec<f64> = pred
                .iter()
                .zip(&truth)
                .map(|(a, b)| a.sub(b).map(|d| d.norm_sq()))
                .collect::<Result<_>>()?;
            Ok((ep_error(&pred, &truth)?, sq))
        })
        .collect::<Result<_>>()?;

    let n = trials as f64;
    let errors: Vec<f64> = per_trial.iter().map(|(e, _)| *e).collect();
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut per_horizon = vec![0.0; horizon];
    for (_, sq) in &per_trial {
        for (acc, v) in per_horizon.iter_mut().zip(sq) {
            *acc += v;
        }
    }
    for v in &mut per_horizon {
        *v = (*v / n).sqrt();
    }
    Ok(EvalReport {
        trials,
        horizon,
        mean,
        std,
        per_horizon,
        errors,
        starts,
    })
}
