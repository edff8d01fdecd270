use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<M: Parameterized>(params: &M) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn congruent(a: &[&[f64]], b: &[Vec<f64>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step<M: Parameterized>(
    params: &mut M,
    grads: &M,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let g = grads.tensors();
    let shapes_ok = congruent(&params.tensors(), &state.m)
        && congruent(&g, &state.m)
        && congruent(&g, &state.v);
    if !shapes_ok {
        return Err(Error::DimensionMismatch {
            op: "adam_step",
            left: (params.param_count(), 1),
            right: (grads.param_count(), 1),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *config;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Vector};
    use crate::nn::PredictorParams;

    fn params(w: &[f64], b: f64) -> PredictorParams {
        PredictorParams::new(
            Matrix::from_row_major(1, w.len(), w.to_vec()).unwrap(),
            Vector::scalar(b),
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params(&[0.5, -1.0], 0.2);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = params(&[0.5, -1.0], 0.2);
        let g = params(&[3.0, -0.01], 1e-3);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let expect = [0.5 - 1e-3, -1.0 + 1e-3, 0.2 - 1e-3];
        let got: Vec<f64> = p.tensors().concat();
        for (a, e) in got.iter().zip(expect) {
            assert!((a - e).abs() < 1e-7, "{a} vs {e}");
        }
    }

    #[test]
    fn identical_gradient_twice_gives_identical_step() {
        // At t = 2 with g, g the corrected moments are exactly g and g^2.
        let cfg = AdamConfig::default();
        let mut p = params(&[0.0], 0.0);
        let mut st = AdamState::new(&p);
        let g = params(&[0.7], 0.0);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let first = p.w.get(0, 0);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let second = p.w.get(0, 0) - first;
        assert!((second - first).abs() < 1e-15);
    }

    #[test]
    fn two_steps_on_same_objective_shrink_update() {
        // f(p) = p^2 from p = 1: the second gradient is smaller, v_hat keeps
        // the first one's magnitude, so the second step is shorter.
        let cfg = AdamConfig::default();
        let mut p = params(&[1.0], 0.0);
        let mut st = AdamState::new(&p);
        let mut steps = Vec::new();
        for _ in 0..2 {
            let before = p.w.get(0, 0);
            let g = params(&[2.0 * before], 0.0);
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            steps.push((p.w.get(0, 0) - before).abs());
        }
        assert!(steps[1] < steps[0], "{steps:?}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = params(&[0.0, 0.0], 0.0);
        let g = params(&[1.0], 0.0);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
        assert_eq!(st.t, 0);
    }
}
