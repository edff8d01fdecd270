//! The decoder-dependence equation
//!
//! ```text
//! F2(s, F2(s, 0)) = F2(F1(P(F2(s, 0)), s), 0)
//! ```
//!
//! holds for an ideally trained seq2seq predictor at every encoder state `s`
//! seen in training. This module measures how far a model is from satisfying
//! it, checks the round identities it is derived from, and tunes the decoder
//! (with encoder and predictor frozen) to shrink the residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::nn::{
    cell_step, encode, encode_last, ew_single_step_rounds, predictor_apply, Parameterized,
    RnnCellParams, Seq2SeqModel,
};
use crate::signals::{Dataset, SignalKind};
use crate::train::bptt::cell_backward;
use crate::train::{adam_step, AdamConfig, AdamState};

/// `F2(s, F2(s,0)) - F2(F1(P(F2(s,0)), s), 0)`, of dimension `n2`.
pub fn residual(model: &Seq2SeqModel, s: &Vector) -> Result<Vector> {
    let zero = Vector::zeros(model.dims.n2);
    let sigma1 = cell_step(&model.decoder, s, &zero)?;
    let lhs = cell_step(&model.decoder, s, &sigma1)?;
    let x_next = predictor_apply(&model.predictor, &sigma1)?;
    let s_next = cell_step(&model.encoder, &x_next, s)?;
    let rhs = cell_step(&model.decoder, &s_next, &zero)?;
    lhs.sub(&rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateOrigin {
    pub sample_index: usize,
    pub kind: SignalKind,
    pub p: usize,
    /// 1-based position `i` of `s_i` within the encoded sequence.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateSet {
    pub states: Vec<Vector>,
    pub origins: Vec<StateOrigin>,
}

impl HiddenStateSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Encodes dataset inputs in a seeded random order and collects up to `limit`
/// states. By default only the final state `s_m` of each sample is kept; with
/// `widen` the encoder keeps consuming the ground-truth continuation and
/// `s_m ..= s_{m+k-1}` are all collected.
pub fn harvest_states(
    encoder: &RnnCellParams,
    dataset: &Dataset,
    limit: usize,
    widen: bool,
    rng: &mut Rng,
) -> Result<HiddenStateSet> {
    if dataset.is_empty() {
        return Err(Error::Empty("harvest_states"));
    }
    if limit == 0 {
        return Err(Error::InvalidConfig("harvest limit must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let mut states = Vec::with_capacity(limit);
    let mut origins = Vec::with_capacity(limit);
    for idx in order {
        if states.len() >= limit {
            break;
        }
        let sample = &dataset.samples[idx];
        let m = sample.input.len();
        let origin = |position| StateOrigin {
            sample_index: idx,
            kind: sample.kind,
            p: sample.p,
            position,
        };
        if widen {
            let k = sample.target.len();
            let mut seq = sample.input.clone();
            seq.extend(sample.target[..k - 1].iter().cloned());
            let enc = encode(encoder, &seq)?;
            for (offset, s) in enc.into_iter().skip(m - 1).enumerate() {
                if states.len() >= limit {
                    break;
                }
                states.push(s);
                origins.push(origin(m + offset));
            }
        } else {
            states.push(encode_last(encoder, &sample.input)?);
            origins.push(origin(m));
        }
    }
    Ok(HiddenStateSet { states, origins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub q10: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    #[serde(skip)]
    pub norms: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ConsistencyReport {
    pub fn from_norms(norms: Vec<f64>) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::Empty("consistency_stats"));
        }
        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(ConsistencyReport {
            count: norms.len(),
            mean: norms.iter().sum::<f64>() / norms.len() as f64,
            median: quantile(&sorted, 0.5),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            q10: quantile(&sorted, 0.10),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
            q90: quantile(&sorted, 0.90),
            norms,
        })
    }

    /// `state_index,residual_norm`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["state_index", "residual_norm"])?;
        for (i, r) in self.norms.iter().enumerate() {
            w.write_record([i.to_string(), r.to_string()])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<consistency>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn consistency_stats(model: &Seq2SeqModel, states: &HiddenStateSet) -> Result<ConsistencyReport> {
    let norms: Vec<f64> = states
        .states
        .par_iter()
        .map(|s| residual(model, s).map(|r| r.norm()))
        .collect::<Result<_>>()?;
    ConsistencyReport::from_norms(norms)
}

/// Both computation paths of the two predictions of `x_{m+2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundIdentityReport {
    /// `P(F2(s_m, F2(s_m, 0)))`.
    pub first_round_nested: Vector,
    /// Second prediction of round 1.
    pub first_round_mechanics: Vector,
    /// `P(F2(F1(P(F2(s_m, 0)), s_m), 0))`.
    pub second_round_nested: Vector,
    /// First prediction of round 2.
    pub second_round_mechanics: Vector,
    /// Largest relative component difference between the two paths of each identity.
    pub first_identity_error: f64,
    pub second_identity_error: f64,
    /// `|x_{m+2}^1 - x_{m+2}^2|`, zero only for an ideally trained network.
    pub gap: f64,
}

impl RoundIdentityReport {
    pub fn identities_hold(&self, tol: f64) -> bool {
        self.first_identity_error <= tol && self.second_identity_error <= tol
    }
}

fn max_relative_diff(a: &Vector, b: &Vector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .map(|r| if r.is_nan() { 0.0 } else { r })
        .fold(0.0, f64::max)
}

pub fn verify_round_identities(model: &Seq2SeqModel, xs: &[Vector]) -> Result<RoundIdentityReport> {
    let k = model.dims.k.max(2);
    let rounds = ew_single_step_rounds(model, xs, k, 2)?;
    let s_m = encode_last(&model.encoder, xs)?;
    let zero = Vector::zeros(model.dims.n2);
    let f2 = |s: &Vector, sigma: &Vector| cell_step(&model.decoder, s, sigma);
    let p = |sigma: &Vector| predictor_apply(&model.predictor, sigma);

    let sigma1 = f2(&s_m, &zero)?;
    let first_round_nested = p(&f2(&s_m, &sigma1)?)?;
    let s_next = cell_step(&model.encoder, &p(&sigma1)?, &s_m)?;
    let second_round_nested = p(&f2(&s_next, &zero)?)?;

    let first_round_mechanics = rounds[0][1].clone();
    let second_round_mechanics = rounds[1][0].clone();
    Ok(RoundIdentityReport {
        first_identity_error: max_relative_diff(&first_round_nested, &first_round_mechanics),
        second_identity_error: max_relative_diff(&second_round_nested, &second_round_mechanics),
        gap: first_round_mechanics.sub(&second_round_mechanics)?.norm(),
        first_round_nested,
        first_round_mechanics,
        second_round_nested,
        second_round_mechanics,
    })
}

/// Mean squared residual norm over `states` and its gradient with respect
/// to the decoder. Every occurrence of F2 is differentiated, including the
/// one feeding the predictor inside F1's input.
pub fn residual_objective_and_grad(
    model: &Seq2SeqModel,
    states: &[Vector],
) -> Result<(f64, RnnCellParams)> {
    if states.is_empty() {
        return Err(Error::Empty("residual objective"));
    }
    let n1 = model.dims.n1;
    for s in states {
        if s.dim() != n1 {
            return Err(Error::DimensionMismatch {
                op: "residual",
                left: (n1, 1),
                right: (s.dim(), 1),
            });
        }
    }
    let scale = 1.0 / states.len() as f64;
    let parts: Vec<(f64, RnnCellParams)> = states
        .par_iter()
        .map(|s| residual_term(model, s.as_slice(), scale))
        .collect();
    let mut grad = model.decoder.zeros_like();
    let mut total = 0.0;
    for (obj, g) in &parts {
        total += obj;
        for (acc, gi) in grad.tensors_mut().into_iter().zip(g.tensors()) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok((total, grad))
}

fn residual_term(model: &Seq2SeqModel, s: &[f64], scale: f64) -> (f64, RnnCellParams) {
    let dec = &model.decoder;
    let zero2 = vec![0.0; model.dims.n2];
    let sigma1 = dec.step_raw(s, &zero2);
    let lhs = dec.step_raw(s, &sigma1);
    let x_next = model.predictor.apply_raw(&sigma1);
    let s_next = model.encoder.step_raw(&x_next, s);
    let rhs = dec.step_raw(&s_next, &zero2);
    let r: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let obj = scale * r.iter().map(|v| v * v).sum::<f64>();

    let mut grad = dec.zeros_like();
    let g_lhs: Vec<f64> = r.iter().map(|v| 2.0 * scale * v).collect();
    let g_rhs: Vec<f64> = g_lhs.iter().map(|v| -v).collect();

    let mut g_sigma1 = vec![0.0; model.dims.n2];
    let dz_lhs = cell_backward(&mut grad, s, &sigma1, &lhs, &g_lhs);
    dec.w_rec.gemv_t_acc(&dz_lhs, &mut g_sigma1);

    let dz_rhs = cell_backward(&mut grad, &s_next, &zero2, &rhs, &g_rhs);
    let mut g_s_next = vec![0.0; model.dims.n1];
    dec.w_in.gemv_t_acc(&dz_rhs, &mut g_s_next);
    let dz_enc: Vec<f64> = g_s_next
        .iter()
        .zip(&s_next)
        .map(|(g, h)| g * (1.0 - h * h))
        .collect();
    let mut g_x = vec![0.0; model.dims.d];
    model.encoder.w_in.gemv_t_acc(&dz_enc, &mut g_x);
    model.predictor.w.gemv_t_acc(&g_x, &mut g_sigma1);

    cell_backward(&mut grad, s, &zero2, &sigma1, &g_sigma1);
    (obj, grad)
}

/// Full-batch Adam on the mean squared residual over `states`, updating only
/// the decoder. Returns the tuned model and the objective before each step
/// followed by the final objective (`steps + 1` entries).
pub fn tune_decoder(
    model: &Seq2SeqModel,
    states: &HiddenStateSet,
    steps: usize,
    config: &AdamConfig,
) -> Result<(Seq2SeqModel, Vec<f64>)> {
    if steps == 0 {
        return Err(Error::InvalidConfig("tuning steps must be >= 1".into()));
    }
    let mut tuned = model.clone();
    let mut adam = AdamState::new(&tuned.decoder);
    let mut history = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (obj, grad) = residual_objective_and_grad(&tuned, &states.states)?;
        history.push(obj);
        adam_step(&mut tuned.decoder, &grad, &mut adam, config)?;
    }
    history.push(residual_objective_and_grad(&tuned, &states.states)?.0);
    Ok((tuned, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Seq2SeqDims;
    use crate::signals::{build_dataset, DatasetSpec};

    fn tiny(seed: u64) -> Seq2SeqModel {
        let dims = Seq2SeqDims { d: 1, n1: 2, n2: 2, m: 4, k: 3 };
        Seq2SeqModel::init(dims, &mut Rng::new(seed))
    }

    fn tanh_step(w_in: &[f64], w_rec: &[f64], b: &[f64], x: &[f64], s: &[f64]) -> Vec<f64> {
        let n = b.len();
        (0..n)
            .map(|i| {
                let mut z = b[i];
                for (j, xj) in x.iter().enumerate() {
                    z += w_in[i * x.len() + j] * xj;
                }
                for (j, sj) in s.iter().enumerate() {
                    z += w_rec[i * n + j] * sj;
                }
                z.tanh()
            })
            .collect()
    }

    /// Hand-rolled nested composition, independent of the nn-core ops.
    fn oracle(model: &Seq2SeqModel, s: &[f64]) -> Vec<f64> {
        let e = &model.encoder;
        let d = &model.decoder;
        let f2 = |x: &[f64], sig: &[f64]| {
            tanh_step(d.w_in.as_slice(), d.w_rec.as_slice(), d.b.as_slice(), x, sig)
        };
        let zero = vec![0.0; model.dims.n2];
        let sig1 = f2(s, &zero);
        let lhs = f2(s, &sig1);
        let pw = model.predictor.w.as_slice();
        let x: Vec<f64> = (0..model.dims.d)
            .map(|r| {
                model.predictor.b[r]
                    + (0..model.dims.n2).map(|c| pw[r * model.dims.n2 + c] * sig1[c]).sum::<f64>()
            })
            .collect();
        let s2 = tanh_step(e.w_in.as_slice(), e.w_rec.as_slice(), e.b.as_slice(), &x, s);
        let rhs = f2(&s2, &zero);
        lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect()
    }

    #[test]
    fn residual_zero_model() {
        let model = Seq2SeqModel::zeros(tiny(0).dims);
        let r = residual(&model, &Vector::from_vec(vec![0.3, -0.8])).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn residual_matches_oracle() {
        let mut rng = Rng::new(99);
        for seed in 0..20 {
            let model = tiny(seed);
            let s = Vector::from_vec(vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]);
            let r = residual(&model, &s).unwrap();
            assert_eq!(r, residual(&model, &s).unwrap());
            for (a, b) in r.as_slice().iter().zip(oracle(&model, s.as_slice())) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300).max(b.abs()).max(1.0));
            }
        }
        assert!(residual(&tiny(0), &Vector::zeros(3)).is_err());
    }

    fn small_dataset() -> Dataset {
        let mut spec = DatasetSpec { per_kind: 60, m: 4, k: 3, ..DatasetSpec::paper() };
        spec.sine.n_points = 300;
        spec.trapezoid.n_points = 300;
        build_dataset(&spec, 17).unwrap().1
    }

    #[test]
    fn harvest_basics() {
        let ds = small_dataset();
        let model = tiny(4);
        let one = harvest_states(&model.encoder, &ds, 1, false, &mut Rng::new(2)).unwrap();
        assert_eq!(one.len(), 1);
        let idx = one.origins[0].sample_index;
        assert_eq!(one.states[0], encode(&model.encoder, &ds.samples[idx].input).unwrap()[3]);

        let a = harvest_states(&model.encoder, &ds, 100, false, &mut Rng::new(5)).unwrap();
        let b = harvest_states(&model.encoder, &ds, 100, false, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.states.iter().all(|s| s.as_slice().iter().all(|v| v.abs() < 1.0)));

        let wide = harvest_states(&model.encoder, &ds, 7, true, &mut Rng::new(5)).unwrap();
        assert_eq!(wide.len(), 7);
        assert_eq!(
            wide.origins.iter().map(|o| o.position).collect::<Vec<_>>(),
            vec![4, 5, 6, 4, 5, 6, 4]
        );
        assert!(harvest_states(&model.encoder, &Dataset::default(), 3, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn stats_shapes() {
        let ds = small_dataset();
        let model = tiny(6);
        let st = harvest_states(&model.encoder, &ds, 50, false, &mut Rng::new(1)).unwrap();
        let rep = consistency_stats(&model, &st).unwrap();
        assert_eq!(rep.count, 50);
        assert!(rep.norms.iter().all(|r| *r >= 0.0));
        assert!(rep.min <= rep.q25 && rep.q25 <= rep.median && rep.median <= rep.q75 && rep.q75 <= rep.max);
        let zero = Seq2SeqModel::zeros(model.dims);
        assert!(consistency_stats(&zero, &st).unwrap().norms.iter().all(|r| *r == 0.0));
        assert!(rep.to_csv().unwrap().starts_with("state_index,residual_norm\n"));
    }

    #[test]
    fn quantile_interpolates() {
        let r = ConsistencyReport::from_norms(vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(r.median, 2.5);
        assert_eq!(r.max, 4.0);
        assert!((r.q25 - 1.75).abs() < 1e-15);
    }

    #[test]
    fn round_identities_hold_for_random_params() {
        let mut rng = Rng::new(3);
        for seed in 0..10 {
            let model = tiny(seed);
            let xs: Vec<Vector> = (0..4).map(|_| Vector::scalar(rng.uniform(-1.0, 1.0))).collect();
            let rep = verify_round_identities(&model, &xs).unwrap();
            assert!(rep.identities_hold(1e-12), "{rep:?}");
        }
        let zero = Seq2SeqModel::zeros(tiny(0).dims);
        let rep = verify_round_identities(&zero, &vec![Vector::scalar(0.4); 4]).unwrap();
        assert_eq!(rep.gap, 0.0);
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        for seed in 0..5 {
            let model = tiny(seed);
            let states: Vec<Vector> = (0..6)
                .map(|_| Vector::from_vec(vec![rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)]))
                .collect();
            let (_, grad) = residual_objective_and_grad(&model, &states).unwrap();
            let analytic = grad.tensors().concat();
            let eps = 1e-5;
            let mut probe = model.clone();
            let mut flat = 0;
            for t in 0..3 {
                for i in 0..model.decoder.tensors()[t].len() {
                    let orig = model.decoder.tensors()[t][i];
                    probe.decoder.tensors_mut()[t][i] = orig + eps;
                    let up = residual_objective_and_grad(&probe, &states).unwrap().0;
                    probe.decoder.tensors_mut()[t][i] = orig - eps;
                    let down = residual_objective_and_grad(&probe, &states).unwrap().0;
                    probe.decoder.tensors_mut()[t][i] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let rel = crate::train::relative_discrepancy(analytic[flat], numeric);
                    assert!(rel < 1e-4, "seed {seed} tensor {t} idx {i}: {} vs {numeric}", analytic[flat]);
                    flat += 1;
                }
            }
        }
    }

    #[test]
    fn tuning_freezes_encoder_and_predictor() {
        let ds = small_dataset();
        let model = tiny(8);
        let st = harvest_states(&model.encoder, &ds, 40, false, &mut Rng::new(1)).unwrap();
        let cfg = AdamConfig { learning_rate: 1e-4, ..AdamConfig::default() };
        let (tuned, hist) = tune_decoder(&model, &st, 30, &cfg).unwrap();
        assert_eq!(hist.len(), 31);
        assert_eq!(tuned.encoder, model.encoder);
        assert_eq!(tuned.predictor, model.predictor);
        assert_ne!(tuned.decoder, model.decoder);
        assert!(hist.windows(2).all(|w| w[1] <= w[0]), "{hist:?}");
    }

    #[test]
    fn tuning_zero_model_is_stationary() {
        let model = Seq2SeqModel::zeros(tiny(0).dims);
        let st = HiddenStateSet {
            states: vec![Vector::from_vec(vec![0.2, -0.4]); 3],
            origins: vec![],
        };
        let (tuned, hist) = tune_decoder(&model, &st, 5, &AdamConfig::default()).unwrap();
        assert!(hist.iter().all(|h| *h == 0.0));
        assert_eq!(tuned, model);
    }
}
