//! Hand-written reverse mode for both architectures.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::nn::{MlModel, Parameterized, RnnCellParams, Seq2SeqModel};
use crate::signals::Sample;

/// Cotangents laid out exactly like the owning parameter bundle.
pub type Gradients<M> = M;

/// Whether the closed-loop rollout differentiates through the fed-back
/// predictions or treats them as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Full,
    Detached,
}

/// Accumulates the parameter cotangents of one step `h = tanh(w_in x + w_rec s + b)`
/// given `dL/dh`, and returns the pre-activation cotangent.
pub(crate) fn cell_backward(
    grad: &mut RnnCellParams,
    x: &[f64],
    s_prev: &[f64],
    h: &[f64],
    gh: &[f64],
) -> Vec<f64> {
    let dz: Vec<f64> = gh.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
    grad.w_in.add_outer(&dz, x);
    grad.w_rec.add_outer(&dz, s_prev);
    for (b, d) in grad.b.as_mut_slice().iter_mut().zip(&dz) {
        *b += d;
    }
    dz
}

fn run_cell(cell: &RnnCellParams, inputs: &[Vector]) -> Vec<Vec<f64>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(vec![0.0; cell.state_dim()]);
    for x in inputs {
        let next = cell.step_raw(x.as_slice(), states.last().unwrap());
        states.push(next);
    }
    states
}

/// Backpropagates `gs`, the cotangent of the final state, through an
/// encoding pass whose states are `states[0..=m]`.
fn encoder_backward(
    cell: &RnnCellParams,
    grad: &mut RnnCellParams,
    inputs: &[Vector],
    states: &[Vec<f64>],
    mut gs: Vec<f64>,
) {
    for i in (1..states.len()).rev() {
        let dz = cell_backward(grad, inputs[i - 1].as_slice(), &states[i - 1], &states[i], &gs);
        gs = vec![0.0; cell.state_dim()];
        cell.w_rec.gemv_t_acc(&dz, &mut gs);
    }
}

fn check_sample(sample: &Sample, d: usize) -> Result<()> {
    if sample.input.is_empty() || sample.target.is_empty() {
        return Err(Error::Empty("sample"));
    }
    for v in sample.input.iter().chain(&sample.target) {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                op: "sample",
                left: (d, 1),
                right: (v.dim(), 1),
            });
        }
    }
    Ok(())
}

fn residuals(preds: &[Vec<f64>], target: &[Vector]) -> Vec<Vec<f64>> {
    let scale = 2.0 / target.len() as f64;
    preds
        .iter()
        .zip(target)
        .map(|(y, t)| y.iter().zip(t.as_slice()).map(|(a, b)| scale * (a - b)).collect())
        .collect()
}

/// Loss over `predict_traditional` with `k = target.len()` and its exact
/// gradient with respect to encoder, decoder and predictor.
pub fn bptt_seq2seq(model: &Seq2SeqModel, sample: &Sample) -> Result<(f64, Gradients<Seq2SeqModel>)> {
    check_sample(sample, model.dims.d)?;
    let k = sample.target.len();
    let enc_states = run_cell(&model.encoder, &sample.input);
    let ctx = enc_states.last().unwrap().clone();

    let mut dec_states = Vec::with_capacity(k + 1);
    dec_states.push(vec![0.0; model.decoder.state_dim()]);
    for _ in 0..k {
        let next = model.decoder.step_raw(&ctx, dec_states.last().unwrap());
        dec_states.push(next);
    }
    let preds: Vec<Vec<f64>> = dec_states[1..]
        .iter()
        .map(|s| model.predictor.apply_raw(s))
        .collect();
    let loss = loss_raw(&preds, &sample.target);
    let gys = residuals(&preds, &sample.target);

    let mut grad = model.zeros_like();
    let mut gctx = vec![0.0; model.dims.n1];
    let mut carry = vec![0.0; model.dims.n2];
    for i in (1..=k).rev() {
        let gy = &gys[i - 1];
        grad.predictor.w.add_outer(gy, &dec_states[i]);
        for (b, g) in grad.predictor.b.as_mut_slice().iter_mut().zip(gy) {
            *b += g;
        }
        let mut gs = carry;
        model.predictor.w.gemv_t_acc(gy, &mut gs);
        let dz = cell_backward(&mut grad.decoder, &ctx, &dec_states[i - 1], &dec_states[i], &gs);
        model.decoder.w_in.gemv_t_acc(&dz, &mut gctx);
        carry = vec![0.0; model.dims.n2];
        model.decoder.w_rec.gemv_t_acc(&dz, &mut carry);
    }
    encoder_backward(&model.encoder, &mut grad.encoder, &sample.input, &enc_states, gctx);
    Ok((loss, grad))
}

/// Loss over the closed-loop rollout of horizon `target.len()` and its
/// gradient, differentiating through both the carried state and the
/// fed-back prediction at every step.
pub fn bptt_ml(model: &MlModel, sample: &Sample) -> Result<(f64, Gradients<MlModel>)> {
    bptt_ml_with(model, sample, Feedback::Full)
}

pub fn bptt_ml_with(
    model: &MlModel,
    sample: &Sample,
    feedback: Feedback,
) -> Result<(f64, Gradients<MlModel>)> {
    check_sample(sample, model.dims.d)?;
    let (m, k) = (sample.input.len(), sample.target.len());
    let n = model.dims.n;

    // states[t] for t = 0..=m+k-1; the cell input at step t is x_t for t <= m
    // and the prediction made from states[t-1] afterwards.
    let mut states = run_cell(&model.cell, &sample.input);
    let mut preds: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let y = model.predictor.apply_raw(&states[m + j]);
        if j + 1 < k {
            let next = model.cell.step_raw(&y, &states[m + j]);
            states.push(next);
        }
        preds.push(y);
    }
    let loss = loss_raw(&preds, &sample.target);
    let gys = residuals(&preds, &sample.target);

    let mut grad = model.zeros_like();
    let mut gstates: Vec<Vec<f64>> = vec![vec![0.0; n]; states.len()];
    let mut fed_back: Vec<Vec<f64>> = vec![vec![0.0; model.dims.d]; k];
    for t in (1..states.len()).rev() {
        if t >= m {
            let j = t - m;
            let gy: Vec<f64> = gys[j].iter().zip(&fed_back[j]).map(|(a, b)| a + b).collect();
            grad.predictor.w.add_outer(&gy, &states[t]);
            for (b, g) in grad.predictor.b.as_mut_slice().iter_mut().zip(&gy) {
                *b += g;
            }
            model.predictor.w.gemv_t_acc(&gy, &mut gstates[t]);
        }
        let input: &[f64] = if t <= m {
            sample.input[t - 1].as_slice()
        } else {
            &preds[t - m - 1]
        };
        let gs = std::mem::take(&mut gstates[t]);
        let dz = cell_backward(&mut grad.cell, input, &states[t - 1], &states[t], &gs);
        model.cell.w_rec.gemv_t_acc(&dz, &mut gstates[t - 1]);
        if t > m && feedback == Feedback::Full {
            model.cell.w_in.gemv_t_acc(&dz, &mut fed_back[t - m - 1]);
        }
    }
    Ok((loss, grad))
}

fn loss_raw(preds: &[Vec<f64>], target: &[Vector]) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(target)
        .map(|(y, t)| y.iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / target.len() as f64
}

