//! Vanilla tanh recurrent cells, the affine predictor head, and the forward
//! passes of the two-network seq2seq predictor and the memoryless single-cell
//! predictor.

mod io;

pub use io::{ModelFile, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, Vector};

/// Uniform access to every trainable array of a parameter bundle, in a fixed
/// order. Gradients and optimizer state use the same layout.
pub trait Parameterized: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, all entries zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// `s' = tanh(w_in x + w_rec s + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub b: Vector,
}

impl RnnCellParams {
    pub fn new(w_in: Matrix, w_rec: Matrix, b: Vector) -> Result<Self> {
        let n = w_in.rows();
        if w_rec.shape() != (n, n) || b.dim() != n {
            return Err(Error::DimensionMismatch {
                op: "RnnCellParams::new",
                left: w_in.shape(),
                right: w_rec.shape(),
            });
        }
        Ok(RnnCellParams { w_in, w_rec, b })
    }

    pub fn zeros(n: usize, d_in: usize) -> Self {
        RnnCellParams {
            w_in: Matrix::zeros(n, d_in),
            w_rec: Matrix::zeros(n, n),
            b: Vector::zeros(n),
        }
    }

    /// Every entry uniform in `±1/sqrt(d_in + n)`, the fan-in of one unit.
    pub fn init(n: usize, d_in: usize, rng: &mut Rng) -> Self {
        let w_in = Matrix::uniform(n, d_in, 1.0 / (d_in as f64).sqrt(), rng);
        let bound = 1.0 / (n as f64).sqrt();
        let w_rec = Matrix::uniform(n, n, bound, rng);
        let b = Vector::from_vec((0..n).map(|_| rng.uniform(-bound, bound)).collect());
        RnnCellParams { w_in, w_rec, b }
    }

    pub fn state_dim(&self) -> usize {
        self.w_in.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.cols()
    }

    /// Unchecked step on raw slices.
    pub(crate) fn step_raw(&self, x: &[f64], s: &[f64]) -> Vec<f64> {
        let mut z = self.b.as_slice().to_vec();
        self.w_in.gemv_acc(x, &mut z);
        self.w_rec.gemv_acc(s, &mut z);
        for v in &mut z {
            *v = v.tanh();
        }
        z
    }
}

impl Parameterized for RnnCellParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w_in.as_slice(), self.w_rec.as_slice(), self.b.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_in.as_mut_slice(),
            self.w_rec.as_mut_slice(),
            self.b.as_mut_slice(),
        ]
    }
}

/// Affine head `x = w s + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub w: Matrix,
    pub b: Vector,
}

impl PredictorParams {
    pub fn new(w: Matrix, b: Vector) -> Result<Self> {
        if w.rows() != b.dim() {
            return Err(Error::DimensionMismatch {
                op: "PredictorParams::new",
                left: w.shape(),
                right: (b.dim(), 1),
            });
        }
        Ok(PredictorParams { w, b })
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        PredictorParams {
            w: Matrix::zeros(d, n),
            b: Vector::zeros(d),
        }
    }

    pub fn init(d: usize, n: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        let w = Matrix::uniform(d, n, bound, rng);
        let b = Vector::from_vec((0..d).map(|_| rng.uniform(-bound, bound)).collect());
        PredictorParams { w, b }
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn apply_raw(&self, s: &[f64]) -> Vec<f64> {
        let mut out = self.b.as_slice().to_vec();
        self.w.gemv_acc(s, &mut out);
        out
    }
}

impl Parameterized for PredictorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), self.b.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqDims {
    pub d: usize,
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub k: usize,
}

impl Seq2SeqDims {
    /// Neuron ratio `n1 / n2`.
    pub fn ratio(&self) -> f64 {
        self.n1 as f64 / self.n2 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlDims {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub k: usize,
}

/// Encoder F1, decoder F2 (fed the replicated context) and predictor P.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub encoder: RnnCellParams,
    pub decoder: RnnCellParams,
    pub predictor: PredictorParams,
    pub dims: Seq2SeqDims,
}

impl Seq2SeqModel {
    pub fn init(dims: Seq2SeqDims, rng: &mut Rng) -> Self {
        let encoder = RnnCellParams::init(dims.n1, dims.d, rng);
        let decoder = RnnCellParams::init(dims.n2, dims.n1, rng);
        let predictor = PredictorParams::init(dims.d, dims.n2, rng);
        Seq2SeqModel {
            encoder,
            decoder,
            predictor,
            dims,
        }
    }

    pub fn zeros(dims: Seq2SeqDims) -> Self {
        Seq2SeqModel {
            encoder: RnnCellParams::zeros(dims.n1, dims.d),
            decoder: RnnCellParams::zeros(dims.n2, dims.n1),
            predictor: PredictorParams::zeros(dims.d, dims.n2),
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Seq2SeqDims { d, n1, n2, .. } = self.dims;
        check_cell("encoder", &self.encoder, n1, d)?;
        check_cell("decoder", &self.decoder, n2, n1)?;
        check_predictor(&self.predictor, d, n2)
    }
}

impl Parameterized for Seq2SeqModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t.extend(self.predictor.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t.extend(self.predictor.tensors_mut());
        t
    }
}

/// Single cell F and predictor P driven in closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct MlModel {
    pub cell: RnnCellParams,
    pub predictor: PredictorParams,
    pub dims: MlDims,
}

impl MlModel {
    pub fn init(dims: MlDims, rng: &mut Rng) -> Self {
        let cell = RnnCellParams::init(dims.n, dims.d, rng);
        let predictor = PredictorParams::init(dims.d, dims.n, rng);
        MlModel {
            cell,
            predictor,
            dims,
        }
    }

    pub fn zeros(dims: MlDims) -> Self {
        MlModel {
            cell: RnnCellParams::zeros(dims.n, dims.d),
            predictor: PredictorParams::zeros(dims.d, dims.n),
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_cell("cell", &self.cell, self.dims.n, self.dims.d)?;
        check_predictor(&self.predictor, self.dims.d, self.dims.n)
    }
}

impl Parameterized for MlModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.cell.tensors();
        t.extend(self.predictor.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.cell.tensors_mut();
        t.extend(self.predictor.tensors_mut());
        t
    }
}

fn check_cell(name: &str, cell: &RnnCellParams, n: usize, d_in: usize) -> Result<()> {
    if cell.w_in.shape() != (n, d_in) || cell.w_rec.shape() != (n, n) || cell.b.dim() != n {
        return Err(Error::InvalidConfig(format!(
            "{name}: expected w_in {n}x{d_in}, w_rec {n}x{n}, b {n}; got {:?}, {:?}, {}",
            cell.w_in.shape(),
            cell.w_rec.shape(),
            cell.b.dim()
        )));
    }
    Ok(())
}

fn check_predictor(p: &PredictorParams, d: usize, n: usize) -> Result<()> {
    if p.w.shape() != (d, n) || p.b.dim() != d {
        return Err(Error::InvalidConfig(format!(
            "predictor: expected w {d}x{n}, b {d}; got {:?}, {}",
            p.w.shape(),
            p.b.dim()
        )));
    }
    Ok(())
}

fn check_dim(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch {
            op,
            left: (want, 1),
            right: (got, 1),
        });
    }
    Ok(())
}

fn check_inputs(op: &'static str, xs: &[Vector], d: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Empty(op));
    }
    xs.iter().try_for_each(|x| check_dim(op, x.dim(), d))
}

pub fn cell_step(cell: &RnnCellParams, x: &Vector, s: &Vector) -> Result<Vector> {
    check_dim("cell_step", x.dim(), cell.input_dim())?;
    check_dim("cell_step", s.dim(), cell.state_dim())?;
    Ok(Vector::from_vec(cell.step_raw(x.as_slice(), s.as_slice())))
}

/// States `s_1..s_m` starting from `s_0 = 0`.
pub fn encode(encoder: &RnnCellParams, xs: &[Vector]) -> Result<Vec<Vector>> {
    check_inputs("encode", xs, encoder.input_dim())?;
    let mut s = vec![0.0; encoder.state_dim()];
    Ok(xs
        .iter()
        .map(|x| {
            s = encoder.step_raw(x.as_slice(), &s);
            Vector::from_vec(s.clone())
        })
        .collect())
}

/// Final encoder state only, without keeping the intermediate ones.
pub fn encode_last(encoder: &RnnCellParams, xs: &[Vector]) -> Result<Vector> {
    check_inputs("encode", xs, encoder.input_dim())?;
    let s = xs.iter().fold(vec![0.0; encoder.state_dim()], |s, x| {
        encoder.step_raw(x.as_slice(), &s)
    });
    Ok(Vector::from_vec(s))
}

/// Decoder states `σ_1..σ_k` with `σ_0 = 0` and the same context fed at every step.
pub fn decode_traditional(model: &Seq2SeqModel, s_ctx: &Vector, k: usize) -> Result<Vec<Vector>> {
    check_dim("decode_traditional", s_ctx.dim(), model.decoder.input_dim())?;
    if k == 0 {
        return Err(Error::Empty("decode_traditional"));
    }
    let mut sigma = vec![0.0; model.decoder.state_dim()];
    Ok((0..k)
        .map(|_| {
            sigma = model.decoder.step_raw(s_ctx.as_slice(), &sigma);
            Vector::from_vec(sigma.clone())
        })
        .collect())
}

pub fn predictor_apply(p: &PredictorParams, state: &Vector) -> Result<Vector> {
    check_dim("predictor_apply", state.dim(), p.input_dim())?;
    Ok(Vector::from_vec(p.apply_raw(state.as_slice())))
}

pub fn predict_traditional(model: &Seq2SeqModel, xs: &[Vector], k: usize) -> Result<Vec<Vector>> {
    let ctx = encode_last(&model.encoder, xs)?;
    predict_from_context(model, &ctx, k)
}

fn predict_from_context(model: &Seq2SeqModel, ctx: &Vector, k: usize) -> Result<Vec<Vector>> {
    decode_traditional(model, ctx, k)?
        .iter()
        .map(|sigma| predictor_apply(&model.predictor, sigma))
        .collect()
}

/// Expanding-window recursion: every round appends all `k` predictions to the
/// input and runs the network on the grown sequence. Returns `p * k` points.
pub fn predict_traditional_rounds(
    model: &Seq2SeqModel,
    xs: &[Vector],
    k: usize,
    p: usize,
) -> Result<Vec<Vector>> {
    if p == 0 {
        return Err(Error::InvalidConfig("prediction rounds must be >= 1".into()));
    }
    // The encoder is causal, so continuing from the last state is identical to
    // re-encoding the grown sequence from scratch.
    let mut ctx = encode_last(&model.encoder, xs)?;
    let mut out = Vec::with_capacity(k * p);
    for round in 0..p {
        let preds = predict_from_context(model, &ctx, k)?;
        if round + 1 < p {
            ctx = preds.iter().fold(ctx, |s, x| {
                Vector::from_vec(model.encoder.step_raw(x.as_slice(), s.as_slice()))
            });
        }
        out.extend(preds);
    }
    Ok(out)
}

/// Round mechanics of the decoder-dependence derivation: round `j + 1`
/// appends only the first prediction of round `j`. Returns every round's
/// full list of `k` predictions.
pub fn ew_single_step_rounds(
    model: &Seq2SeqModel,
    xs: &[Vector],
    k: usize,
    rounds: usize,
) -> Result<Vec<Vec<Vector>>> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be >= 1".into()));
    }
    let mut input: Vec<Vector> = xs.to_vec();
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let preds = predict_traditional(model, &input, k)?;
        input.push(preds[0].clone());
        out.push(preds);
    }
    Ok(out)
}

/// Memoryless closed-loop rollout: after encoding, each prediction
/// `P(s)` is fed straight back as the next input, `s <- F(P(s), s)`. Only the
/// current state is carried.
pub fn ml_rollout(model: &MlModel, xs: &[Vector], horizon: usize) -> Result<Vec<Vector>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1".into()));
    }
    let mut s = encode_last(&model.cell, xs)?.into_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = model.predictor.apply_raw(&s);
        s = model.cell.step_raw(&x, &s);
        out.push(Vector::from_vec(x));
    }
    Ok(out)
}

/// Anything that forecasts `horizon` points from an input window.
pub trait Forecaster: Sync {
    fn forecast(&self, xs: &[Vector], horizon: usize) -> Result<Vec<Vector>>;
}

impl Forecaster for MlModel {
    fn forecast(&self, xs: &[Vector], horizon: usize) -> Result<Vec<Vector>> {
        ml_rollout(self, xs, horizon)
    }
}

/// Runs `ceil(horizon / k)` expanding-window rounds and truncates.
impl Forecaster for Seq2SeqModel {
    fn forecast(&self, xs: &[Vector], horizon: usize) -> Result<Vec<Vector>> {
        let k = self.dims.k;
        let p = horizon.div_ceil(k).max(1);
        let mut out = predict_traditional_rounds(self, xs, k, p)?;
        out.truncate(horizon);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TANH_HALF: f64 = 0.46211715726000974;

    fn scalar_cell(w_in: f64, w_rec: f64, b: f64) -> RnnCellParams {
        RnnCellParams::new(
            Matrix::from_rows(&[&[w_in]]).unwrap(),
            Matrix::from_rows(&[&[w_rec]]).unwrap(),
            Vector::scalar(b),
        )
        .unwrap()
    }

    fn scalar_predictor(w: f64, b: f64) -> PredictorParams {
        PredictorParams::new(Matrix::from_rows(&[&[w]]).unwrap(), Vector::scalar(b)).unwrap()
    }

    fn scalar_seq2seq() -> Seq2SeqModel {
        Seq2SeqModel {
            encoder: scalar_cell(1.0, 1.0, 0.0),
            decoder: scalar_cell(0.7, -0.4, 0.1),
            predictor: scalar_predictor(1.5, -0.2),
            dims: Seq2SeqDims {
                d: 1,
                n1: 1,
                n2: 1,
                m: 2,
                k: 2,
            },
        }
    }

    fn xs(vals: &[f64]) -> Vec<Vector> {
        vals.iter().map(|&v| Vector::scalar(v)).collect()
    }

    fn random_seq2seq(seed: u64) -> Seq2SeqModel {
        let dims = Seq2SeqDims {
            d: 2,
            n1: 3,
            n2: 4,
            m: 5,
            k: 3,
        };
        Seq2SeqModel::init(dims, &mut Rng::new(seed))
    }

    fn random_inputs(seed: u64, m: usize, d: usize) -> Vec<Vector> {
        let mut rng = Rng::new(seed);
        (0..m)
            .map(|_| Vector::from_vec((0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()))
            .collect()
    }

    #[test]
    fn cell_step_examples() {
        let z = RnnCellParams::zeros(3, 2);
        let out = cell_step(&z, &Vector::from_vec(vec![4.0, -1.0]), &Vector::from_vec(vec![0.3; 3])).unwrap();
        assert_eq!(out.as_slice(), &[0.0; 3]);
        let c = scalar_cell(1.0, 1.0, 0.0);
        assert_eq!(cell_step(&c, &Vector::scalar(1.0), &Vector::scalar(-1.0)).unwrap()[0], 0.0);
        let c = scalar_cell(1.0, 0.0, 0.0);
        let out = cell_step(&c, &Vector::scalar(0.5), &Vector::scalar(0.0)).unwrap();
        assert!((out[0] - TANH_HALF).abs() < 1e-14);
    }

    #[test]
    fn cell_step_dimension_errors() {
        let c = RnnCellParams::zeros(3, 2);
        assert!(cell_step(&c, &Vector::zeros(3), &Vector::zeros(3)).is_err());
        assert!(cell_step(&c, &Vector::zeros(2), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn encode_examples() {
        let z = RnnCellParams::zeros(2, 1);
        assert!(encode(&z, &xs(&[1.0, 2.0, 3.0])).unwrap().iter().all(|s| s.as_slice() == [0.0, 0.0]));

        let c = scalar_cell(1.0, 1.0, 0.0);
        let one = encode(&c, &xs(&[0.5])).unwrap();
        assert_eq!(one, vec![cell_step(&c, &Vector::scalar(0.5), &Vector::scalar(0.0)).unwrap()]);

        let two = encode(&c, &xs(&[0.5, 0.5])).unwrap();
        assert!((two[0][0] - 0.462117).abs() < 1e-6);
        assert!((two[1][0] - 0.962117f64.tanh()).abs() < 1e-6);
        // tanh(0.962117) = 0.7452197 (scalar oracle)
        assert!((two[1][0] - 0.7452197423298184).abs() < 1e-12);
        assert!(matches!(encode(&c, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn decode_examples() {
        let mut model = random_seq2seq(1);
        let ctx = Vector::from_vec(vec![0.1, -0.5, 0.3]);
        let k1 = decode_traditional(&model, &ctx, 1).unwrap();
        assert_eq!(k1[0], cell_step(&model.decoder, &ctx, &Vector::zeros(4)).unwrap());
        let d10 = decode_traditional(&model, &ctx, 10).unwrap();
        let d40 = decode_traditional(&model, &ctx, 40).unwrap();
        assert_eq!(&d40[..10], &d10[..]);
        model.decoder = RnnCellParams::zeros(4, 3);
        assert!(decode_traditional(&model, &ctx, 5).unwrap().iter().all(|s| s.norm() == 0.0));
        assert!(decode_traditional(&model, &Vector::zeros(2), 5).is_err());
    }

    #[test]
    fn predictor_examples() {
        let p = PredictorParams::new(Matrix::zeros(1, 2), Vector::scalar(0.7)).unwrap();
        assert_eq!(predictor_apply(&p, &Vector::from_vec(vec![3.0, 4.0])).unwrap()[0], 0.7);
        let p = scalar_predictor(1.0, 0.0);
        assert_eq!(predictor_apply(&p, &Vector::scalar(0.3)).unwrap()[0], 0.3);
        let p = PredictorParams::new(Matrix::from_rows(&[&[2.0, 0.0]]).unwrap(), Vector::scalar(1.0)).unwrap();
        assert_eq!(predictor_apply(&p, &Vector::from_vec(vec![0.5, 0.9])).unwrap()[0], 2.0);
        assert!(predictor_apply(&p, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn predict_traditional_zero_model_gives_bias() {
        let dims = Seq2SeqDims { d: 1, n1: 3, n2: 2, m: 4, k: 3 };
        let mut model = Seq2SeqModel::zeros(dims);
        model.predictor.b = Vector::scalar(0.25);
        let out = predict_traditional(&model, &xs(&[1.0, 2.0]), 3).unwrap();
        assert_eq!(out, vec![Vector::scalar(0.25); 3]);
        let out = predict_traditional_rounds(&model, &xs(&[1.0, 2.0]), 3, 4).unwrap();
        assert_eq!(out, vec![Vector::scalar(0.25); 12]);
    }

    #[test]
    fn predict_traditional_is_composition() {
        let model = random_seq2seq(3);
        let x = random_inputs(4, 5, 2);
        let ctx = encode(&model.encoder, &x).unwrap().pop().unwrap();
        let manual: Vec<Vector> = decode_traditional(&model, &ctx, 3)
            .unwrap()
            .iter()
            .map(|s| predictor_apply(&model.predictor, s).unwrap())
            .collect();
        assert_eq!(predict_traditional(&model, &x, 3).unwrap(), manual);
    }

    #[test]
    fn predict_traditional_scalar_trace() {
        let model = scalar_seq2seq();
        let s2 = (0.5 + TANH_HALF).tanh();
        let sig1 = (0.7 * s2 + 0.1).tanh();
        let sig2 = (0.7 * s2 - 0.4 * sig1 + 0.1).tanh();
        let out = predict_traditional(&model, &xs(&[0.5, 0.5]), 2).unwrap();
        assert!((out[0][0] - (1.5 * sig1 - 0.2)).abs() < 1e-6);
        assert!((out[1][0] - (1.5 * sig2 - 0.2)).abs() < 1e-6);
    }

    #[test]
    fn rounds_reduce_and_extend() {
        let model = random_seq2seq(5);
        let x = random_inputs(6, 5, 2);
        assert_eq!(
            predict_traditional_rounds(&model, &x, 3, 1).unwrap(),
            predict_traditional(&model, &x, 3).unwrap()
        );

        let model = scalar_seq2seq();
        let x = xs(&[0.5, -0.2, 0.1]);
        let two = predict_traditional_rounds(&model, &x, 1, 2).unwrap();
        let first = predict_traditional(&model, &x, 1).unwrap();
        let mut extended = x.clone();
        extended.push(first[0].clone());
        let second = predict_traditional(&model, &extended, 1).unwrap();
        assert_eq!(two, vec![first[0].clone(), second[0].clone()]);
    }

    #[test]
    fn ew_rounds_match_nested_closed_forms() {
        let model = random_seq2seq(9);
        let x = random_inputs(10, 5, 2);
        let rounds = ew_single_step_rounds(&model, &x, 3, 2).unwrap();
        assert_eq!(rounds[0], predict_traditional(&model, &x, 3).unwrap());

        let s_m = encode_last(&model.encoder, &x).unwrap();
        let zero = Vector::zeros(model.dims.n2);
        let f2 = |s: &Vector, sig: &Vector| cell_step(&model.decoder, s, sig).unwrap();
        let p = |s: &Vector| predictor_apply(&model.predictor, s).unwrap();
        let first_round = p(&f2(&s_m, &f2(&s_m, &zero)));
        assert_eq!(rounds[0][1], first_round);
        let s_next = cell_step(&model.encoder, &p(&f2(&s_m, &zero)), &s_m).unwrap();
        let second_round = p(&f2(&s_next, &zero));
        assert_eq!(rounds[1][0], second_round);
    }

    #[test]
    fn ml_rollout_examples() {
        let dims = MlDims { d: 1, n: 4, m: 3, k: 2 };
        let mut model = MlModel::zeros(dims);
        model.predictor.b = Vector::scalar(-0.3);
        assert_eq!(ml_rollout(&model, &xs(&[1.0]), 5).unwrap(), vec![Vector::scalar(-0.3); 5]);

        let model = MlModel {
            cell: scalar_cell(1.0, 1.0, 0.0),
            predictor: scalar_predictor(1.0, 0.0),
            dims: MlDims { d: 1, n: 1, m: 1, k: 2 },
        };
        let out = ml_rollout(&model, &xs(&[0.5]), 2).unwrap();
        assert!((out[0][0] - 0.462117).abs() < 1e-6);
        // tanh(2 tanh(0.5)) = 0.7278944 (scalar oracle)
        assert!((out[1][0] - 0.7278944044432927).abs() < 1e-12);
        assert!((out[1][0] - (2.0 * TANH_HALF).tanh()).abs() < 1e-15);
    }

    #[test]
    fn ml_rollout_prefix() {
        let dims = MlDims { d: 2, n: 5, m: 4, k: 3 };
        let model = MlModel::init(dims, &mut Rng::new(11));
        let x = random_inputs(12, 4, 2);
        let short = ml_rollout(&model, &x, 10).unwrap();
        let long = ml_rollout(&model, &x, 40).unwrap();
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn states_are_bounded() {
        let dims = Seq2SeqDims { d: 1, n1: 5, n2: 5, m: 6, k: 4 };
        let mut model = Seq2SeqModel::init(dims, &mut Rng::new(2));
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v *= 30.0;
            }
        }
        let x = xs(&[3.0, -2.0, 5.0, 0.0, 1.0, 9.0]);
        for s in encode(&model.encoder, &x).unwrap() {
            assert!(s.as_slice().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn forecaster_for_seq2seq_truncates() {
        let model = random_seq2seq(21);
        let x = random_inputs(22, 5, 2);
        let out = model.forecast(&x, 7).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(out[..], predict_traditional_rounds(&model, &x, 3, 3).unwrap()[..7]);
    }
}
