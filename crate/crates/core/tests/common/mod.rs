#![allow(dead_code)]

use mlseq::linalg::{Rng, Vector};
use mlseq::nn::{MlDims, MlModel, Parameterized, Seq2SeqDims, Seq2SeqModel};
use mlseq::signals::{Sample, SignalKind};

pub fn random_sample(rng: &mut Rng, d: usize, m: usize, k: usize) -> Sample {
    let mut draw = |len: usize| -> Vec<Vector> {
        (0..len).map(|_| Vector::from_vec((0..d).map(|_| rng.gauss()).collect())).collect()
    };
    let input = draw(m);
    let target = draw(k);
    Sample { input, target, kind: SignalKind::Sine, p: 1 }
}

/// Random dims in `1..=5` with `m = 4`, `k = 3`.
pub fn tiny_seq2seq(seed: u64) -> (Seq2SeqModel, Sample) {
    let mut rng = Rng::new(seed);
    let dims = Seq2SeqDims {
        d: rng.index(1, 5),
        n1: rng.index(1, 5),
        n2: rng.index(1, 5),
        m: 4,
        k: 3,
    };
    let model = Seq2SeqModel::init(dims, &mut rng);
    let sample = random_sample(&mut rng, dims.d, 4, 3);
    (model, sample)
}

pub fn tiny_ml(seed: u64) -> (MlModel, Sample) {
    let mut rng = Rng::new(seed);
    let dims = MlDims { d: rng.index(1, 5), n: rng.index(1, 5), m: 4, k: 3 };
    let model = MlModel::init(dims, &mut rng);
    let sample = random_sample(&mut rng, dims.d, 4, 3);
    (model, sample)
}

pub fn scale<M: Parameterized>(model: &mut M, factor: f64) {
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v *= factor;
        }
    }
}

pub fn flat<M: Parameterized>(model: &M) -> Vec<f64> {
    model.tensors().concat()
}
