mod common;

use common::{flat, random_sample, tiny_ml, tiny_seq2seq};
use mlseq::linalg::{Rng, Vector};
use mlseq::nn::{MlDims, MlModel, Seq2SeqDims, Seq2SeqModel};
use mlseq::signals::{Sample, SignalKind};
use mlseq::train::{adam_step, train, AdamConfig, AdamState, Trainable, TrainConfig};

fn random_set(seed: u64, d: usize, m: usize, k: usize, count: usize) -> Vec<Sample> {
    let mut rng = Rng::new(seed);
    (0..count).map(|_| random_sample(&mut rng, d, m, k)).collect()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn history_has_one_record_per_epoch() {
    let data = random_set(1, 1, 5, 2, 20);
    let model = MlModel::init(MlDims { d: 1, n: 4, m: 5, k: 2 }, &mut Rng::new(2));
    let (_, history) = train(model, &data, &quick()).unwrap();
    assert_eq!(history.len(), 3);
    assert_eq!(history.iter().map(|h| h.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(history.iter().all(|h| h.val_loss.is_some()));
}

#[test]
fn same_seed_is_bit_identical() {
    let data = random_set(3, 2, 5, 3, 24);
    let model = Seq2SeqModel::init(Seq2SeqDims { d: 2, n1: 3, n2: 4, m: 5, k: 3 }, &mut Rng::new(4));
    let (a, ha) = train(model.clone(), &data, &quick()).unwrap();
    let (b, hb) = train(model.clone(), &data, &quick()).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(flat(&a), flat(&b));

    let other = TrainConfig { seed: 9, ..quick() };
    let (c, _) = train(model, &data, &other).unwrap();
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let data = random_set(5, 1, 6, 3, 30);
    let model = MlModel::init(MlDims { d: 1, n: 5, m: 6, k: 3 }, &mut Rng::new(6));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(model.clone(), &data, &quick()).unwrap())
    };
    let (a, ha) = run(1);
    let (b, hb) = run(4);
    assert_eq!(ha, hb);
    assert_eq!(flat(&a), flat(&b));
}

#[test]
fn bad_inputs_are_rejected() {
    let data = random_set(7, 1, 5, 2, 10);
    let model = MlModel::init(MlDims { d: 1, n: 3, m: 5, k: 2 }, &mut Rng::new(8));
    let zero = TrainConfig { epochs: 0, ..quick() };
    assert!(train(model.clone(), &data, &zero).unwrap_err().is_config());
    assert!(train(model.clone(), &[], &quick()).is_err());

    let mut mixed = data.clone();
    mixed.push(random_sample(&mut Rng::new(9), 1, 6, 2));
    assert!(train(model.clone(), &mixed, &quick()).is_err());
    let wrong_d = random_set(10, 2, 5, 2, 4);
    assert!(train(model, &wrong_d, &quick()).is_err());
}

#[test]
fn constant_signal_is_learned() {
    let c = 0.5;
    let sample = Sample {
        input: vec![Vector::scalar(c); 10],
        target: vec![Vector::scalar(c); 3],
        kind: SignalKind::Sine,
        p: 1,
    };
    let data = vec![sample; 256];
    let model = MlModel::init(MlDims { d: 1, n: 8, m: 10, k: 3 }, &mut Rng::new(11));
    let config = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let (_, history) = train(model, &data, &config).unwrap();
    let last = history.last().unwrap();
    assert!(last.train_loss < 1e-4, "final train loss {}", last.train_loss);
    assert!(last.val_loss.unwrap() < 1e-4);
}

fn batch_loss<M: Trainable>(model: &M, batch: &[Sample]) -> f64 {
    batch.iter().map(|s| model.loss(s).unwrap()).sum::<f64>() / batch.len() as f64
}

fn mean_grad<M: Trainable>(model: &M, batch: &[Sample]) -> M {
    let mut total = model.zeros_like();
    for s in batch {
        let (_, g) = model.loss_and_grad(s).unwrap();
        for (t, gt) in total.tensors_mut().into_iter().zip(g.tensors()) {
            for (a, b) in t.iter_mut().zip(gt) {
                *a += b / batch.len() as f64;
            }
        }
    }
    total
}

fn one_step_descends<M: Trainable>(mut model: M, batch: &[Sample]) -> (f64, f64) {
    let before = batch_loss(&model, batch);
    let grad = mean_grad(&model, batch);
    let mut state = AdamState::new(&model);
    let config = AdamConfig {
        learning_rate: 1e-4,
        ..AdamConfig::default()
    };
    adam_step(&mut model, &grad, &mut state, &config).unwrap();
    (before, batch_loss(&model, batch))
}

#[test]
fn small_adam_step_does_not_increase_batch_loss() {
    for seed in 0..20 {
        let (model, _) = tiny_seq2seq(seed);
        let batch = random_set(1000 + seed, model.dims.d, 4, 3, 4);
        let (before, after) = one_step_descends(model, &batch);
        assert!(after <= before, "seq2seq seed {seed}: {before} -> {after}");

        let (model, _) = tiny_ml(seed);
        let batch = random_set(2000 + seed, model.dims.d, 4, 3, 4);
        let (before, after) = one_step_descends(model, &batch);
        assert!(after <= before, "ml seed {seed}: {before} -> {after}");
    }
}

#[test]
fn clipping_to_a_tiny_norm_stalls_adam() {
    let data = random_set(12, 1, 5, 2, 8);
    let model = MlModel::init(MlDims { d: 1, n: 3, m: 5, k: 2 }, &mut Rng::new(13));
    let base = TrainConfig {
        epochs: 1,
        batch_size: 8,
        validation_fraction: 0.0,
        shuffle: false,
        ..TrainConfig::default()
    };
    let (a, _) = train(model.clone(), &data, &base).unwrap();
    let clipped = TrainConfig {
        clip_norm: Some(1e-12),
        ..base
    };
    let (b, _) = train(model.clone(), &data, &clipped).unwrap();
    assert_eq!(flat(&a).len(), flat(&b).len());
    let moved = |m: &MlModel| -> f64 { flat(m).iter().zip(flat(&model)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) };
    assert!(moved(&a) > 1e-4);
    assert!(moved(&b) > 0.0 && moved(&b) < 1e-6);
}
