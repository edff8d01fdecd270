use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chart::{line_chart, Line};
use super::{n1_values, streams, Arch, ExperimentConfig};
use crate::consistency::{consistency_stats, harvest_states, tune_decoder, ConsistencyReport};
use crate::error::{Error, Result};
use crate::eval::{eval_ep, EvalReport};
use crate::linalg::{derive_seed, Rng, Vector};
use crate::nn::{Forecaster, MlDims, MlModel, ModelFile, RnnCellParams, Seq2SeqDims, Seq2SeqModel};
use crate::signals::{build_dataset, Dataset, Sample, Series, SignalKind};
use crate::train::{grad_check, history_csv, train, AdamConfig, EpochRecord, TrainConfig};

/// One network to train and score: an ML net with `n` units or a seq2seq
/// net with `n1 + n2 = n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub arch: Arch,
    pub n: usize,
    pub n1: Option<usize>,
}

impl Cell {
    pub fn ml(n: usize) -> Self {
        Cell { arch: Arch::Ml, n, n1: None }
    }

    pub fn seq2seq(n: usize, n1: usize) -> Self {
        Cell {
            arch: Arch::Seq2seq,
            n,
            n1: Some(n1),
        }
    }

    /// Depends only on the top-level seed and the cell key, so the same
    /// cell trains identically in every command.
    pub fn seed(&self, top: u64) -> u64 {
        derive_seed(
            top,
            &[streams::CELL, self.arch.tag(), self.n as u64, self.n1.unwrap_or(0) as u64],
        )
    }

    fn split(&self) -> Option<(usize, usize)> {
        self.n1.map(|n1| (n1, self.n - n1))
    }
}

/// One line of every sweep CSV. The seq2seq-only columns are empty for ML rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResultRow {
    pub experiment: String,
    pub signal: SignalKind,
    pub arch: Arch,
    pub n: usize,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub r: Option<f64>,
    pub ln_r: Option<f64>,
    pub kp: usize,
    pub mean_e: f64,
    pub std_e: f64,
    pub seed: u64,
}

impl SweepResultRow {
    fn new(experiment: &str, signal: SignalKind, cell: Cell, kp: usize, report: &EvalReport, seed: u64) -> Self {
        let split = cell.split();
        let r = split.map(|(n1, n2)| n1 as f64 / n2 as f64);
        SweepResultRow {
            experiment: experiment.to_string(),
            signal,
            arch: cell.arch,
            n: cell.n,
            n1: split.map(|s| s.0),
            n2: split.map(|s| s.1),
            r,
            ln_r: r.map(f64::ln),
            kp,
            mean_e: report.mean,
            std_e: report.std,
            seed,
        }
    }
}

pub fn rows_to_csv(rows: &[SweepResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["experiment", "signal", "arch", "n", "n1", "n2", "r", "ln_r", "kp", "mean_e", "std_e", "seed"])?;
    for row in rows {
        w.serialize(row)?;
    }
    finish_csv(w)
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SweepResultRow>, _>>()?;
    Ok(rows)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Validates the config, creates the output directory and echoes the
/// resolved config into `config.json`.
fn prepare_out(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let text = serde_json::to_string_pretty(config)? + "\n";
    write_text(&config.out.join("config.json"), &text)
}

/// Training windows of the selected signal kinds, read from `config.data`
/// or generated from `config.seed`.
pub fn training_samples(config: &ExperimentConfig) -> Result<Vec<Sample>> {
    let all = match &config.data {
        Some(path) => Dataset::read_jsonl(path)?.samples,
        None => build_dataset(&config.dataset_spec(), config.seed)?.1.samples,
    };
    let kinds = config.signal.kinds();
    let samples: Vec<Sample> = all.into_iter().filter(|s| kinds.contains(&s.kind)).collect();
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    Ok(samples)
}

/// Trains `cell` on `samples` with weights and batch order derived from the cell seed.
pub fn train_cell(config: &ExperimentConfig, cell: Cell, samples: &[Sample]) -> Result<(ModelFile, Vec<EpochRecord>)> {
    let seed = cell.seed(config.seed);
    let mut init = Rng::new(derive_seed(seed, &[0]));
    let tc = TrainConfig {
        seed: derive_seed(seed, &[1]),
        ..config.train.clone()
    };
    let (m, k) = (config.m, config.k);
    match cell.split() {
        None => {
            let dims = MlDims { d: 1, n: cell.n, m, k };
            let (model, history) = train(MlModel::init(dims, &mut init), samples, &tc)?;
            Ok((ModelFile::Ml(model), history))
        }
        Some((n1, n2)) => {
            if n1 == 0 || n2 == 0 {
                return Err(Error::InvalidConfig(format!("n1 = {n1} must lie in [1, n - 1] for n = {}", cell.n)));
            }
            let dims = Seq2SeqDims { d: 1, n1, n2, m, k };
            let (model, history) = train(Seq2SeqModel::init(dims, &mut init), samples, &tc)?;
            Ok((ModelFile::Seq2Seq(model), history))
        }
    }
}

/// Mean `E_p` with `kp = k * p` over `config.trials` windows of `series`.
/// Window starts depend only on the seed, kind and `kp`.
pub fn evaluate(
    config: &ExperimentConfig,
    model: &(impl Forecaster + ?Sized),
    kind: SignalKind,
    series: &Series,
    kp: usize,
) -> Result<EvalReport> {
    let mut rng = Rng::new(derive_seed(config.seed, &[streams::EVAL_WINDOWS, kind as u64, kp as u64]));
    eval_ep(
        |xs: &[Vector], h: usize| model.forecast(xs, h),
        series,
        config.m,
        config.k,
        kp / config.k,
        config.trials,
        &mut rng,
    )
}

fn eval_series_all(config: &ExperimentConfig) -> Result<Vec<(SignalKind, Series)>> {
    config.signal.kinds().into_iter().map(|k| Ok((k, config.eval_series(k)?))).collect()
}

/// Trains and scores every `(seed, cell)` job in parallel; rows come back in job order.
fn run_jobs(config: &ExperimentConfig, experiment: &str, jobs: &[(u64, Cell)]) -> Result<Vec<SweepResultRow>> {
    let mut inputs = BTreeMap::new();
    for &(seed, _) in jobs {
        if let std::collections::btree_map::Entry::Vacant(e) = inputs.entry(seed) {
            let c = ExperimentConfig { seed, ..config.clone() };
            e.insert((training_samples(&c)?, eval_series_all(&c)?, c));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(seed, cell)| {
            let (samples, series, c) = &inputs[&seed];
            let (model, _) = train_cell(c, cell, samples)?;
            let mut rows = Vec::new();
            for (kind, s) in series {
                for &kp in &c.kp {
                    let report = evaluate(c, &model, *kind, s, kp)?;
                    rows.push(SweepResultRow::new(experiment, *kind, cell, kp, &report, seed));
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.concat())
}

fn ratio_cells(n: usize, fractions: &[f64]) -> Vec<Cell> {
    n1_values(n, fractions).into_iter().map(|n1| Cell::seq2seq(n, n1)).collect()
}

/// Seq2seq error over the ratio grid for every `n` in `n_grid`.
pub fn sweep_ratio_rows(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    config.validate()?;
    let jobs: Vec<(u64, Cell)> = config
        .n_grid
        .iter()
        .flat_map(|&n| ratio_cells(n, &config.ratio_grid))
        .map(|c| (config.seed, c))
        .collect();
    let mut rows = run_jobs(config, "sweep-ratio", &jobs)?;
    rows.sort_by_key(|r| (r.signal, r.n, r.n1, r.kp));
    Ok(rows)
}

/// Seq2seq error over the `n1` grid (or the single `config.n1`), sorted by `n1`.
pub fn sweep_n1_rows(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &n in &config.n_grid {
        let cells = match config.n1 {
            Some(n1) if n1 < n => vec![Cell::seq2seq(n, n1)],
            Some(_) => Vec::new(),
            None => ratio_cells(n, &config.n1_grid),
        };
        jobs.extend(cells.into_iter().map(|c| (config.seed, c)));
    }
    if jobs.is_empty() {
        return Err(Error::InvalidConfig("no n in n_grid admits the requested n1".into()));
    }
    let mut rows = run_jobs(config, "sweep-n1", &jobs)?;
    rows.sort_by_key(|r| (r.n1, r.n, r.signal, r.kp));
    Ok(rows)
}

/// Seq2seq over the ratio grid plus an ML net, all with `config.n` units,
/// repeated for seeds `seed, seed + 1, ..`.
pub fn compare_ml_rows(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for rep in 0..config.replicates {
        let seed = config.seed.wrapping_add(rep as u64);
        jobs.extend(ratio_cells(config.n, &config.ratio_grid).into_iter().map(|c| (seed, c)));
        jobs.push((seed, Cell::ml(config.n)));
    }
    let mut rows = run_jobs(config, "compare-ml", &jobs)?;
    rows.sort_by_key(|r| (r.signal, r.kp, r.arch, r.n1, r.seed));
    Ok(rows)
}

fn mean_by<K: Ord>(rows: &[SweepResultRow], key: impl Fn(&SweepResultRow) -> K) -> BTreeMap<K, (f64, usize)> {
    let mut acc = BTreeMap::new();
    for r in rows {
        let e = acc.entry(key(r)).or_insert((0.0, 0));
        e.0 += r.mean_e;
        e.1 += 1;
    }
    acc
}

fn sweep_chart(rows: &[SweepResultRow], title: &str, x_label: &str, x: impl Fn(&SweepResultRow) -> f64) -> String {
    let mut lines: BTreeMap<(SignalKind, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        lines.entry((r.signal, r.n, r.kp)).or_default().push((x(r), r.mean_e));
    }
    let lines: Vec<Line> = lines
        .into_iter()
        .map(|((s, n, kp), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Line::new(format!("{s} n={n} kp={kp}"), pts)
        })
        .collect();
    line_chart(title, x_label, "E", &lines)
}

pub fn cmd_sweep_ratio(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    prepare_out(config)?;
    let rows = sweep_ratio_rows(config)?;
    write_text(&config.out.join("sweep_ratio.csv"), &rows_to_csv(&rows)?)?;
    let svg = sweep_chart(&rows, "Error vs ln r", "ln r", |r| r.ln_r.unwrap_or(0.0));
    write_text(&config.out.join("sweep_ratio.svg"), &svg)?;
    Ok(rows)
}

pub fn cmd_sweep_n1(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    prepare_out(config)?;
    let rows = sweep_n1_rows(config)?;
    write_text(&config.out.join("sweep_n1.csv"), &rows_to_csv(&rows)?)?;
    let svg = sweep_chart(&rows, "Error vs n1", "n1", |r| r.n1.unwrap_or(0) as f64);
    write_text(&config.out.join("sweep_n1.svg"), &svg)?;
    Ok(rows)
}

pub fn cmd_compare_ml(config: &ExperimentConfig) -> Result<Vec<SweepResultRow>> {
    prepare_out(config)?;
    let rows = compare_ml_rows(config)?;
    write_text(&config.out.join("compare_ml.csv"), &rows_to_csv(&rows)?)?;

    let trad = mean_by(&rows, |r| (r.signal, r.kp, r.n1, r.arch));
    let mut lines = Vec::new();
    let x_span = {
        let xs: Vec<f64> = rows.iter().filter_map(|r| r.ln_r).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let mut groups: BTreeMap<(SignalKind, usize), (Vec<(f64, f64)>, Option<f64>)> = BTreeMap::new();
    for ((signal, kp, n1, arch), (sum, count)) in trad {
        let g = groups.entry((signal, kp)).or_default();
        let mean = sum / count as f64;
        match (arch, n1) {
            (Arch::Seq2seq, Some(n1)) => g.0.push(((n1 as f64 / (config.n - n1) as f64).ln(), mean)),
            _ => g.1 = Some(mean),
        }
    }
    for ((signal, kp), (pts, ml)) in groups {
        lines.push(Line::new(format!("{signal} kp={kp} seq2seq"), pts));
        if let Some(e) = ml {
            let mut l = Line::new(format!("{signal} kp={kp} ml"), vec![(x_span.0, e), (x_span.1, e)]);
            l.dashed = true;
            lines.push(l);
        }
    }
    let svg = line_chart(&format!("Seq2seq vs ML, n={}", config.n), "ln r", "E", &lines);
    write_text(&config.out.join("compare_ml.svg"), &svg)?;
    Ok(rows)
}

/// Truth over input and continuation, and each model's forecast over the continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub window: usize,
    pub signal: SignalKind,
    pub start: usize,
    /// 1-based position within the window; steps `> m` are forecast.
    pub step: usize,
    pub t: f64,
    pub truth: f64,
    pub predictions: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub models: Vec<String>,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectories {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["window", "signal", "start", "step", "t", "truth"].map(String::from).to_vec();
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.window.to_string(),
                r.signal.to_string(),
                r.start.to_string(),
                r.step.to_string(),
                r.t.to_string(),
                r.truth.to_string(),
            ];
            rec.extend(r.predictions.iter().map(|p| p.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }
}

fn model_label(model: &ModelFile) -> String {
    match model {
        ModelFile::Ml(m) => format!("ml_n{}", m.dims.n),
        ModelFile::Seq2Seq(m) => format!("seq2seq_r{}", m.dims.ratio()),
    }
}

/// Loads `config.models`, or trains an ML net and seq2seq nets with `r = 4`
/// and `r = 1/4`, then exports forecasts on random evaluation windows.
pub fn cmd_trajectories(config: &ExperimentConfig) -> Result<Trajectories> {
    prepare_out(config)?;
    let models: Vec<(String, ModelFile)> = if config.models.is_empty() {
        let n = config.n as f64;
        let cells = [
            Cell::ml(config.n),
            Cell::seq2seq(config.n, (n * 0.8).round() as usize),
            Cell::seq2seq(config.n, (n * 0.2).round() as usize),
        ];
        let samples = training_samples(config)?;
        let trained = cells
            .par_iter()
            .map(|&c| train_cell(config, c, &samples).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for m in trained {
            let label = model_label(&m);
            m.save(&config.out.join(format!("model_{label}.json")))?;
            out.push((label, m));
        }
        out
    } else {
        config
            .models
            .iter()
            .map(|p| {
                let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((label, ModelFile::load(p)?))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let (m, kp) = (config.m, config.trajectory_kp);
    let mut rows = Vec::new();
    let mut window = 0;
    for kind in config.signal.kinds() {
        let series = config.eval_series(kind)?;
        if m + kp > series.len() {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                needed: m + kp,
            });
        }
        let mut rng = Rng::new(derive_seed(config.seed, &[streams::TRAJECTORIES, kind as u64]));
        let mut chart_lines: Vec<Line> = Vec::new();
        for w in 0..config.trajectory_windows {
            window += 1;
            let start = rng.index(1, series.len() - m - kp + 1);
            let input = series.window(start, m);
            let forecasts = models
                .iter()
                .map(|(_, model)| model.forecast(&input, kp))
                .collect::<Result<Vec<_>>>()?;
            for step in 1..=m + kp {
                let i = start + step - 1;
                rows.push(TrajectoryRow {
                    window,
                    signal: kind,
                    start,
                    step,
                    t: series.time(i),
                    truth: series.values[i - 1],
                    predictions: forecasts.iter().map(|f| (step > m).then(|| f[step - m - 1][0])).collect(),
                });
            }
            if w == 0 {
                let truth = (1..=m + kp).map(|s| (s as f64, series.values[start + s - 2])).collect();
                chart_lines.push(Line::new("truth", truth));
                for ((label, _), f) in models.iter().zip(&forecasts) {
                    let pts = f.iter().enumerate().map(|(j, v)| ((m + 1 + j) as f64, v[0])).collect();
                    chart_lines.push(Line::new(label.clone(), pts));
                }
            }
        }
        let svg = line_chart(&format!("{kind} continuation, kp={kp}"), "step", "x", &chart_lines);
        write_text(&config.out.join(format!("trajectories_{kind}.svg")), &svg)?;
    }
    let result = Trajectories {
        models: models.into_iter().map(|(l, _)| l).collect(),
        rows,
    };
    write_text(&config.out.join("trajectories.csv"), &result.to_csv()?)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpPair {
    pub signal: SignalKind,
    pub kp: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub steps: usize,
    pub learning_rate: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub non_increasing: bool,
    pub after: ConsistencyReport,
    pub ep: Vec<EpPair>,
    #[serde(skip)]
    pub history: Vec<f64>,
    #[serde(skip)]
    pub tuned: Option<Seq2SeqModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    /// Path of the analysed model, or `"trained"`.
    pub model: String,
    pub n1: usize,
    pub n2: usize,
    pub widen: bool,
    pub before: ConsistencyReport,
    /// Same states with the decoder replaced by a freshly initialized one.
    pub reinit_decoder: ConsistencyReport,
    pub tuning: Option<TuningSummary>,
}

/// Consistency residuals of a seq2seq model (loaded from `config.models[0]`
/// or trained at `n`, `n1`), optionally followed by decoder tuning.
pub fn cmd_consistency(config: &ExperimentConfig) -> Result<ConsistencySummary> {
    prepare_out(config)?;
    let samples = training_samples(config)?;
    let (source, model) = match config.models.first() {
        Some(path) => match ModelFile::load(path)? {
            ModelFile::Seq2Seq(m) => (path.display().to_string(), m),
            ModelFile::Ml(_) => {
                return Err(Error::InvalidConfig(format!("{} is not a seq2seq model", path.display())));
            }
        },
        None => {
            let cell = Cell::seq2seq(config.n, config.default_n1());
            let (model, history) = train_cell(config, cell, &samples)?;
            model.save(&config.out.join("model.json"))?;
            write_text(&config.out.join("history.csv"), &history_csv(&history)?)?;
            let ModelFile::Seq2Seq(m) = model else { unreachable!("seq2seq cell") };
            ("trained".to_string(), m)
        }
    };
    let summary = consistency_analysis(config, &model, &Dataset { samples })?;
    let summary = ConsistencySummary { model: source, ..summary };

    write_text(&config.out.join("residuals.csv"), &summary.before.to_csv()?)?;
    if let Some(t) = &summary.tuning {
        write_text(&config.out.join("residuals_tuned.csv"), &t.after.to_csv()?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "objective"])?;
        for (i, v) in t.history.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        write_text(&config.out.join("tune_history.csv"), &finish_csv(w)?)?;
        if let Some(tuned) = &t.tuned {
            ModelFile::Seq2Seq(tuned.clone()).save(&config.out.join("model_tuned.json"))?;
        }
    }
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    write_text(&config.out.join("consistency.json"), &text)?;
    Ok(summary)
}

/// The file-free core of [`cmd_consistency`].
pub fn consistency_analysis(
    config: &ExperimentConfig,
    model: &Seq2SeqModel,
    dataset: &Dataset,
) -> Result<ConsistencySummary> {
    let c = &config.consistency;
    let mut rng = Rng::new(derive_seed(config.seed, &[streams::HARVEST]));
    let states = harvest_states(&model.encoder, dataset, c.states, c.widen, &mut rng)?;
    let before = consistency_stats(model, &states)?;

    let (n1, n2) = (model.dims.n1, model.dims.n2);
    let mut reinit = model.clone();
    reinit.decoder = RnnCellParams::init(n2, n1, &mut Rng::new(derive_seed(config.seed, &[streams::REINIT])));
    let reinit_decoder = consistency_stats(&reinit, &states)?;

    let tuning = if c.tune {
        let adam = AdamConfig {
            learning_rate: c.tune_lr,
            ..AdamConfig::default()
        };
        let (tuned, history) = tune_decoder(model, &states, c.tune_steps, &adam)?;
        let after = consistency_stats(&tuned, &states)?;
        let mut ep = Vec::new();
        for kind in config.signal.kinds() {
            let series = config.eval_series(kind)?;
            for &kp in &config.kp {
                ep.push(EpPair {
                    signal: kind,
                    kp,
                    before: evaluate(config, model, kind, &series, kp)?.mean,
                    after: evaluate(config, &tuned, kind, &series, kp)?.mean,
                });
            }
        }
        Some(TuningSummary {
            steps: c.tune_steps,
            learning_rate: c.tune_lr,
            objective_before: history[0],
            objective_after: *history.last().expect("steps + 1 entries"),
            non_increasing: history.windows(2).all(|w| w[1] <= w[0]),
            after,
            ep,
            history,
            tuned: Some(tuned),
        })
    } else {
        None
    };
    Ok(ConsistencySummary {
        model: String::new(),
        n1,
        n2,
        widen: c.widen,
        before,
        reinit_decoder,
        tuning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub arch: Arch,
    pub index: usize,
    pub d: usize,
    /// `n1` for seq2seq, `n` for ML.
    pub n1: usize,
    pub n2: Option<usize>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_error < self.tolerance)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        finish_csv(w)
    }
}

fn random_sample(rng: &mut Rng, d: usize, m: usize, k: usize) -> Sample {
    let mut draw = |len: usize| -> Vec<Vector> {
        (0..len).map(|_| Vector::from_vec((0..d).map(|_| rng.gauss()).collect())).collect()
    };
    let input = draw(m);
    let target = draw(k);
    Sample {
        input,
        target,
        kind: SignalKind::Sine,
        p: 1,
    }
}

/// Analytic against central-difference gradients on random tiny models of both architectures.
pub fn grad_check_report(config: &ExperimentConfig) -> Result<GradCheckReport> {
    let g = &config.grad_check;
    let jobs: Vec<(Arch, usize)> = [Arch::Seq2seq, Arch::Ml]
        .into_iter()
        .flat_map(|a| (0..g.models).map(move |i| (a, i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(arch, index)| {
            let mut rng = Rng::new(derive_seed(config.seed, &[streams::GRAD_CHECK, arch.tag(), index as u64]));
            let d = rng.index(1, g.max_dim);
            let a = rng.index(1, g.max_dim);
            let b = rng.index(1, g.max_dim);
            let sample = random_sample(&mut rng, d, g.m, g.k);
            let (n2, err) = match arch {
                Arch::Seq2seq => {
                    let dims = Seq2SeqDims { d, n1: a, n2: b, m: g.m, k: g.k };
                    let model = Seq2SeqModel::init(dims, &mut rng);
                    (Some(b), grad_check(&model, &sample, g.epsilon)?)
                }
                Arch::Ml => {
                    let dims = MlDims { d, n: a, m: g.m, k: g.k };
                    let model = MlModel::init(dims, &mut rng);
                    (None, grad_check(&model, &sample, g.epsilon)?)
                }
            };
            Ok(GradCheckRow {
                arch,
                index,
                d,
                n1: a,
                n2,
                max_rel_error: err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport {
        rows,
        tolerance: g.tolerance,
    })
}

pub fn cmd_grad_check(config: &ExperimentConfig) -> Result<GradCheckReport> {
    prepare_out(config)?;
    let report = grad_check_report(config)?;
    write_text(&config.out.join("grad_check.csv"), &report.to_csv()?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenData {
    pub series: Vec<PathBuf>,
    pub dataset: PathBuf,
    pub samples: usize,
}

/// Series CSVs and the merged, shuffled dataset for the selected signals.
pub fn cmd_gen_data(config: &ExperimentConfig) -> Result<GenData> {
    prepare_out(config)?;
    let (series, dataset) = build_dataset(&config.dataset_spec(), config.seed)?;
    let kinds = config.signal.kinds();
    let mut paths = Vec::new();
    for s in series.iter().filter(|s| kinds.contains(&s.config.kind)) {
        let path = config.out.join(format!("series_{}.csv", s.config.kind));
        s.write_csv(&path)?;
        paths.push(path);
    }
    let dataset = Dataset {
        samples: dataset.samples.into_iter().filter(|s| kinds.contains(&s.kind)).collect(),
    };
    let path = config.out.join("dataset.jsonl");
    dataset.write_jsonl(&path)?;
    Ok(GenData {
        series: paths,
        dataset: path,
        samples: dataset.len(),
    })
}

/// Trains `config.arch` with `config.n` units (`n1 = config.n1` or `n / 2`
/// for seq2seq) and writes `model.json` and `history.csv`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(ModelFile, Vec<EpochRecord>)> {
    prepare_out(config)?;
    let samples = training_samples(config)?;
    let cell = match config.arch {
        Arch::Ml => Cell::ml(config.n),
        Arch::Seq2seq => Cell::seq2seq(config.n, config.default_n1()),
    };
    let (model, history) = train_cell(config, cell, &samples)?;
    model.save(&config.out.join("model.json"))?;
    write_text(&config.out.join("history.csv"), &history_csv(&history)?)?;
    Ok((model, history))
}
