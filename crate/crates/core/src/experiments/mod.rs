//! Experiment drivers: data generation, training, sweeps, comparisons,
//! trajectory export, consistency analysis and gradient checks.
//!
//! Every command derives its randomness from the single top-level `seed`
//! with [`derive_seed`]; the streams are listed in [`streams`].

mod chart;
mod commands;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::signals::{DatasetSpec, Series, SignalConfig, SignalKind};
use crate::train::TrainConfig;

pub use commands::*;

/// Seed streams, used as the first path element of `derive_seed(seed, ..)`.
pub mod streams {
    /// `[CELL, arch, n, n1]`, then `[0]` for initial weights, `[1]` for training.
    pub const CELL: u64 = 10;
    /// `[EVAL_SERIES, kind]`: noise of the freshly generated evaluation series.
    pub const EVAL_SERIES: u64 = 20;
    /// `[EVAL_WINDOWS, kind, kp]`: evaluation window starts.
    pub const EVAL_WINDOWS: u64 = 21;
    pub const HARVEST: u64 = 30;
    pub const REINIT: u64 = 31;
    pub const TRAJECTORIES: u64 = 40;
    pub const GRAD_CHECK: u64 = 50;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Seq2seq,
    Ml,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Seq2seq => "seq2seq",
            Arch::Ml => "ml",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Arch::Seq2seq => 1,
            Arch::Ml => 2,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq2seq" => Ok(Arch::Seq2seq),
            "ml" => Ok(Arch::Ml),
            _ => Err(Error::InvalidConfig(format!("unknown arch {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::InvalidConfig(format!("unknown scale {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSelection {
    Sine,
    Trapezoid,
    Both,
}

impl SignalSelection {
    pub fn kinds(self) -> Vec<SignalKind> {
        match self {
            SignalSelection::Sine => vec![SignalKind::Sine],
            SignalSelection::Trapezoid => vec![SignalKind::Trapezoid],
            SignalSelection::Both => SignalKind::ALL.to_vec(),
        }
    }
}

impl FromStr for SignalSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SignalSelection::Sine),
            "trapezoid" => Ok(SignalSelection::Trapezoid),
            "both" => Ok(SignalSelection::Both),
            _ => Err(Error::InvalidConfig(format!("unknown signal {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Number of harvested encoder states.
    pub states: usize,
    pub widen: bool,
    pub tune: bool,
    pub tune_steps: usize,
    pub tune_lr: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            states: 500,
            widen: false,
            tune: false,
            tune_steps: 200,
            tune_lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Random tiny models per architecture.
    pub models: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub m: usize,
    pub k: usize,
    /// Upper bound for every randomly drawn dimension.
    pub max_dim: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            models: 20,
            epsilon: 1e-5,
            tolerance: 1e-4,
            m: 4,
            k: 3,
            max_dim: 5,
        }
    }
}

/// Everything a command needs. Missing keys in a config file fall back to
/// the preset of the chosen scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub seed: u64,
    pub out: PathBuf,
    pub signal: SignalSelection,
    pub sine: SignalConfig,
    pub trapezoid: SignalConfig,
    pub m: usize,
    pub k: usize,
    /// Training windows per signal kind.
    pub per_kind: usize,
    pub train: TrainConfig,
    /// Architecture for `train`.
    pub arch: Arch,
    /// Total neuron count for `train`, `consistency`, `compare-ml` and `trajectories`.
    pub n: usize,
    /// Encoder size for single seq2seq runs; defaults to `n / 2`.
    pub n1: Option<usize>,
    pub n_grid: Vec<usize>,
    /// `n1 / n` fractions for `sweep-ratio` and `compare-ml`.
    pub ratio_grid: Vec<f64>,
    /// `n1 / n` fractions for `sweep-n1`.
    pub n1_grid: Vec<f64>,
    pub kp: Vec<usize>,
    pub trials: usize,
    /// Independent repetitions for `compare-ml`; replicate `i` uses `seed + i`.
    pub replicates: usize,
    pub trajectory_windows: usize,
    pub trajectory_kp: usize,
    /// Existing dataset (JSON lines) used instead of generating one.
    pub data: Option<PathBuf>,
    /// Existing model files for `consistency` and `trajectories`.
    pub models: Vec<PathBuf>,
    pub consistency: ConsistencyConfig,
    pub grad_check: GradCheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Small and fast: 800 windows, 10 epochs, three ratio points, 100 trials.
    pub fn desk() -> Self {
        ExperimentConfig {
            scale: Scale::Desk,
            seed: 0,
            out: PathBuf::from("out"),
            signal: SignalSelection::Both,
            sine: SignalConfig::paper_sine(),
            trapezoid: SignalConfig::paper_trapezoid(),
            m: 70,
            k: 10,
            per_kind: 400,
            train: TrainConfig {
                epochs: 10,
                batch_size: 8,
                clip_norm: Some(1.0),
                ..TrainConfig::default()
            },
            arch: Arch::Ml,
            n: 50,
            n1: None,
            n_grid: vec![50, 100, 220],
            ratio_grid: vec![0.1, 0.5, 0.9],
            n1_grid: vec![0.1, 0.5, 0.9],
            kp: vec![10, 40],
            trials: 100,
            replicates: 1,
            trajectory_windows: 3,
            trajectory_kp: 40,
            data: None,
            models: Vec::new(),
            consistency: ConsistencyConfig::default(),
            grad_check: GradCheckConfig::default(),
        }
    }

    /// 8000 windows, 50 epochs, nine ratio points, 1000 trials.
    pub fn paper() -> Self {
        ExperimentConfig {
            scale: Scale::Paper,
            per_kind: 4000,
            train: TrainConfig::default(),
            ratio_grid: vec![0.1, 0.2, 0.25, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.75, 0.8, 0.9],
            n1_grid: (1..10).map(|i| i as f64 / 10.0).collect(),
            trials: 1000,
            ..ExperimentConfig::desk()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => ExperimentConfig::desk(),
            Scale::Paper => ExperimentConfig::paper(),
        }
    }

    /// Preset for `scale` (or the file's own `scale` key, or desk) with the
    /// keys of `file` merged on top, recursively for nested objects.
    pub fn resolve(scale: Option<Scale>, file: Option<&str>) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::InvalidConfig(format!("config: {e}"));
        let overrides: Option<Value> = file.map(serde_json::from_str).transpose().map_err(bad)?;
        let file_scale = match overrides.as_ref().and_then(|v| v.get("scale")) {
            Some(v) => Some(serde_json::from_value::<Scale>(v.clone()).map_err(bad)?),
            None => None,
        };
        let scale = scale.or(file_scale).unwrap_or(Scale::Desk);
        let mut base = serde_json::to_value(ExperimentConfig::preset(scale))?;
        if let Some(v) = overrides {
            merge(&mut base, v);
        }
        base["scale"] = serde_json::to_value(scale)?;
        serde_json::from_value(base).map_err(bad)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (kind, cfg) in [(SignalKind::Sine, &self.sine), (SignalKind::Trapezoid, &self.trapezoid)] {
            if cfg.kind != kind {
                return bad(format!("{kind} slot holds a {} config", cfg.kind));
            }
            cfg.validate()?;
        }
        self.train.validate()?;
        if self.m == 0 || self.k == 0 || self.per_kind == 0 || self.trials == 0 {
            return bad("m, k, per_kind and trials must be >= 1".into());
        }
        if self.n < 2 {
            return bad("n must be >= 2".into());
        }
        if let Some(n1) = self.n1 {
            if n1 == 0 || n1 >= self.n {
                return bad(format!("n1 = {n1} must lie in [1, n - 1] for n = {}", self.n));
            }
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return bad("n_grid must be non-empty with every n >= 2".into());
        }
        for (name, grid) in [("ratio_grid", &self.ratio_grid), ("n1_grid", &self.n1_grid)] {
            if grid.is_empty() || grid.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                return bad(format!("{name} must be non-empty with fractions in (0, 1)"));
            }
        }
        if self.kp.is_empty() || self.kp.iter().any(|&kp| kp == 0 || kp % self.k != 0) {
            return bad(format!("every kp must be a positive multiple of k = {}", self.k));
        }
        if self.replicates == 0 || self.trajectory_windows == 0 || self.trajectory_kp == 0 {
            return bad("replicates, trajectory_windows and trajectory_kp must be >= 1".into());
        }
        let c = &self.consistency;
        if c.states == 0 || c.tune_steps == 0 || !(c.tune_lr > 0.0) {
            return bad("consistency states, tune_steps and tune_lr must be positive".into());
        }
        let g = &self.grad_check;
        if g.models == 0 || g.m == 0 || g.k == 0 || g.max_dim == 0 || !(g.epsilon > 0.0) || !(g.tolerance > 0.0) {
            return bad("grad_check settings must be positive".into());
        }
        let needed = self.m + self.k.max(self.trajectory_kp).max(*self.kp.iter().max().unwrap_or(&0));
        for cfg in [&self.sine, &self.trapezoid] {
            if cfg.n_points < needed {
                return bad(format!("series of {} points cannot hold windows of {needed}", cfg.n_points));
            }
        }
        Ok(())
    }

    pub fn signal_config(&self, kind: SignalKind) -> &SignalConfig {
        match kind {
            SignalKind::Sine => &self.sine,
            SignalKind::Trapezoid => &self.trapezoid,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            sine: self.sine.clone(),
            trapezoid: self.trapezoid.clone(),
            m: self.m,
            k: self.k,
            per_kind: self.per_kind,
        }
    }

    /// Fresh series of `kind` with its own noise draw, used only for scoring.
    pub fn eval_series(&self, kind: SignalKind) -> Result<Series> {
        let mut cfg = self.signal_config(kind).clone();
        cfg.seed = derive_seed(self.seed, &[streams::EVAL_SERIES, kind as u64]);
        Series::generate(&cfg)
    }

    pub fn default_n1(&self) -> usize {
        self.n1.unwrap_or(self.n / 2).clamp(1, self.n - 1)
    }
}

/// Encoder sizes `round(f * n)` for each fraction, clamped to `[1, n - 1]`,
/// sorted and deduplicated.
pub fn n1_values(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1)))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (key, v) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(key, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
