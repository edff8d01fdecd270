//! Noisy phase-modulated sine and trapezoid waves, windowing into
//! (input, target) samples, and dataset persistence.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{derive_seed, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sine,
    Trapezoid,
}

impl SignalKind {
    pub const ALL: [SignalKind; 2] = [SignalKind::Sine, SignalKind::Trapezoid];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Sine => "sine",
            SignalKind::Trapezoid => "trapezoid",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SignalKind::Sine),
            "trapezoid" => Ok(SignalKind::Trapezoid),
            other => Err(Error::InvalidConfig(format!("unknown signal kind {other:?}"))),
        }
    }
}

/// Constants of one synthetic waveform. The trapezoid segments are only read
/// for `kind == Trapezoid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub kind: SignalKind,
    /// Standard deviation of the additive white noise.
    pub noise: f64,
    pub offset: f64,
    pub amplitude: f64,
    pub period: f64,
    pub mod_depth: f64,
    pub mod_period: f64,
    pub rise: f64,
    pub top: f64,
    pub fall: f64,
    pub rest: f64,
    pub dt: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl SignalConfig {
    pub fn paper_sine() -> Self {
        SignalConfig {
            kind: SignalKind::Sine,
            noise: 0.15,
            offset: 0.0,
            amplitude: 1.0,
            period: 1.0,
            mod_depth: 2.0,
            mod_period: 10.0,
            rise: 0.1,
            top: 0.4,
            fall: 0.1,
            rest: 0.4,
            dt: 0.01,
            n_points: 20_000,
            seed: 0,
        }
    }

    pub fn paper_trapezoid() -> Self {
        SignalConfig {
            kind: SignalKind::Trapezoid,
            ..SignalConfig::paper_sine()
        }
    }

    pub fn paper(kind: SignalKind) -> Self {
        match kind {
            SignalKind::Sine => SignalConfig::paper_sine(),
            SignalKind::Trapezoid => SignalConfig::paper_trapezoid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n_points == 0 {
            return bad("n_points must be >= 1".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise amplitude must be >= 0, got {}", self.noise));
        }
        if !(self.period > 0.0) || !(self.mod_period > 0.0) {
            return bad("period and mod_period must be positive".into());
        }
        if self.kind == SignalKind::Trapezoid {
            let segs = [self.rise, self.top, self.fall, self.rest];
            if segs.iter().any(|s| !(*s >= 0.0)) || self.rise <= 0.0 || self.fall <= 0.0 {
                return bad("trapezoid rise and fall must be positive, top and rest non-negative".into());
            }
            let total: f64 = segs.iter().sum();
            if (total - self.period).abs() > 1e-9 * self.period.max(1.0) {
                return bad(format!(
                    "trapezoid segments sum to {total}, expected the period {}",
                    self.period
                ));
            }
        }
        Ok(())
    }

    /// Noise-free value at (unwarped) time `t`.
    pub fn clean_value(&self, t: f64) -> f64 {
        let u = phase_warp(t, self.mod_depth, self.mod_period);
        match self.kind {
            SignalKind::Sine => self.offset + self.amplitude * (2.0 * PI * u / self.period).sin(),
            SignalKind::Trapezoid => self.offset + self.amplitude * self.trapezoid_shape(u),
        }
    }

    /// Unit-height trapezoid on one period, extended periodically.
    fn trapezoid_shape(&self, u: f64) -> f64 {
        let tau = u.rem_euclid(self.period);
        let (r, w, f) = (self.rise, self.top, self.fall);
        if tau < r {
            tau / r
        } else if tau < r + w {
            1.0
        } else if tau < r + w + f {
            (r + w + f - tau) / f
        } else {
            0.0
        }
    }
}

pub fn phase_warp(t: f64, depth: f64, mod_period: f64) -> f64 {
    t + depth * (2.0 * PI * t / mod_period).sin()
}

/// Values `G(t_i)` at `t_i = i * dt`, `i = 1..=N`; `values[0]` is `i = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub config: SignalConfig,
    pub values: Vec<f64>,
}

impl Series {
    pub fn generate(config: &SignalConfig) -> Result<Series> {
        let mut rng = Rng::new(config.seed);
        match config.kind {
            SignalKind::Sine => gen_sine(config, &mut rng),
            SignalKind::Trapezoid => gen_trapezoid(config, &mut rng),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time of the 1-based grid index `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.config.dt
    }

    /// `values[p .. p + len)` for 1-based `p`, each wrapped as a 1-vector.
    pub fn window(&self, p: usize, len: usize) -> Vec<Vector> {
        self.values[p - 1..p - 1 + len].iter().map(|&v| Vector::scalar(v)).collect()
    }

    /// CSV `t,value`; floats in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.time(i + 1).to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the values column back; the config is supplied by the caller.
    pub fn read_csv(path: &Path, config: SignalConfig) -> Result<Series> {
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let v = rec
                .get(1)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Malformed {
                    path: path.to_path_buf(),
                    reason: format!("bad row {:?}", rec),
                })?;
            values.push(v);
        }
        Ok(Series { config, values })
    }
}

fn synthesize(config: &SignalConfig, rng: &mut Rng) -> Series {
    let values = (1..=config.n_points)
        .map(|i| {
            let xi = rng.gauss();
            config.noise * xi + config.clean_value(i as f64 * config.dt)
        })
        .collect();
    Series {
        config: config.clone(),
        values,
    }
}

pub fn gen_sine(config: &SignalConfig, rng: &mut Rng) -> Result<Series> {
    if config.kind != SignalKind::Sine {
        return Err(Error::InvalidConfig("gen_sine needs kind = sine".into()));
    }
    config.validate()?;
    Ok(synthesize(config, rng))
}

pub fn gen_trapezoid(config: &SignalConfig, rng: &mut Rng) -> Result<Series> {
    if config.kind != SignalKind::Trapezoid {
        return Err(Error::InvalidConfig("gen_trapezoid needs kind = trapezoid".into()));
    }
    config.validate()?;
    Ok(synthesize(config, rng))
}

/// One (input, target) pair cut from a series at 1-based start index `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<Vector>,
    pub target: Vec<Vector>,
    pub kind: SignalKind,
    pub p: usize,
}

/// `count` windows with start indices drawn uniformly from `[1, N - m - k + 1]`.
pub fn make_windows(series: &Series, m: usize, k: usize, count: usize, rng: &mut Rng) -> Result<Vec<Sample>> {
    if m == 0 || k == 0 || count == 0 {
        return Err(Error::InvalidConfig("m, k and count must be >= 1".into()));
    }
    if m + k > series.len() {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: m + k,
        });
    }
    let last = series.len() - m - k + 1;
    Ok((0..count)
        .map(|_| {
            let p = rng.index(1, last);
            Sample {
                input: series.window(p, m),
                target: series.window(p + m, k),
                kind: series.config.kind,
                p,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sine: SignalConfig,
    pub trapezoid: SignalConfig,
    pub m: usize,
    pub k: usize,
    pub per_kind: usize,
}

impl DatasetSpec {
    pub fn paper() -> Self {
        DatasetSpec {
            sine: SignalConfig::paper_sine(),
            trapezoid: SignalConfig::paper_trapezoid(),
            m: 70,
            k: 10,
            per_kind: 4000,
        }
    }

    pub fn signal(&self, kind: SignalKind) -> &SignalConfig {
        match kind {
            SignalKind::Sine => &self.sine,
            SignalKind::Trapezoid => &self.trapezoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

/// Series seeds for a dataset built from `seed`: `derive_seed(seed, [1, kind])`.
pub fn series_seed(seed: u64, kind: SignalKind) -> u64 {
    derive_seed(seed, &[1, kind as u64])
}

/// Generates one series per kind (noise seeded from `seed`), windows each,
/// merges and shuffles. Returns the series alongside the dataset.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<(Vec<Series>, Dataset)> {
    let mut all = Vec::with_capacity(2 * spec.per_kind);
    let mut series = Vec::with_capacity(2);
    for kind in SignalKind::ALL {
        let mut cfg = spec.signal(kind).clone();
        if cfg.kind != kind {
            return Err(Error::InvalidConfig(format!("{kind} slot holds a {} config", cfg.kind)));
        }
        cfg.seed = series_seed(seed, kind);
        let s = Series::generate(&cfg)?;
        let mut rng = Rng::new(derive_seed(seed, &[2, kind as u64]));
        all.extend(make_windows(&s, spec.m, spec.k, spec.per_kind, &mut rng)?);
        series.push(s);
    }
    Rng::new(derive_seed(seed, &[3])).shuffle(&mut all);
    Ok((series, Dataset { samples: all }))
}

pub fn build_paper_dataset(seed: u64) -> Result<Dataset> {
    Ok(build_dataset(&DatasetSpec::paper(), seed)?.1)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    kind: SignalKind,
    p: usize,
    input: Vec<Point>,
    target: Vec<Point>,
}

fn to_points(vs: &[Vector]) -> Vec<Point> {
    vs.iter()
        .map(|v| match v.as_slice() {
            [x] => Point::Scalar(*x),
            xs => Point::Vector(xs.to_vec()),
        })
        .collect()
}

fn from_points(ps: Vec<Point>) -> Vec<Vector> {
    ps.into_iter()
        .map(|p| match p {
            Point::Scalar(x) => Vector::scalar(x),
            Point::Vector(xs) => Vector::from_vec(xs),
        })
        .collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One JSON object per line: `{"kind","p","input","target"}`. 1-D points
    /// are written as bare numbers.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.samples {
            let rec = SampleRecord {
                kind: s.kind,
                p: s.p,
                input: to_points(&s.input),
                target: to_points(&s.target),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            samples.push(Sample {
                input: from_points(rec.input),
                target: from_points(rec.target),
                kind: rec.kind,
                p: rec.p,
            });
        }
        Ok(Dataset { samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn clean(kind: SignalKind) -> SignalConfig {
        SignalConfig {
            noise: 0.0,
            mod_depth: 0.0,
            ..SignalConfig::paper(kind)
        }
    }

    #[test]
    fn phase_warp_examples() {
        assert_eq!(phase_warp(0.0, 2.0, 10.0), 0.0);
        assert_eq!(phase_warp(3.7, 0.0, 10.0), 3.7);
        assert!((phase_warp(2.5, 2.0, 10.0) - 4.5).abs() < 1e-15);
    }

    #[test]
    fn sine_values() {
        let c = clean(SignalKind::Sine);
        assert!((c.clean_value(0.25) - 1.0).abs() < 1e-15);
        let flat = SignalConfig { amplitude: 0.0, offset: 0.3, ..c.clone() };
        assert_eq!(flat.clean_value(0.123), 0.3);
        let warped = SignalConfig { mod_depth: 2.0, ..c };
        assert!(warped.clean_value(2.5).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_branches() {
        let c = clean(SignalKind::Trapezoid);
        assert!((c.clean_value(0.05) - 0.5).abs() < 1e-12);
        assert_eq!(c.clean_value(0.3), 1.0);
        assert!((c.clean_value(0.55) - 0.5).abs() < 1e-12);
        assert_eq!(c.clean_value(0.8), 0.0);
        assert!((c.clean_value(1.05) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_segments_must_sum_to_period() {
        let c = SignalConfig { rest: 0.5, ..SignalConfig::paper_trapezoid() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        assert!(gen_trapezoid(&c, &mut Rng::new(0)).is_err());
        let p = SignalConfig::paper_trapezoid();
        assert_eq!(p.rise + p.top + p.fall + p.rest, p.period);
    }

    #[test]
    fn generator_checks_kind() {
        assert!(gen_sine(&SignalConfig::paper_trapezoid(), &mut Rng::new(0)).is_err());
        assert!(gen_trapezoid(&SignalConfig::paper_sine(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn noiseless_bounds_and_periodicity() {
        for kind in SignalKind::ALL {
            let cfg = SignalConfig { n_points: 500, ..clean(kind) };
            let s = Series::generate(&cfg).unwrap();
            let (lo, hi) = match kind {
                SignalKind::Sine => (-1.0, 1.0),
                SignalKind::Trapezoid => (0.0, 1.0),
            };
            assert!(s.values.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
            // period 1 on a grid of 0.01
            for i in 0..400 {
                assert!((s.values[i] - s.values[i + 100]).abs() < 1e-9, "{kind} at {i}");
            }
        }
    }

    #[test]
    fn windows_degenerate_range() {
        let cfg = SignalConfig { n_points: 15, ..SignalConfig::paper_sine() };
        let s = Series::generate(&cfg).unwrap();
        let w = make_windows(&s, 10, 5, 7, &mut Rng::new(1)).unwrap();
        assert!(w.iter().all(|x| x.p == 1 && *x == w[0]));
        assert!(matches!(
            make_windows(&s, 12, 5, 1, &mut Rng::new(1)),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn paper_sized_windows() {
        let s = Series::generate(&SignalConfig::paper_sine()).unwrap();
        let w = make_windows(&s, 70, 10, 4000, &mut Rng::new(3)).unwrap();
        assert_eq!(w.len(), 4000);
        assert!(w.iter().all(|x| x.p >= 1 && x.p + 79 <= 20_000));
    }

    #[test]
    fn jsonl_round_trip_and_scalar_layout() {
        let spec = DatasetSpec { per_kind: 5, ..DatasetSpec::paper() };
        let (_, ds) = build_dataset(&spec, 4).unwrap();
        let text = ds.to_jsonl().unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first["input"][0].is_number());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.write_jsonl(&path).unwrap();
        assert_eq!(Dataset::read_jsonl(&path).unwrap(), ds);
    }

    #[test]
    fn series_csv_round_trip() {
        let cfg = SignalConfig { n_points: 300, ..SignalConfig::paper_trapezoid() };
        let s = Series::generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,value\n"));
        let back = Series::read_csv(&path, cfg).unwrap();
        assert_eq!(back.values, s.values);
    }

    proptest! {
        #[test]
        fn windows_are_contiguous_slices(seed in any::<u64>(), m in 1usize..30, k in 1usize..15) {
            let cfg = SignalConfig { n_points: 200, seed, ..SignalConfig::paper_sine() };
            let s = Series::generate(&cfg).unwrap();
            for w in make_windows(&s, m, k, 20, &mut Rng::new(seed)).unwrap() {
                let joined: Vec<f64> = w.input.iter().chain(&w.target).map(|v| v[0]).collect();
                prop_assert_eq!(&joined[..], &s.values[w.p - 1..w.p - 1 + m + k]);
            }
        }
    }
}
