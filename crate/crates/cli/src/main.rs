use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlseq::experiments::{
    cmd_compare_ml, cmd_consistency, cmd_gen_data, cmd_grad_check, cmd_sweep_n1, cmd_sweep_ratio, cmd_train,
    cmd_trajectories, Arch, ExperimentConfig, Scale, SignalSelection, SweepResultRow,
};
use mlseq::Error;

/// Seq2seq and memoryless recurrent forecasters: data, training, sweeps and diagnostics.
#[derive(Parser, Debug)]
#[command(name = "mlseq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write both series as CSV and the merged training set as JSON lines.
    GenData,
    /// Train one model and write model.json and history.csv.
    Train,
    /// Seq2seq error against ln(n1/n2) for each n.
    SweepRatio,
    /// Seq2seq error against the encoder size n1.
    SweepN1,
    /// Seq2seq over the ratio grid next to a memoryless net of the same size.
    CompareMl,
    /// Export ground truth and forecasts on a few evaluation windows.
    Trajectories,
    /// Consistency residual statistics, optionally with decoder tuning.
    Consistency,
    /// Compare analytic and finite-difference gradients on tiny random models.
    GradCheck,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config; missing keys fall back to the scale preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, conflicts_with = "paper_scale")]
    desk_scale: bool,
    #[arg(long, global = true)]
    paper_scale: bool,
    /// seq2seq or ml.
    #[arg(long, global = true)]
    arch: Option<Arch>,
    /// sine, trapezoid or both.
    #[arg(long, global = true)]
    signal: Option<SignalSelection>,
    /// Total neuron count; also replaces the sweep grid with this single value.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    n1: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    kp: Option<usize>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Dataset (JSON lines) to train on instead of generating one.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Model file; repeat for trajectories.
    #[arg(long = "model", global = true)]
    models: Vec<PathBuf>,
    /// Run decoder tuning after the consistency statistics.
    #[arg(long, global = true)]
    tune: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = match &common.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let scale = if common.paper_scale {
        Some(Scale::Paper)
    } else if common.desk_scale {
        Some(Scale::Desk)
    } else {
        None
    };
    let mut c = ExperimentConfig::resolve(scale, text.as_deref())?;
    if let Some(v) = common.seed {
        c.seed = v;
    }
    if let Some(v) = &common.out {
        c.out = v.clone();
    }
    if let Some(v) = common.arch {
        c.arch = v;
    }
    if let Some(v) = common.signal {
        c.signal = v;
    }
    if let Some(v) = common.n {
        c.n = v;
        c.n_grid = vec![v];
    }
    if let Some(v) = common.n1 {
        c.n1 = Some(v);
    }
    if let Some(v) = common.m {
        c.m = v;
    }
    if let Some(v) = common.k {
        c.k = v;
    }
    if let Some(v) = common.kp {
        c.kp = vec![v];
        c.trajectory_kp = v;
    }
    if let Some(v) = common.trials {
        c.trials = v;
    }
    if let Some(v) = common.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = common.replicates {
        c.replicates = v;
    }
    if let Some(v) = &common.data {
        c.data = Some(v.clone());
    }
    if !common.models.is_empty() {
        c.models = common.models.clone();
    }
    if common.tune {
        c.consistency.tune = true;
    }
    c.validate()?;
    Ok(c)
}

fn report_rows(c: &ExperimentConfig, file: &str, rows: &[SweepResultRow]) {
    println!("{} rows -> {}", rows.len(), c.out.join(file).display());
    for r in rows {
        let ratio = r.r.map(|v| format!("r={v:.4}")).unwrap_or_else(|| "ml".into());
        println!("  {:<9} n={:<4} {:<10} kp={:<3} E={:.5} (std {:.5})", r.signal, r.n, ratio, r.kp, r.mean_e, r.std_e);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = resolve(&cli.common)?;
    match cli.command {
        Command::GenData => {
            let g = cmd_gen_data(&c)?;
            println!("{} samples -> {}", g.samples, g.dataset.display());
            for p in &g.series {
                println!("series -> {}", p.display());
            }
        }
        Command::Train => {
            let (model, history) = cmd_train(&c)?;
            let last = history.last().map(|h| h.train_loss).unwrap_or(f64::NAN);
            println!(
                "{} model, {} epochs, final train loss {last:.6} -> {}",
                model.arch(),
                history.len(),
                c.out.join("model.json").display()
            );
        }
        Command::SweepRatio => report_rows(&c, "sweep_ratio.csv", &cmd_sweep_ratio(&c)?),
        Command::SweepN1 => report_rows(&c, "sweep_n1.csv", &cmd_sweep_n1(&c)?),
        Command::CompareMl => report_rows(&c, "compare_ml.csv", &cmd_compare_ml(&c)?),
        Command::Trajectories => {
            let t = cmd_trajectories(&c)?;
            println!(
                "{} rows for models [{}] -> {}",
                t.rows.len(),
                t.models.join(", "),
                c.out.join("trajectories.csv").display()
            );
        }
        Command::Consistency => {
            let s = cmd_consistency(&c)?;
            let text = serde_json::to_string_pretty(&s).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{text}");
        }
        Command::GradCheck => {
            let r = cmd_grad_check(&c)?;
            let verdict = if r.passed() { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: {} models, worst relative error {:.3e} (tolerance {:.1e})",
                r.rows.len(),
                r.worst(),
                r.tolerance
            );
            if !r.passed() {
                return Err(Failure::Check("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
