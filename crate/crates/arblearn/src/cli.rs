//! Command-line wiring: synthetic market generation, single-window dispatch
//! solving, predictor training, checkpoint inference, and dispatch scoring.
//!
//! One command runs per process. Human-readable progress goes to stderr;
//! machine-readable results go to the files named by the output flags.
//! Every JSON result embeds a SHA-256 hash of the configuration that
//! produced it so artifacts can be traced back.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, solver non-convergence,
//! resource caps, numeric blow-up), 2 configuration or validation error.
//! Argument parse errors also exit with 2.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{
    build_arbitrage_targets, build_rolling_dataset, load_behavior_csv, load_price_csv,
    synth_behavior_series, synth_price_series, write_behavior_csv, write_price_csv, CsvSchema,
    PriorChannel, SyntheticGenConfig, WindowTargets,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_events, evaluate_magnitude, MetricsReport, DEFAULT_TOLERANCE_STEPS,
    SYNTHETIC_MAGNITUDE_PCT, SYNTHETIC_THRESHOLD_MW,
};
use crate::mlp::FeatureWindow;
use crate::perturb::derive_seed;
use crate::storage::{solve_dispatch, DispatchSchedule, StorageSpec, DEFAULT_TOL};
use crate::train::{
    json_hash, predict, train, write_loss_csv, Checkpoint, Prediction, Task, TrainConfig,
};

/// Top-level argument parser for the `arblearn` binary.
#[derive(Debug, Parser)]
#[command(
    name = "arblearn",
    version,
    about = "Energy-storage arbitrage learning toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hourly price series and, optionally, the
    /// storage behavior it induces.
    GenData(GenDataArgs),
    /// Solve one dispatch window for a reward vector.
    Solve(SolveArgs),
    /// Train a predictor from a price CSV.
    Train(TrainArgs),
    /// Run a saved checkpoint on one feature window.
    Predict(PredictArgs),
    /// Score predicted net dispatch against actuals.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of days to generate.
    #[arg(long)]
    pub days: usize,
    /// Master seed; every random draw derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output price CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional output CSV of the induced storage behavior.
    #[arg(long)]
    pub behavior_out: Option<PathBuf>,
    /// Storage spec JSON used for behavior generation; defaults apply
    /// when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// JSON file holding the reward vector as a flat array of numbers.
    #[arg(long)]
    pub prices: PathBuf,
    /// Storage spec JSON; when omitted the defaults apply with the
    /// horizon set to the reward length.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output JSON path for the solved schedule.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Price CSV with columns timestamp, rtp, dap and optionally load.
    #[arg(long)]
    pub data: PathBuf,
    /// Behavior CSV with columns timestamp, y; required for the
    /// behavior task and ignored by the arbitrage task.
    #[arg(long)]
    pub behavior: Option<PathBuf>,
    /// Output checkpoint JSON path.
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Output per-batch loss CSV path.
    #[arg(long)]
    pub loss_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint JSON produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature window JSON: an object with rows, cols, and row-major
    /// values.
    #[arg(long)]
    pub features: PathBuf,
    /// Output JSON path for the prediction.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted net dispatch JSON, a flat array in MW.
    #[arg(long)]
    pub pred: PathBuf,
    /// Actual net dispatch JSON, a flat array in MW.
    #[arg(long)]
    pub actual: PathBuf,
    /// Scoring mode.
    #[arg(long, value_enum, default_value_t = EvalMode::Event)]
    pub mode: EvalMode,
    /// Dead-band half-width in MW for event classification.
    #[arg(long, default_value_t = SYNTHETIC_THRESHOLD_MW)]
    pub threshold: f64,
    /// Matching tolerance in steps.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_STEPS)]
    pub tolerance: usize,
    /// Relative error band for magnitude mode.
    #[arg(long, default_value_t = SYNTHETIC_MAGNITUDE_PCT)]
    pub pct: f64,
    /// Output JSON path for the metrics report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Event,
    Magnitude,
}

/// Executes a parsed command and maps the outcome to a process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// 1 for failures of the run itself, 2 for rejected inputs.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. }
        | Error::NonConvergence { .. }
        | Error::ResourceLimit { .. }
        | Error::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Solve(args) => cmd_solve(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
    }
}

// ---------------------------------------------------------------------------
// File plumbing

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: DeserializeOwned>(what: &'static str, path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::SchemaMismatch {
        what,
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::SchemaMismatch {
        what: "json output",
        reason: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let series = synth_price_series(args.days, args.seed)?;
    write_price_csv(&series, &args.out)?;
    eprintln!("wrote {} price rows to {}", series.len(), args.out.display());
    if let Some(behavior_out) = &args.behavior_out {
        let spec = match &args.spec {
            Some(path) => read_json::<StorageSpec>("storage spec", path)?,
            None => StorageSpec::default(),
        };
        spec.validate()?;
        // The reward draw gets its own derived seed so it does not replay
        // the price stream.
        let gen = SyntheticGenConfig {
            seed: derive_seed(args.seed, 1),
            ..SyntheticGenConfig::default()
        };
        let y = synth_behavior_series(&series, &spec, &gen)?;
        write_behavior_csv(&series.timestamps, &y, behavior_out)?;
        eprintln!(
            "wrote {} behavior rows to {}",
            y.len(),
            behavior_out.display()
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveOutput {
    spec_hash: String,
    schedule: DispatchSchedule,
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let reward: Vec<f64> = read_json("reward vector", &args.prices)?;
    let spec = match &args.spec {
        Some(path) => read_json::<StorageSpec>("storage spec", path)?,
        None => StorageSpec {
            horizon: reward.len(),
            ..StorageSpec::default()
        },
    };
    let schedule = solve_dispatch(&reward, &spec, DEFAULT_TOL)?;
    eprintln!(
        "solved {} steps, objective {:.6}",
        spec.horizon, schedule.objective
    );
    write_json(
        &SolveOutput {
            spec_hash: json_hash(&spec),
            schedule,
        },
        &args.out,
    )
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg: TrainConfig = read_json("train config", &args.config)?;
    cfg.validate()?;
    let series = load_price_csv(&args.data, &CsvSchema::default())?;
    eprintln!(
        "loaded {} price rows from {}",
        series.len(),
        args.data.display()
    );
    let horizon = cfg.storage.horizon;
    let (targets, stride) = match cfg.task {
        Task::Arbitrage => (build_arbitrage_targets(&series, &cfg.storage)?, 1),
        Task::Behavior => {
            let path = args.behavior.as_ref().ok_or(Error::InvalidArgument {
                what: "behavior",
                reason: "the behavior task needs --behavior <csv>".into(),
            })?;
            let (timestamps, y) = load_behavior_csv(path)?;
            if timestamps != series.timestamps {
                return Err(Error::SchemaMismatch {
                    what: "behavior csv",
                    reason: "timestamps do not match the price series".into(),
                });
            }
            let targets = WindowTargets::from_flat_series(&y, horizon)?;
            (targets, series.steps_per_day()?)
        }
    };
    let dataset = build_rolling_dataset(
        &series,
        &targets,
        cfg.lookback,
        horizon,
        stride,
        PriorChannel::Dap,
    )?;
    eprintln!(
        "built {} samples (lookback {}, horizon {}, stride {})",
        dataset.samples.len(),
        cfg.lookback,
        horizon,
        stride
    );
    let out = train(&dataset, &cfg)?;
    out.checkpoint.save(&args.checkpoint_out)?;
    write_loss_csv(&out.loss_log, &args.loss_out)?;
    let epoch_mean = |epoch: usize| {
        let (sum, n) = out
            .loss_log
            .iter()
            .filter(|r| r.epoch == epoch)
            .fold((0.0, 0usize), |(s, n), r| (s + r.total, n + 1));
        sum / n.max(1) as f64
    };
    eprintln!(
        "trained {} epochs, mean loss {:.6} -> {:.6}",
        cfg.epochs,
        epoch_mean(1),
        epoch_mean(cfg.epochs)
    );
    eprintln!(
        "checkpoint {} (config {})",
        args.checkpoint_out.display(),
        &out.checkpoint.config_hash[..12]
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    config_hash: String,
    prediction: Prediction,
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let features: FeatureWindow = read_json("feature window", &args.features)?;
    let prediction = predict(&checkpoint, &features)?;
    eprintln!(
        "objective {:.6}, feasible {}",
        prediction.schedule.objective, prediction.feasible
    );
    write_json(
        &PredictOutput {
            config_hash: checkpoint.config_hash.clone(),
            prediction,
        },
        &args.out,
    )
}

#[derive(Debug, Serialize)]
struct EvalParams {
    mode: &'static str,
    threshold_mw: f64,
    tolerance_steps: usize,
    magnitude_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    config_hash: String,
    report: MetricsReport,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let pred: Vec<f64> = read_json("predicted dispatch", &args.pred)?;
    let actual: Vec<f64> = read_json("actual dispatch", &args.actual)?;
    let (report, params) = match args.mode {
        EvalMode::Event => (
            evaluate_events(&pred, &actual, args.threshold, args.tolerance)?,
            EvalParams {
                mode: "event",
                threshold_mw: args.threshold,
                tolerance_steps: args.tolerance,
                magnitude_pct: None,
            },
        ),
        EvalMode::Magnitude => (
            evaluate_magnitude(&pred, &actual, args.pct, args.tolerance, args.threshold)?,
            EvalParams {
                mode: "magnitude",
                threshold_mw: args.threshold,
                tolerance_steps: args.tolerance,
                magnitude_pct: Some(args.pct),
            },
        ),
    };
    eprintln!(
        "precision {:.4} recall {:.4} f1 {:.4}",
        report.precision, report.recall, report.f1
    );
    write_json(
        &EvaluateOutput {
            config_hash: json_hash(&params),
            report,
        },
        &args.out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_gen_data_command_line() {
        let cli = Cli::try_parse_from([
            "arblearn",
            "gen-data",
            "--days",
            "7",
            "--seed",
            "3",
            "--out",
            "prices.csv",
        ])
        .unwrap();
        match cli.command {
            Command::GenData(args) => {
                assert_eq!(args.days, 7);
                assert_eq!(args.seed, 3);
                assert_eq!(args.out, PathBuf::from("prices.csv"));
                assert!(args.behavior_out.is_none());
            }
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn evaluate_defaults_match_the_metric_constants() {
        let cli = Cli::try_parse_from([
            "arblearn",
            "evaluate",
            "--pred",
            "p.json",
            "--actual",
            "a.json",
            "--out",
            "r.json",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate(args) => {
                assert_eq!(args.mode, EvalMode::Event);
                assert_eq!(args.threshold, SYNTHETIC_THRESHOLD_MW);
                assert_eq!(args.tolerance, DEFAULT_TOLERANCE_STEPS);
                assert_eq!(args.pct, SYNTHETIC_MAGNITUDE_PCT);
            }
            other => panic!("wrong command: {other:?}"),
        }
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["arblearn", "solve", "--bogus", "x"]).is_err());
    }

    #[test]
    fn exit_codes_split_runtime_from_validation() {
        let io = Error::io("x", std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), 1);
        let invalid = Error::InvalidArgument {
            what: "days",
            reason: "must be at least 1".into(),
        };
        assert_eq!(exit_code(&invalid), 2);
        let badschema = Error::SchemaMismatch {
            what: "train config",
            reason: "unknown field".into(),
        };
        assert_eq!(exit_code(&badschema), 2);
    }
}
