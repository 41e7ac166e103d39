//! Command-line surface: train, ablate, eval, verify.
//!
//! Configs are JSON; a partial file is completed from defaults, then
//! `--set key=value` overrides are applied by dotted path, then `--seed`
//! wins over everything. The same machinery drives ablation grids so every
//! run directory's config.json is a complete, diffable manifest.

use crate::augment::ViewSet;
use crate::loss::AuxMode;
use crate::train::data::{BatchSource, DOMAIN_AUG_EVAL};
use crate::train::eval::eval_retrieval;
use crate::train::{load_pair, run_training, RunReport, TrainConfig, TrainError, EVAL_INDEX_BASE};
use crate::verify::run_suite;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "boxcorr",
    version,
    about = "Box-correspondence self-supervised pretraining on synthetic data",
    after_help = "Env: BOXCORR_THREADS caps data-generation workers (default 1). \
                  Results are bitwise-deterministic for a fixed seed at any worker count."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train under a config and write a self-contained run directory.
    Train(TrainArgs),
    /// Sweep the box-count and auxiliary-weight axes, one run per point.
    Ablate(AblateArgs),
    /// Score a saved checkpoint on the held-out evaluation stream.
    Eval(EvalArgs),
    /// Run self-check suites and emit a machine-readable JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonConfig {
    /// JSON config file; built-in defaults when omitted, and a partial file
    /// is completed from defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field by dotted path, e.g. --set aug.k=16 or
    /// --set loss.aux_mode=prediction. Repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replaces the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonConfig,
    /// Run directory to create.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonConfig,
    /// Root directory; each grid point trains into its own subdirectory.
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
    /// Grid axis with values, e.g. --grid k=4,8,16,32 or --grid
    /// lambda=0.01,0.05,0.10. Repeatable; omitting it runs both full axes.
    #[arg(long = "grid", value_name = "AXIS=V1,V2,...")]
    pub grid: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file written by train (final.ckpt or any step snapshot).
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub common: CommonConfig,
    /// Directory for report.json.
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Which suite to run: grad, geometry, roi, losses, or all.
    #[arg(default_value = "all")]
    pub suite: String,
    /// Adds a fixture op with a deliberately wrong derivative to the grad
    /// suite; the report must then fail naming it.
    #[arg(long)]
    pub inject_fault: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Entry point behind `main`; maps errors to stderr + exit code 2, while
/// verify failures exit 1 so scripts can tell "broken invocation" apart
/// from "suite found a violation".
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// `run` over raw argv tokens (program name not included), for driving the
/// CLI in-process. Parse errors print to stderr and exit 2 like `main`.
pub fn run_tokens<I, T>(tokens: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("boxcorr"))
        .chain(tokens.into_iter().map(Into::into));
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli),
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

/// Stdout line that tolerates a closed pipe (`boxcorr ... | head`): output
/// stops, but side effects on disk and the exit code stand.
fn emit(line: &str) -> Result<(), CliError> {
    use std::io::Write;
    match writeln!(std::io::stdout(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// Parses `KEY=VALUE` and writes VALUE (JSON if it parses, else a string)
/// at the dotted KEY path, creating intermediate objects.
fn apply_override(root: &mut serde_json::Value, kv: &str) -> Result<(), CliError> {
    let (path, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {kv:?} must be KEY=VALUE")))?;
    if path.is_empty() {
        return Err(CliError::Config(format!("override {kv:?} has an empty key")));
    }
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override path {path} descends into a non-object"))
            })?
            .entry(p.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override path {path} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// File -> overrides -> seed flag, then full validation. Every error names
/// the offending field.
pub fn load_config(common: &CommonConfig) -> Result<TrainConfig, CliError> {
    let mut value: serde_json::Value = match &common.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?,
        None => serde_json::json!({}),
    };
    if !value.is_object() {
        return Err(CliError::Config("config root must be a JSON object".into()));
    }
    for kv in &common.set {
        apply_override(&mut value, kv)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<i32, CliError> {
    let cfg = load_config(&a.common)?;
    let report = run_training(&cfg, &a.out)?;
    emit(&format!("run complete: {}", a.out.display()))?;
    emit(&format!(
        "steps {} faults {} retrieval_top1 {:.4} (chance {:.4}) min_dim_std {:.4}",
        report.steps, report.faults, report.retrieval_top1, report.chance, report.min_dim_std
    ))?;
    Ok(0)
}

struct GridPoint {
    name: String,
    sets: Vec<String>,
}

/// Expands `--grid` specs into named points. The lambda axis only matters
/// with an auxiliary loss, so it switches prediction mode on when the base
/// config runs without one.
fn parse_grid(specs: &[String], base_aux_off: bool) -> Result<Vec<GridPoint>, CliError> {
    let expanded: Vec<String> = if specs.is_empty() {
        vec!["k=4,8,16,32".into(), "lambda=0.01,0.05,0.10".into()]
    } else {
        specs.to_vec()
    };
    let mut points = Vec::new();
    for spec in &expanded {
        let (axis, vals) = spec.split_once('=').ok_or_else(|| {
            CliError::Config(format!("grid spec {spec:?} must be AXIS=V1,V2,..."))
        })?;
        let vals: Vec<&str> = vals.split(',').filter(|v| !v.is_empty()).collect();
        if vals.is_empty() {
            return Err(CliError::Config(format!("grid axis {axis} has no values")));
        }
        for v in vals {
            match axis {
                "k" => points.push(GridPoint {
                    name: format!("k{v}"),
                    sets: vec![format!("aug.k={v}")],
                }),
                "lambda" => {
                    let mut sets = vec![format!("loss.lambda={v}")];
                    if base_aux_off {
                        sets.push("loss.aux_mode=prediction".into());
                    }
                    points.push(GridPoint {
                        name: format!("lambda{v}"),
                        sets,
                    });
                }
                other => {
                    return Err(CliError::Config(format!(
                        "unknown grid axis {other}; expected k or lambda"
                    )))
                }
            }
        }
    }
    Ok(points)
}

/// Sequential seeded runs, one directory per grid point. A point whose
/// report.json already exists is summarized without retraining, so the
/// command is idempotent and restartable.
fn cmd_ablate(a: &AblateArgs) -> Result<i32, CliError> {
    let base = load_config(&a.common)?;
    let points = parse_grid(&a.grid, base.loss.aux_mode == AuxMode::None)?;
    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for p in &points {
        let dir = a.out.join(&p.name);
        let report_path = dir.join("report.json");
        let report: RunReport = if report_path.exists() {
            emit(&format!("{}: reusing existing run", p.name))?;
            serde_json::from_str(&std::fs::read_to_string(&report_path)?)?
        } else {
            let mut common = a.common.clone();
            common.set.extend(p.sets.iter().cloned());
            let cfg = load_config(&common)?;
            run_training(&cfg, &dir)?
        };
        emit(&format!(
            "{}: retrieval_top1 {:.4} (chance {:.4}) min_dim_std {:.4} faults {}",
            p.name, report.retrieval_top1, report.chance, report.min_dim_std, report.faults
        ))?;
        rows.push((p.name.clone(), report));
    }
    let mut summary = String::from(
        "name,retrieval_top1,chance,boxes_ranked,min_dim_std,mean_dim_std,mean_offdiag_cosine,faults,config_hash\n",
    );
    for (name, r) in &rows {
        summary += &format!(
            "{name},{:.6},{:.6},{},{:.6},{:.6},{:.6},{},{}\n",
            r.retrieval_top1,
            r.chance,
            r.boxes_ranked,
            r.min_dim_std,
            r.mean_dim_std,
            r.mean_offdiag_cosine,
            r.faults,
            r.config_hash
        );
    }
    std::fs::write(a.out.join("summary.csv"), summary)?;
    emit(&format!("summary: {}", a.out.join("summary.csv").display()))?;
    Ok(0)
}

/// Rebuilds the network pair from a checkpoint and scores it on the same
/// held-out stream training reports on (disjoint from all training items).
fn cmd_eval(a: &EvalArgs) -> Result<i32, CliError> {
    let cfg = load_config(&a.common)?;
    let pair = load_pair(
        &a.checkpoint,
        cfg.arch.clone(),
        cfg.roi.feature_len(cfg.arch.feat_channels()),
    )?;
    let source = BatchSource {
        synth: cfg.synth.clone(),
        aug: cfg.aug.clone(),
        run_seed: cfg.seed,
        domain: DOMAIN_AUG_EVAL,
    };
    let sets: Vec<ViewSet<f32>> = source.batch(EVAL_INDEX_BASE, cfg.eval_images)?;
    let ev = eval_retrieval(&pair, &sets, cfg.roi)?;
    let json = serde_json::to_string_pretty(&ev)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.json"), json.clone() + "\n")?;
    emit(&json)?;
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, CliError> {
    let reports = run_suite(&a.suite, a.inject_fault).map_err(CliError::Config)?;
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(&reports)?
    };
    emit(&json)?;
    if let Some(p) = &a.out {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(p, json + "\n")?;
    }
    let failures: usize = reports.iter().map(|r| r.failures).sum();
    Ok(if failures > 0 { 1 } else { 0 })
}
