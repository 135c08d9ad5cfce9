//! The `emmix` command line.
//!
//! Every command writes its outputs and one `<command>.manifest.json` into a
//! single directory. Exit codes: 0 success, 1 usage or configuration error,
//! 2 data, protocol or I/O error, 3 numerical-check failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{load_csv, save_csv, spread_profiles, synthesize, ColumnMap, Dataset, Split, DEFAULT_DIFFICULTY};
use crate::error::{Error, Result};
use crate::eval::{roc_export, score_verification, Report};
use crate::gradcheck::{self, Target};
use crate::model::{evaluate_accuracy, load_checkpoint, save_checkpoint, train_with, TrainedModel, Variant};

pub const SEED_ENV: &str = "EMMIX_SEED";

#[derive(Debug, Parser)]
#[command(name = "emmix", version, about = "Eye-movement recognition with EmMixformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic gaze corpus.
    Synth(SynthArgs),
    /// Train a model on a gaze CSV.
    Train(TrainArgs),
    /// Score a trained model on the cross-session protocol.
    Eval(EvalArgs),
    /// Train and score the five ablation configurations.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    sessions: usize,
    /// Seconds per recording.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// How alike the subjects are, in [0, 1).
    #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
    difficulty: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the report and ROC curve.
    #[arg(long, alias = "out")]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Shared settings; any `variant` key is ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Comma-separated modules; all of them when omitted.
    #[arg(long, value_delimiter = ',')]
    modules: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional directory for a written report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale applied to analytic gradients (detector self-test).
    #[arg(long, default_value_t = 1.0, hide = true)]
    distort: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Artifact {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub timestamp: String,
}

impl RunManifest {
    fn write(command: &str, config: serde_json::Value, seed: u64, inputs: &[&Path], outputs: &[&Path], dir: &Path) -> Result<PathBuf> {
        let m = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            inputs: inputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let path = dir.join(format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// Seed precedence: flag, then config file, then `EMMIX_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.subjects == 0 || a.sessions == 0 {
        return Err(Error::Argument("--subjects and --sessions must be at least 1".into()));
    }
    if !(a.duration > 0.0 && a.duration.is_finite()) || !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(Error::Argument("--duration and --rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&a.difficulty) {
        return Err(Error::Argument(format!("--difficulty must lie in [0, 1), got {}", a.difficulty)));
    }
    let seed = resolve_seed(a.seed, None)?;
    fs::create_dir_all(&a.out)?;
    let profiles = spread_profiles(a.subjects, a.difficulty, seed)?;
    let recs = synthesize(&profiles, a.sessions, a.duration, a.rate, seed)?;
    let csv = a.out.join("gaze.csv");
    save_csv(&csv, &recs)?;
    let config = serde_json::json!({
        "subjects": a.subjects,
        "sessions": a.sessions,
        "duration": a.duration,
        "rate": a.rate,
        "difficulty": a.difficulty,
        "profiles": profiles,
    });
    RunManifest::write("synth", config, seed, &[], &[&csv], &a.out)?;
    println!("{} recordings ({} subjects x {} sessions) -> {}", recs.len(), a.subjects, a.sessions, csv.display());
    Ok(())
}

fn load_dataset(path: &Path, rc: &RunConfig) -> Result<Dataset> {
    let recs = load_csv(path, &ColumnMap::default())?;
    Dataset::from_recordings(&recs, &rc.preprocess()?)
}

fn write_train_log(tm: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "accuracy"])?;
    for e in &tm.log {
        w.write_record([e.epoch.to_string(), e.loss.to_string(), e.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut rc = load_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, rc.seed)?;
    rc.seed = Some(seed);
    let ds = load_dataset(&a.data, &rc)?;
    let mc = rc.model(ds.subjects.len())?;
    let tc = rc.train(seed)?;
    fs::create_dir_all(&a.out)?;
    log::info!("training on {} windows from {} subjects", ds.indices(Split::Train).len(), ds.subjects.len());
    let tm = train_with(&ds, &mc, &tc, |_| {})?;
    let ckpt = a.out.join("model.ckpt");
    let log_path = a.out.join("train_log.csv");
    save_checkpoint(&tm, &ckpt)?;
    write_train_log(&tm, &log_path)?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    let config = serde_json::json!({
        "run_config": rc.to_toml(),
        "model": mc,
        "train": tc,
        "preprocess": ds.preprocess,
    });
    RunManifest::write("train", config, seed, &inputs, &[&ckpt, &log_path], &a.out)?;
    match tm.final_loss() {
        Some(l) => println!("trained {} epochs, final loss {l}", tm.log.len()),
        None => println!("saved untrained model"),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let tm = load_checkpoint(&a.model)?;
    let recs = load_csv(&a.data, &ColumnMap::default())?;
    let ds = Dataset::from_recordings(&recs, &tm.preprocess)?;
    let scores = score_verification(&tm, &ds)?;
    let report = Report::from_scores(&scores)?;
    fs::create_dir_all(&a.report)?;
    let txt = a.report.join("report.txt");
    let roc = a.report.join("roc.csv");
    fs::write(&txt, report.to_text())?;
    roc_export(&scores, &roc)?;
    let config = serde_json::json!({ "model": tm.model.config, "preprocess": tm.preprocess });
    RunManifest::write("eval", config, tm.train_config.seed, &[&a.model, &a.data], &[&txt, &roc], &a.report)?;
    print!("{}", report.to_text());
    Ok(())
}

/// One row of the ablation report.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub eer: f64,
    pub frr_at_far: Vec<f64>,
    pub train_accuracy: f64,
    pub final_loss: f64,
    pub parameters: usize,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>10}",
        "variant", "eer", "frr@1e-1", "frr@1e-2", "frr@1e-3", "train_acc", "final_loss", "params"
    );
    for r in rows {
        let _ = write!(out, "{:<22} {:>10.6}", r.variant.name(), r.eer);
        for f in &r.frr_at_far {
            let _ = write!(out, " {f:>10.6}");
        }
        let _ = writeln!(out, " {:>10.4} {:>12.6} {:>10}", r.train_accuracy, r.final_loss, r.parameters);
    }
    out
}

fn ablate(a: AblateArgs) -> Result<()> {
    use crate::nn::Module;

    let mut rc = load_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, rc.seed)?;
    rc.seed = Some(seed);
    rc.variant = None;
    let ds = load_dataset(&a.data, &rc)?;
    let tc = rc.train(seed)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let vc = RunConfig { variant: Some(v), ..rc.clone() };
        let mc = vc.model(ds.subjects.len())?;
        log::info!("ablation: training {v}");
        let tm = train_with(&ds, &mc, &tc, |_| {})?;
        let report = Report::from_scores(&score_verification(&tm, &ds)?)?;
        rows.push(AblationRow {
            variant: v,
            eer: report.eer,
            frr_at_far: report.frr_at_far.iter().map(|f| f.frr).collect(),
            train_accuracy: evaluate_accuracy(&tm, &ds, Split::Train)?,
            final_loss: tm.final_loss().unwrap_or(f64::NAN),
            parameters: tm.model.parameter_count(),
        });
    }
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("ablation.txt");
    let table = ablation_table(&rows);
    fs::write(&path, &table)?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    let config = serde_json::json!({
        "run_config": rc.to_toml(),
        "train": tc,
        "preprocess": ds.preprocess,
        "results": rows,
    });
    RunManifest::write("ablate", config, seed, &inputs, &[&path], &a.out)?;
    print!("{table}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let targets: Vec<Target> = if a.modules.is_empty() {
        Target::ALL.to_vec()
    } else {
        a.modules.iter().map(|m| m.trim().parse()).collect::<Result<_>>()?
    };
    let seed = resolve_seed(a.seed, None)?;
    let mut text = String::new();
    let mut failed = Vec::new();
    for t in &targets {
        let report = gradcheck::check_distorted(*t, seed, a.distort)?;
        for g in &report.groups {
            let _ = writeln!(text, "{t}/{} probes={} max_rel_error={:.3e}", g.name, g.probes, g.max_rel_error);
        }
        let verdict = if report.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(text, "{t}: max_rel_error={:.3e} {verdict}", report.max_rel_error());
        if !report.passed() {
            failed.push(t.name());
        }
    }
    print!("{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("gradcheck.txt");
        fs::write(&path, &text)?;
        let names: Vec<&str> = targets.iter().map(|t| t.name()).collect();
        let config = serde_json::json!({ "modules": names, "distort": a.distort });
        RunManifest::write("gradcheck", config, seed, &[], &[&path], dir)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check above {:e} in: {}",
            gradcheck::TOLERANCE,
            failed.join(", ")
        )))
    }
}
