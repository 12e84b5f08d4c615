//! `respfuse`: runs the simulated respiratory-pattern study stage by stage.

mod stages;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use respfuse_core::pipeline::StudyConfig;

use stages::{Stage, Workspace};

#[derive(Parser, Debug)]
#[command(name = "respfuse", version, about = "Contactless respiratory-pattern pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate subjects and write raw observation records
    Synth(Common),
    /// Fuse observation channels into one respiratory signal per subject
    Extract(Common),
    /// Undo clock error and delay, normalize amplitudes
    Prep(Common),
    /// Build the augmented, class-balanced segment dataset
    Augment(Common),
    /// Compute fused feature series and per-segment feature vectors
    Features(Common),
    /// Train the one-vs-one SVM on the whole dataset
    Train(Common),
    /// Cross-validate and evaluate the feature extraction
    Eval(Common),
    /// Write report tables from report.json
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
    },
    /// Run every stage, reusing cached stage outputs
    Run(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Study configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Recompute stages even when cached outputs exist
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// PCA window length in seconds
    #[arg(long)]
    window_s: Option<f64>,
    /// Channels kept after correlation ranking
    #[arg(long)]
    keep_channels: Option<usize>,
    /// Motion gate threshold
    #[arg(long)]
    motion_threshold: Option<f64>,
    /// SVM soft-margin constant
    #[arg(long)]
    svm_c: Option<f64>,
    /// Cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    /// Augmented segments per class
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    /// Sensor noise standard deviation
    #[arg(long)]
    noise_sd: Option<f64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<StudyConfig> {
        let text = std::fs::read_to_string(&self.config).with_context(|| format!("reading config {}", self.config.display()))?;
        let mut cfg: StudyConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", self.config.display()))?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.window_s {
            cfg.extract.window_s = v;
        }
        if let Some(v) = self.keep_channels {
            cfg.extract.keep_channels = v;
        }
        if let Some(v) = self.motion_threshold {
            cfg.extract.motion_threshold = v;
        }
        if let Some(v) = self.svm_c {
            cfg.svm.c = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.per_class {
            cfg.per_class = v;
        }
        if let Some(v) = self.subjects {
            cfg.subjects = v;
        }
        if let Some(v) = self.noise_sd {
            cfg.observation.noise_sd = v;
        }
        cfg.validate().context("invalid config")?;
        Ok(cfg)
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RESPFUSE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("RESPFUSE_THREADS={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stage_list, format): (&Common, Vec<Stage>, ReportFormat) = match &cli.command {
        Command::Synth(c) => (c, vec![Stage::Synth], ReportFormat::Csv),
        Command::Extract(c) => (c, vec![Stage::Extract], ReportFormat::Csv),
        Command::Prep(c) => (c, vec![Stage::Prep], ReportFormat::Csv),
        Command::Augment(c) => (c, vec![Stage::Augment], ReportFormat::Csv),
        Command::Features(c) => (c, vec![Stage::Features], ReportFormat::Csv),
        Command::Train(c) => (c, vec![Stage::Train], ReportFormat::Csv),
        Command::Eval(c) => (c, vec![Stage::Eval], ReportFormat::Csv),
        Command::Report { common, format } => (common, vec![Stage::Report], *format),
        Command::Run(c) => (c, Stage::ALL.to_vec(), ReportFormat::Csv),
    };
    let cfg = match common.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let ws = match Workspace::open(&common.out, cfg, !common.no_cache) {
        Ok(ws) => ws,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let json_report = matches!(format, ReportFormat::Json);
    for stage in stage_list {
        if let Err(e) = ws.run(stage, json_report) {
            eprintln!("error: stage {} failed: {e:#}", stage.name());
            return ExitCode::from(1);
        }
    }
    ExitCode::SUCCESS
}
