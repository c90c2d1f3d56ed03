//! Command-line driver: corpus synthesis, hard mining, training, evaluation,
//! metric reports and judge diagnostics.
//!
//! Exit codes: 0 on success, 1 for user errors (bad flags, missing or
//! malformed inputs), 2 for internal failures such as a diverged run.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use restorl::config::RunConfig;
use restorl::data::MiningMode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error(transparent)]
    Core(#[from] restorl::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use restorl::Error as E;
        match self {
            CliError::User(_) => 1,
            CliError::Core(E::NonFinite(_) | E::Scorer { .. } | E::TrainingAborted { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "restorl", version, about = "Reward-driven post-training for image restoration")]
struct Cli {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: default or smoke.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Vision-language judge URL; takes precedence over the environment
    /// and the config file.
    #[arg(long, global = true)]
    pub judge_endpoint: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(url) = &self.judge_endpoint {
            cfg.judge_endpoint = Some(url.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate clean/degraded pairs for every task family.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_kind: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Score every pair with the untrained model and select the hard subset.
    Mine {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<MiningMode>,
    },
    /// Train on the hard subset of a mined corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the held-out records.
    Eval {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `eval/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a metrics log per epoch.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Send one request to the configured judge and print the verdict.
    Judge {
        /// Judge this record's degraded input against its truth instead of a
        /// synthetic pair.
        #[arg(long, requires = "corpus")]
        id: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Print the judge prompt and exit.
        #[arg(long)]
        prompt: bool,
    },
}

fn parse_mode(s: &str) -> Result<MiningMode, String> {
    match s {
        "stratified" => Ok(MiningMode::Stratified),
        "global" => Ok(MiningMode::Global),
        other => Err(format!("unknown mining mode `{other}` (stratified or global)")),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = &cli.cfg;
    match cli.command {
        Command::Synth { out, per_kind, size } => commands::synth(cfg, out, per_kind, size),
        Command::Mine { corpus, ratio, mode } => commands::mine(cfg, corpus, ratio, mode),
        Command::Train { corpus, out, resume } => commands::train(cfg, corpus, out, resume),
        Command::Eval {
            corpus,
            checkpoint,
            out,
        } => commands::eval(cfg, corpus, &checkpoint, out),
        Command::Report { metrics, out } => commands::report(&metrics, &out),
        Command::Judge { id, corpus, prompt } => commands::judge(cfg, corpus, id, prompt),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
