//! Command-line front end.

pub mod config;
pub mod experiments;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{ClockChoice, ConfigError, Demo, ExperimentConfig};
pub use experiments::{run_experiments, trace_run, Report, RunError};

#[derive(Debug, Parser)]
#[command(
    name = "tagsoa",
    version,
    about = "Deterministic service-oriented demos and experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded trials and print one CSV row per trial plus a summary.
    Run(RunArgs),
    /// Print the execution trace of one reactor-mode brake run.
    Trace(RunArgs),
}

/// Every flag overrides the same key in `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Flat key=value file with defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// counter or brake.
    #[arg(long)]
    pub demo: Option<String>,
    /// naive or reactor.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub frames: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Camera and timer period, e.g. 50ms.
    #[arg(long)]
    pub period: Option<String>,
    /// Four comma-separated stage deadlines, e.g. 5ms,25ms,25ms,5ms.
    #[arg(long)]
    pub deadlines: Option<String>,
    /// Latency bound L assumed by receivers.
    #[arg(long)]
    pub max_latency: Option<String>,
    /// Clock skew bound E.
    #[arg(long)]
    pub max_skew: Option<String>,
    /// zero, fixed:D, uniform:MIN,MAX or twopoint:LOW,HIGH,P.
    #[arg(long)]
    pub latency_model: Option<String>,
    /// simulated or real.
    #[arg(long)]
    pub clock: Option<String>,
    /// Write the CSV (or trace) here instead of standard output.
    #[arg(long)]
    pub out: Option<String>,
    /// Threads executing the reactions of one tag.
    #[arg(long)]
    pub workers: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, &str)> {
        [
            ("demo", &self.demo),
            ("mode", &self.mode),
            ("frames", &self.frames),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("period", &self.period),
            ("deadlines", &self.deadlines),
            ("max_latency", &self.max_latency),
            ("max_skew", &self.max_skew),
            ("latency_model", &self.latency_model),
            ("clock", &self.clock),
            ("out", &self.out),
            ("workers", &self.workers),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let file = match &self.config {
            Some(path) => Some(
                std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?,
            ),
            None => None,
        };
        ExperimentConfig::resolve(file.as_deref(), self.flags())
    }
}

fn emit(cfg: &ExperimentConfig, body: &str) -> std::io::Result<()> {
    match &cfg.out {
        Some(path) => std::fs::write(path, body),
        None => std::io::stdout().lock().write_all(body.as_bytes()),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> ExitCode {
    let (args, tracing) = match &cli.command {
        Command::Run(a) => (a, false),
        Command::Trace(a) => (a, true),
    };
    let cfg = match args.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = if tracing {
        trace_run(&cfg).map(|(text, digest)| {
            let written = emit(&cfg, &text);
            eprintln!("digest {digest}");
            (written, true)
        })
    } else {
        run_experiments(&cfg).map(|report| {
            let written = emit(&cfg, &report.csv());
            println!("{}", report.summary);
            (written, report.success)
        })
    };
    match result {
        Ok((Ok(()), true)) => ExitCode::SUCCESS,
        Ok((Ok(()), false)) => ExitCode::FAILURE,
        Ok((Err(e), _)) => {
            eprintln!("error: cannot write output: {e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
