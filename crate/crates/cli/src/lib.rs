//! Command-line front end for the outcode pipeline.
//!
//! Every pipeline command takes `--config` and `--out`, writes its files plus a
//! `manifest.json` into the output directory and can be re-run with `replay`.

pub mod config;
pub mod manifest;
pub mod task;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use outcode::error::Category;
use outcode::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{Manifest, RunFiles};
use crate::task::{
    AutomateArgs, DataArgs, EvaluateArgs, GenCorpusArgs, PredictionsArgs, PreprocessArgs, ReportArgs, Task,
    TrainRerankerArgs,
};

const TOOL: &str = concat!("outcode ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "outcode", version, about = "Outpatient clinical coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Run configuration (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic outpatient corpus.
    GenCorpus {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: GenCorpusArgs,
    },
    /// Split by patient, deduplicate, filter labels and build the vocabulary.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: PreprocessArgs,
    },
    /// Train a label-attention base model with early stopping on dev Recall@5.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: DataArgs,
    },
    /// Train the metadata reranker on top of a frozen base model.
    TrainReranker {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: TrainRerankerArgs,
    },
    /// Score dev and test, write predictions and metric tables.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: EvaluateArgs,
    },
    /// Retrain on train subsets and report test scores per fraction.
    Fractions {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: DataArgs,
    },
    /// Fit per-label isotonic calibration on dev predictions.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: PredictionsArgs,
    },
    /// Search exact-match automation thresholds on dev and apply them to test.
    Automate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: AutomateArgs,
    },
    /// Corpus statistics, label consistency and oracle bounds.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        args: ReportArgs,
    },
    /// Re-run a recorded command and compare its outputs with the manifest.
    Replay {
        /// manifest.json written by an earlier run.
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the replayed outputs; a temporary directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration with a comment per key.
    DefaultConfig {
        /// Write to this file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a failed invocation: exit code and the one-line message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub line: String,
}

fn category_name(c: Category) -> (&'static str, i32) {
    match c {
        Category::Usage => ("usage", 2),
        Category::Validation => ("validation", 3),
        Category::Numeric => ("numeric", 4),
    }
}

fn failure(category: Category, msg: &str) -> Failure {
    let (name, code) = category_name(category);
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    Failure {
        code,
        line: format!("error[{name}]: {msg}"),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        failure(e.category(), &e.to_string())
    }
}

/// Parses arguments and runs one command; returns what would be printed on success.
pub fn run<I, T>(args: I) -> std::result::Result<String, Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => return Ok(e.to_string()),
        Err(e) => {
            let text = e.to_string();
            let msg: Vec<&str> = text.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            return Err(failure(Category::Usage, msg.join(" ").trim_start_matches("error: ")));
        }
    };
    let (run_args, task) = match cli.command {
        Command::GenCorpus { run, args } => (run, Task::GenCorpus(args)),
        Command::Preprocess { run, args } => (run, Task::Preprocess(args)),
        Command::Train { run, args } => (run, Task::Train(args)),
        Command::TrainReranker { run, args } => (run, Task::TrainReranker(args)),
        Command::Evaluate { run, args } => (run, Task::Evaluate(args)),
        Command::Fractions { run, args } => (run, Task::Fractions(args)),
        Command::Calibrate { run, args } => (run, Task::Calibrate(args)),
        Command::Automate { run, args } => (run, Task::Automate(args)),
        Command::Report { run, args } => (run, Task::Report(args)),
        Command::Replay { manifest, out } => return Ok(replay(&manifest, out.as_deref())?),
        Command::DefaultConfig { out } => {
            let text = RunConfig::default().documented();
            return match out {
                Some(p) => {
                    std::fs::write(&p, text).map_err(Error::from)?;
                    Ok(format!("wrote {}", p.display()))
                }
                None => Ok(text),
            };
        }
    };
    let mut cfg = RunConfig::read(&run_args.config).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("cannot read config {}: {io}", run_args.config.display()),
        )),
        other => other,
    })?;
    if let Some(seed) = run_args.seed {
        cfg.set_seed(seed);
    }
    let mut task = task;
    task.absolutize()?;
    let (summary, manifest) = execute(&task, &cfg, &run_args.out)?;
    Ok(format!(
        "{summary}\n{}: wrote {} files to {}",
        task.name(),
        manifest.outputs.len() + 1,
        run_args.out.display()
    ))
}

/// Runs a task with a validated configuration and writes its manifest.
pub fn execute(task: &Task, cfg: &RunConfig, out: &Path) -> Result<(String, Manifest)> {
    cfg.validate()?;
    let mut files = RunFiles::new(out)?;
    let summary = task.execute(cfg, &mut files)?;
    let manifest = files.finish(TOOL, task.clone(), cfg.seed, cfg.normalized(), cfg.hash())?;
    Ok((summary, manifest))
}

/// Re-executes a manifest and checks every output hash.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<String> {
    let recorded = Manifest::read(manifest_path)?;
    let cfg = RunConfig::parse(&recorded.config)?;
    if cfg.hash() != recorded.config_hash {
        return Err(Error::Validation {
            line: 0,
            msg: "manifest configuration does not match its hash".into(),
        });
    }
    for input in &recorded.inputs {
        let actual = manifest::sha256_file(Path::new(&input.path))?;
        if actual != input.sha256 {
            return Err(Error::Validation {
                line: 0,
                msg: format!("input {} changed since the recorded run", input.path),
            });
        }
    }
    let tmp;
    let dir = match out {
        Some(d) => d,
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path()
        }
    };
    let (_, replayed) = execute(&recorded.task, &cfg, dir)?;
    if replayed.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|o| !replayed.outputs.contains(o))
            .map(|o| o.path.as_str())
            .collect();
        return Err(Error::Validation {
            line: 0,
            msg: format!("replay differs from the recorded run: {}", differing.join(", ")),
        });
    }
    Ok(format!(
        "replay of {}: {} outputs identical",
        recorded.task.name(),
        recorded.outputs.len()
    ))
}
