use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use penn_core::config::RunConfig;
use penn_core::penn::Split;
use penn_core::pipeline::{self, PipelineError};

/// sEMG-driven joint-angle estimation with a physics-embedded network.
#[derive(Debug, Parser)]
#[command(name = "penn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set train.lr=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        Ok(RunConfig::load(&self.config, &self.overrides)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic trials from the configured model.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default: paths.data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter raw EMG into normalized envelopes and smooth the angle.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory of raw trial CSVs.
        #[arg(long)]
        raw: PathBuf,
        /// CSV with `channel,mvc` rows.
        #[arg(long)]
        mvc: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-phase training; writes checkpoints and loss curves.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trial directory (default: paths.data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (default: paths.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip phase one and continue from this phase-one checkpoint.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Free-running estimation and metrics for a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the trials held out when the checkpoint was trained.
        #[arg(long)]
        heldout_only: bool,
        /// Second checkpoint for a paired comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Tables and paired t-tests for metric CSVs written by `evaluate`.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| PipelineError::Input(format!("no {what} given on the command line or in [paths]")))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?;
            let out = require(out, &cfg.paths.data_dir, "output directory")?;
            let s = pipeline::simulate(&cfg, &out)?;
            println!(
                "wrote {} trials of {} s to {} (physics dt {} s, {} Hz)",
                s.files.len(),
                s.duration,
                show(&out),
                s.dt,
                s.fs
            );
        }
        Command::Preprocess { config, raw, mvc, out } => {
            let cfg = config.load()?;
            let files = pipeline::preprocess(&cfg, &raw, &mvc, &out)?;
            println!("preprocessed {} trials into {} at {} Hz", files.len(), show(&out), cfg.filters.fs_out);
        }
        Command::Train {
            config,
            data,
            out,
            resume_from,
        } => {
            let cfg = config.load()?;
            let data = require(data, &cfg.paths.data_dir, "data directory")?;
            let out = require(out, &cfg.paths.out_dir, "output directory")?;
            let t = pipeline::train(&cfg, &data, &out, resume_from.as_deref())?;
            if let Some(p1) = &t.phase1 {
                println!("phase 1: {} epochs, stop {:?}", p1.epochs, p1.stop);
            } else {
                println!("phase 1: resumed from {}", show(resume_from.as_deref().unwrap_or(Path::new(""))));
            }
            let p2 = &t.phase2;
            println!("phase 2: {} epochs, stop {:?}, best epoch {}", p2.epochs, p2.stop, p2.best_epoch);
            if let Some(r) = p2.records.iter().find(|r| r.epoch == p2.best_epoch && r.split == Split::Heldout) {
                println!("held-out L_res {:.6e} rad^2", r.l_res);
            }
            println!("train {:?} / held-out {:?}", t.split.train, t.split.heldout);
            println!("outputs in {}", show(&out));
        }
        Command::Evaluate {
            checkpoint,
            data,
            out,
            heldout_only,
            compare,
        } => {
            let e = pipeline::evaluate(&checkpoint, &data, &out, heldout_only, compare.as_deref())?;
            print!("{}", e.text);
        }
        Command::Report { metrics } => {
            print!("{}", pipeline::report(&metrics)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
