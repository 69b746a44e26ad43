//! Command-line driver: dataset synthesis, attribute extraction,
//! contrastive pretraining, linear probing, supervised baselines and
//! multi-seed reports.
//!
//! Settings resolve in the order defaults → `--config` file → `--set`
//! overrides → dedicated flags, the last one winning.

pub mod commands;
pub mod config;
mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ecgc_core::nn::EncoderConfig;
use ecgc_core::pairing::StrategyKind;

pub use config::RunConfig;
pub use error::{exit_code_for, CliError, CliResult, ERROR_CLASSES};

/// Name of the resolved-config echo written into every run directory.
pub const RUN_META: &str = "run.meta";
/// Marker that keeps two runs from sharing an output directory.
pub const LOCK_FILE: &str = ".ecgc.lock";

#[derive(Debug, Parser)]
#[command(name = "ecgc", version, about = "Contrastive ECG representation learning")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.pretrain_epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest (overrides data.manifest).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split each class separately.
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest + signal files).
    Synth,
    /// Copy a dataset with attributes computed from its signals.
    ExtractAttrs {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Contrastive pretraining of an encoder.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        /// ResNet-18 shaped encoder instead of the [encoder] section.
        #[arg(long)]
        paper_arch: bool,
        #[arg(long)]
        projection_head: bool,
        /// Attribute distances on unstandardised values.
        #[arg(long)]
        raw_distance: bool,
        /// Rhythm groups ignore condition codes.
        #[arg(long)]
        rhythm_only: bool,
    },
    /// Linear probe on a frozen encoder checkpoint.
    Probe {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Supervised end-to-end baseline.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        paper_arch: bool,
    },
    /// Aggregate finished runs into mean ± std per label.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

impl Cli {
    /// Resolve the effective configuration for this invocation.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        let data = |cfg: &mut RunConfig, d: &DataArgs| {
            if let Some(m) = &d.manifest {
                cfg.data.manifest = Some(m.clone());
            }
            cfg.data.stratify |= d.stratify;
        };
        match &self.command {
            Command::Synth | Command::Report { .. } => {}
            Command::ExtractAttrs { manifest } => {
                if let Some(m) = manifest {
                    cfg.data.manifest = Some(m.clone());
                }
            }
            Command::Pretrain { data: d, strategy, paper_arch, projection_head, raw_distance, rhythm_only } => {
                data(&mut cfg, d);
                if let Some(k) = strategy {
                    cfg.strategy.kind = *k;
                }
                if *paper_arch {
                    cfg.encoder = EncoderConfig { projection_head: cfg.encoder.projection_head, ..EncoderConfig::paper_arch() };
                }
                cfg.encoder.projection_head |= projection_head;
                cfg.strategy.raw_distance |= raw_distance;
                cfg.strategy.rhythm_only |= rhythm_only;
            }
            Command::Probe { data: d, checkpoint } => {
                data(&mut cfg, d);
                if let Some(c) = checkpoint {
                    cfg.eval.checkpoint = Some(c.clone());
                }
            }
            Command::Baseline { data: d, paper_arch } => {
                data(&mut cfg, d);
                if *paper_arch {
                    cfg.encoder = EncoderConfig::paper_arch();
                }
            }
        }
        Ok(cfg)
    }

    /// Run the command; returns the text to print on success.
    pub fn run(&self) -> CliResult<String> {
        let cfg = self.resolve()?;
        Ok(match &self.command {
            Command::Synth => format!("{}\n", commands::synth(&cfg)?.display()),
            Command::ExtractAttrs { .. } => format!("{}\n", commands::extract_attrs(&cfg)?.display()),
            Command::Pretrain { .. } => format!("{}\n", commands::pretrain(&cfg)?.summary_line()),
            Command::Probe { .. } => format!("{}\n", commands::probe(&cfg)?.summary_line()),
            Command::Baseline { .. } => format!("{}\n", commands::baseline(&cfg)?.summary_line()),
            Command::Report { run_dirs } => report::to_text(&report::report(run_dirs, &cfg.output_dir)?),
        })
    }
}
