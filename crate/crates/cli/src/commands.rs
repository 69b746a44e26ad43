//! Subcommand implementations. Each takes a resolved [`RunConfig`], owns
//! its output directory for the duration of the run, and leaves a
//! `run.meta` that reproduces it.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ecgc_core::attributes::{extract_attributes, AttributeStats};
use ecgc_core::data::{generate_synthetic, load_dataset, split, write_dataset, Dataset, LoadOptions};
use ecgc_core::nn::{load_checkpoint, save_checkpoint};
use ecgc_core::objective::{train_baseline, train_pretext, train_probe, MetricsReport, Phase};
use ecgc_core::pairing::StrategyKind;
use ecgc_core::Error;
use log::{info, warn};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{LOCK_FILE, RUN_META};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "encoder.ecgc";
pub const ATTRIBUTE_STATS_FILE: &str = "attribute_stats.csv";

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e).into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    path.canonicalize().map_err(|e| Error::io(path, e).into())
}

/// Pin the command, lock the output directory and make every path absolute
/// so the echoed config is usable from any working directory.
fn begin(cfg: &mut RunConfig, command: &str) -> CliResult<RunLock> {
    match &cfg.command {
        Some(c) if c != command => {
            return Err(CliError::Config(format!("config was resolved for `{c}`, not `{command}`")));
        }
        _ => cfg.command = Some(command.to_string()),
    }
    let lock = RunLock::acquire(&cfg.output_dir)?;
    cfg.output_dir = absolute(&cfg.output_dir)?;
    if let Some(m) = &cfg.data.manifest {
        cfg.data.manifest = Some(absolute(m)?);
    }
    if let Some(c) = &cfg.eval.checkpoint {
        cfg.eval.checkpoint = Some(absolute(c)?);
    }
    Ok(lock)
}

/// Write the resolved config, followed by run notes as TOML comments.
pub fn write_run_meta(cfg: &RunConfig, notes: &[(String, String)]) -> CliResult<()> {
    let mut text = String::from("# Resolved configuration; rerun with `ecgc <command> --config run.meta`.\n");
    text.push_str(&cfg.to_toml()?);
    if !notes.is_empty() {
        text.push_str("\n# Run notes (informational)\n");
        for (k, v) in notes {
            text.push_str(&format!("# {k}: {v}\n"));
        }
    }
    let path = cfg.output_dir.join(RUN_META);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let manifest = cfg.data.manifest.as_ref().ok_or_else(|| CliError::Config("data.manifest is required".into()))?;
    let options = LoadOptions { normalize: cfg.data.normalize, expected_samples: None };
    let (dataset, report) = load_dataset(manifest, &options)?;
    info!(
        "loaded {} records from {} ({} rows, {} under 18 skipped)",
        dataset.len(),
        manifest.display(),
        report.rows,
        report.rejected_underage
    );
    Ok(dataset)
}

fn splits(cfg: &RunConfig) -> CliResult<(Dataset, Dataset, Dataset)> {
    let dataset = load(cfg)?;
    let parts = split(&dataset, &cfg.data.split_spec())?;
    info!("split sizes train {} / validation {} / test {}", parts.0.len(), parts.1.len(), parts.2.len());
    Ok(parts)
}

fn finish(cfg: &RunConfig, report: &MetricsReport) -> CliResult<()> {
    report.write_csv(&cfg.output_dir.join(METRICS_FILE))?;
    write_run_meta(cfg, &report.run_metadata)?;
    info!("{}", report.summary_line());
    Ok(())
}

/// Materialise a synthetic dataset; returns the manifest path.
pub fn synth(cfg: &RunConfig) -> CliResult<PathBuf> {
    let mut cfg = cfg.clone();
    let _lock = begin(&mut cfg, "synth")?;
    let dataset = generate_synthetic(&cfg.synthetic_spec())?;
    let manifest = write_dataset(&dataset, &cfg.output_dir)?;
    write_run_meta(&cfg, &[("class_counts".into(), format!("{:?}", dataset.class_count_map()))])?;
    info!("wrote {} records to {}", dataset.len(), manifest.display());
    Ok(manifest)
}

/// Copy a dataset with attribute columns computed from the raw signals.
/// Records where no beats are found keep blank attributes.
pub fn extract_attrs(cfg: &RunConfig) -> CliResult<PathBuf> {
    let mut cfg = cfg.clone();
    let _lock = begin(&mut cfg, "extract-attrs")?;
    cfg.data.normalize = false;
    let dataset = load(&cfg)?;
    let extracted: Vec<Option<_>> = dataset
        .records()
        .par_iter()
        .map(|r| match extract_attributes(r) {
            Ok(a) => Ok(Some(a)),
            Err(Error::NoPeaksDetected(id)) => {
                warn!("no beats detected in {id}; attributes left blank");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<ecgc_core::Result<_>>()?;
    let missing = extracted.iter().filter(|a| a.is_none()).count();
    let mut it = extracted.into_iter();
    let filled = dataset.with_attributes(|_| Ok(it.next().flatten()))?;
    let manifest = write_dataset(&filled, &cfg.output_dir)?;
    write_run_meta(&cfg, &[("records_without_attributes".into(), missing.to_string())])?;
    info!("wrote {} records ({missing} without attributes) to {}", filled.len(), manifest.display());
    Ok(manifest)
}

/// Contrastive pretraining on the training split. Writes the checkpoint,
/// the loss curve and, for attribute matching, the attribute statistics.
pub fn pretrain(cfg: &RunConfig) -> CliResult<MetricsReport> {
    let mut cfg = cfg.clone();
    let _lock = begin(&mut cfg, "pretrain")?;
    let (train, _, _) = splits(&cfg)?;
    let strategy = cfg.strategy_spec(train.get(0).signal.samples())?;
    let tag = strategy.label();
    cfg.label.get_or_insert_with(|| tag.clone());
    if strategy.kind == StrategyKind::Attributes {
        let stats = if strategy.raw_distance { AttributeStats::identity() } else { AttributeStats::fit_dataset(&train)? };
        stats.write_csv(&cfg.output_dir.join(ATTRIBUTE_STATS_FILE))?;
    }
    let outcome = train_pretext(&train, &strategy, &cfg.encoder, &cfg.loss_config(), &cfg.train_config(Phase::Pretrain))?;
    save_checkpoint(&outcome.encoder, &tag, &cfg.output_dir.join(CHECKPOINT_FILE))?;
    finish(&cfg, &outcome.report)?;
    Ok(outcome.report)
}

/// Linear probe on a frozen checkpoint. The architecture comes from the
/// checkpoint; `encoder.embed_dim` must agree with it.
pub fn probe(cfg: &RunConfig) -> CliResult<MetricsReport> {
    let mut cfg = cfg.clone();
    let _lock = begin(&mut cfg, "probe")?;
    let path = cfg.eval.checkpoint.clone().ok_or_else(|| CliError::Config("eval.checkpoint is required".into()))?;
    let (encoder, tag) = load_checkpoint(&path)?;
    let found = encoder.config().embed_dim;
    if found != cfg.encoder.embed_dim {
        return Err(Error::ShapeMismatch(format!(
            "probe expects {}-dimensional embeddings, checkpoint {} produces {found}",
            cfg.encoder.embed_dim,
            path.display()
        ))
        .into());
    }
    cfg.encoder = encoder.config().clone();
    cfg.label.get_or_insert(tag);
    let (train, val, test) = splits(&cfg)?;
    let val = (cfg.eval.validation && !val.is_empty()).then_some(&val);
    let outcome = train_probe(&encoder, &train, val, &test, &cfg.train_config(Phase::Probe))?;
    finish(&cfg, &outcome.report)?;
    Ok(outcome.report)
}

/// Supervised encoder + linear head trained end to end.
pub fn baseline(cfg: &RunConfig) -> CliResult<MetricsReport> {
    let mut cfg = cfg.clone();
    let _lock = begin(&mut cfg, "baseline")?;
    cfg.label.get_or_insert_with(|| "baseline".into());
    let (train, val, test) = splits(&cfg)?;
    let val = (cfg.eval.validation && !val.is_empty()).then_some(&val);
    let outcome = train_baseline(&train, val, &test, &cfg.encoder, &cfg.train_config(Phase::Baseline))?;
    save_checkpoint(&outcome.encoder, "baseline", &cfg.output_dir.join(CHECKPOINT_FILE))?;
    finish(&cfg, &outcome.report)?;
    Ok(outcome.report)
}
