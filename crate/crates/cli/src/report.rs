//! Aggregation of finished runs into a label × (mean ± std) table.

use std::fs;
use std::path::{Path, PathBuf};

use ecgc_core::data::{MergedClass, N_CLASSES};
use ecgc_core::objective::mean_std;
use ecgc_core::Error;

use crate::commands::METRICS_FILE;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::RUN_META;

pub const SUMMARY_FILE: &str = "summary.csv";

/// Test metrics of one finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub label: String,
    pub seed: u64,
    pub auroc_macro: f64,
    pub auroc_per_class: [f64; N_CLASSES],
    pub accuracy: f64,
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub runs: usize,
    pub auroc_mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub auroc_std: f64,
    pub per_class_mean: [f64; N_CLASSES],
    pub accuracy_mean: f64,
}

/// Read the summary row of `dir/metrics.csv` and the label of `dir/run.meta`.
pub fn read_run(dir: &Path) -> CliResult<RunSummary> {
    let missing = || CliError::MissingSummary(dir.to_path_buf());
    let metrics = fs::read_to_string(dir.join(METRICS_FILE)).map_err(|_| missing())?;
    let meta = fs::read_to_string(dir.join(RUN_META)).map_err(|_| missing())?;
    let cfg = RunConfig::from_toml(&meta)?;

    let mut reader = csv::Reader::from_reader(metrics.as_bytes());
    let mut found = None;
    for rec in reader.records() {
        let rec = rec.map_err(|_| missing())?;
        if rec.get(0) == Some("summary") {
            found = Some(rec);
        }
    }
    let rec = found.ok_or_else(missing)?;
    let num = |i: usize| -> CliResult<f64> { rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(missing) };
    let mut per_class = [0.0; N_CLASSES];
    for (c, v) in per_class.iter_mut().enumerate() {
        *v = num(4 + c)?;
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        label: cfg.label.or(cfg.command).unwrap_or_else(|| "unlabelled".into()),
        seed: cfg.seed,
        auroc_macro: num(3)?,
        auroc_per_class: per_class,
        accuracy: num(8)?,
    })
}

/// Group runs by label, in order of first appearance.
pub fn aggregate(runs: &[RunSummary]) -> Vec<ReportRow> {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.label == label).collect();
            let n = group.len() as f64;
            let (auroc_mean, auroc_std) = mean_std(&group.iter().map(|r| r.auroc_macro).collect::<Vec<_>>());
            let mut per_class_mean = [0.0; N_CLASSES];
            for (c, m) in per_class_mean.iter_mut().enumerate() {
                *m = group.iter().map(|r| r.auroc_per_class[c]).sum::<f64>() / n;
            }
            ReportRow {
                label: label.to_string(),
                runs: group.len(),
                auroc_mean,
                auroc_std,
                per_class_mean,
                accuracy_mean: group.iter().map(|r| r.accuracy).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("label,runs,auroc_macro_mean,auroc_macro_std");
    for c in MergedClass::ALL {
        out.push_str(&format!(",auroc_{}_mean", c.name().to_lowercase()));
    }
    out.push_str(",accuracy_mean\n");
    for r in rows {
        out.push_str(&format!("{},{},{:?},{:?}", r.label, r.runs, r.auroc_mean, r.auroc_std));
        for v in r.per_class_mean {
            out.push_str(&format!(",{v:?}"));
        }
        out.push_str(&format!(",{:?}\n", r.accuracy_mean));
    }
    out
}

pub fn to_text(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("label".len());
    let mut out = format!("{:<width$}  runs  macro AUROC\n", "label");
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>4}  {:.4} ± {:.4}\n", r.label, r.runs, r.auroc_mean, r.auroc_std));
    }
    out
}

/// Summarise `dirs`, writing `summary.csv` into `output_dir`.
pub fn report(dirs: &[PathBuf], output_dir: &Path) -> CliResult<Vec<ReportRow>> {
    if dirs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let runs = dirs.iter().map(|d| read_run(d)).collect::<CliResult<Vec<_>>>()?;
    let rows = aggregate(&runs);
    let _lock = crate::commands::RunLock::acquire(output_dir)?;
    let path = output_dir.join(SUMMARY_FILE);
    fs::write(&path, to_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
