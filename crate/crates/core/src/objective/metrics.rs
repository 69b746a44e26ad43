use std::io::Write as _;
use std::path::Path;

use crate::data::{MergedClass, N_CLASSES};
use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, computed from average ranks.
///
/// Ranks are doubled so the whole statistic stays in integers until the
/// final division; the result is therefore identical to exhaustive pair
/// counting.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { left: scores.len(), right: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum over positives of (first + last) 1-based position of their tie group.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let twice_rank = (start + 1 + end + 1) as u128;
        let pos_in_group = order[start..=end].iter().filter(|&&i| labels[i]).count() as u128;
        twice_rank_sum += twice_rank * pos_in_group;
        start = end + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * negatives as u128) as f64)
}

/// Row-wise softmax of `[n, classes]` logits.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        out.extend(row.iter().map(|v| (v - max).exp() / denom));
    }
    out
}

/// One-vs-rest AUROC per class and their mean.
pub fn macro_auroc(probs: &[f64], labels: &[usize]) -> Result<([f64; N_CLASSES], f64)> {
    if probs.len() != labels.len() * N_CLASSES {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", probs.len(), labels.len())));
    }
    let mut per_class = [0.0; N_CLASSES];
    for (c, slot) in per_class.iter_mut().enumerate() {
        let scores: Vec<f64> = probs.chunks(N_CLASSES).map(|r| r[c]).collect();
        let binary: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        *slot = auroc(&scores, &binary)?;
    }
    Ok((per_class, per_class.iter().sum::<f64>() / N_CLASSES as f64))
}

pub fn accuracy(probs: &[f64], labels: &[usize]) -> f64 {
    let hits = probs
        .chunks(N_CLASSES)
        .zip(labels)
        .filter(|(row, &l)| (0..N_CLASSES).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))) == Some(l))
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub auroc_per_class: [f64; N_CLASSES],
    pub auroc_macro: f64,
    pub accuracy: f64,
}

/// Metrics from class logits `[n, 4]`.
pub fn evaluate_scores(logits: &[f64], labels: &[usize]) -> Result<Evaluation> {
    let probs = softmax_rows(logits, N_CLASSES);
    let (auroc_per_class, auroc_macro) = macro_auroc(&probs, labels)?;
    Ok(Evaluation { auroc_per_class, auroc_macro, accuracy: accuracy(&probs, labels) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Validation metrics, when a validation split was supplied.
    pub validation: Option<Evaluation>,
}

pub const METRICS_HEADER: &str = "kind,epoch,loss,auroc_macro,auroc_afib,auroc_gsvt,auroc_sb,auroc_sr,accuracy";

/// Per-epoch losses plus final test metrics. Every phase writes the same
/// CSV schema: one `epoch` row per epoch and a closing `summary` row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub phase: String,
    pub epochs: Vec<EpochMetrics>,
    pub test: Option<Evaluation>,
    /// Resolved settings echoed for provenance, as `(key, value)` pairs.
    pub run_metadata: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn new(phase: &str) -> Self {
        MetricsReport { phase: phase.to_string(), epochs: Vec::new(), test: None, run_metadata: Vec::new() }
    }

    pub fn loss_curve(&self) -> Vec<(usize, f64)> {
        self.epochs.iter().map(|e| (e.epoch, e.loss)).collect()
    }

    /// Epoch with the highest validation macro AUROC (first on ties).
    pub fn best_validation_epoch(&self) -> Option<usize> {
        self.epochs
            .iter()
            .filter_map(|e| e.validation.map(|v| (e.epoch, v.auroc_macro)))
            .fold(None, |best: Option<(usize, f64)>, (e, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((e, a)),
            })
            .map(|(e, _)| e)
    }

    pub fn to_csv(&self) -> String {
        fn fmt_eval(e: Option<&Evaluation>) -> String {
            match e {
                Some(e) => format!(
                    "{:?},{:?},{:?},{:?},{:?},{:?}",
                    e.auroc_macro,
                    e.auroc_per_class[0],
                    e.auroc_per_class[1],
                    e.auroc_per_class[2],
                    e.auroc_per_class[3],
                    e.accuracy
                ),
                None => ",,,,,".to_string(),
            }
        }
        let mut out = String::new();
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("epoch,{},{:?},{}\n", e.epoch, e.loss, fmt_eval(e.validation.as_ref())));
        }
        let (last_epoch, last_loss) = match self.epochs.last() {
            Some(e) => (e.epoch.to_string(), format!("{:?}", e.loss)),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!("summary,{last_epoch},{last_loss},{}\n", fmt_eval(self.test.as_ref())));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable one-line summary of the test metrics.
    pub fn summary_line(&self) -> String {
        match &self.test {
            Some(e) => {
                let per: Vec<String> = MergedClass::ALL
                    .iter()
                    .zip(e.auroc_per_class)
                    .map(|(c, a)| format!("{}={a:.4}", c.name()))
                    .collect();
                format!("{}: macro AUROC {:.4} ({}) accuracy {:.4}", self.phase, e.auroc_macro, per.join(" "), e.accuracy)
            }
            None => match self.epochs.last() {
                Some(e) => format!("{}: final loss {:.6} after {} epochs", self.phase, e.loss, e.epoch),
                None => format!("{}: no epochs run", self.phase),
            },
        }
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
