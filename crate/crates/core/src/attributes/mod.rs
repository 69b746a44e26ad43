//! Wave-attribute vectors: storage, train-split standardisation, Euclidean
//! neighbourhoods and extraction from raw signals.

mod extract;

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use extract::{detect_r_peaks, extract_attributes, extract_from_signal};

pub const N_ATTRIBUTES: usize = 11;

/// Canonical attribute order, frozen in the manifest format.
pub const ATTRIBUTE_NAMES: [&str; N_ATTRIBUTES] = [
    "ventricular_rate",
    "atrial_rate",
    "qrs_duration",
    "qt_interval",
    "qt_corrected",
    "r_axis",
    "t_axis",
    "qrs_count",
    "q_onset",
    "q_offset",
    "t_offset",
];

/// Indices that must be nonnegative: rates, durations and the beat count.
const NONNEGATIVE: [usize; 6] = [0, 1, 2, 3, 4, 7];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeVector {
    values: [f64; N_ATTRIBUTES],
}

impl AttributeVector {
    pub fn new(values: [f64; N_ATTRIBUTES]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidAttribute(format!("{} is not finite", ATTRIBUTE_NAMES[i])));
        }
        if let Some(&i) = NONNEGATIVE.iter().find(|&&i| values[i] < 0.0) {
            return Err(Error::InvalidAttribute(format!("{} is negative ({})", ATTRIBUTE_NAMES[i], values[i])));
        }
        Ok(AttributeVector { values })
    }

    pub fn values(&self) -> &[f64; N_ATTRIBUTES] {
        &self.values
    }

    pub fn ventricular_rate(&self) -> f64 {
        self.values[0]
    }

    pub fn atrial_rate(&self) -> f64 {
        self.values[1]
    }

    pub fn qrs_duration(&self) -> f64 {
        self.values[2]
    }

    pub fn qrs_count(&self) -> f64 {
        self.values[7]
    }
}

/// Per-dimension mean and standard deviation fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub mean: [f64; N_ATTRIBUTES],
    pub std: [f64; N_ATTRIBUTES],
}

/// Dimensions whose spread is at or below this are dropped.
const MIN_STD: f64 = 1e-12;

impl AttributeStats {
    /// Population statistics over `vectors`.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a AttributeVector>) -> Result<Self> {
        let rows: Vec<&AttributeVector> = vectors.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::DegenerateStats("no attribute vectors to fit".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_ATTRIBUTES];
        let mut std = [0.0; N_ATTRIBUTES];
        for d in 0..N_ATTRIBUTES {
            mean[d] = rows.iter().map(|r| r.values[d]).sum::<f64>() / n;
            std[d] = (rows.iter().map(|r| (r.values[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
        }
        Ok(AttributeStats { mean, std })
    }

    /// Fit on every record of `dataset`, which must all carry attributes.
    pub fn fit_dataset(dataset: &Dataset) -> Result<Self> {
        require_attributes(dataset)?;
        Self::fit(dataset.records().iter().filter_map(|r| r.attributes.as_ref()))
    }

    /// Zero mean and unit spread: standardisation becomes the identity, so
    /// distances are taken on raw attribute units.
    pub fn identity() -> Self {
        AttributeStats { mean: [0.0; N_ATTRIBUTES], std: [1.0; N_ATTRIBUTES] }
    }

    pub fn kept_dims(&self) -> Vec<usize> {
        (0..N_ATTRIBUTES).filter(|&d| self.std[d] > MIN_STD).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "dimension,mean,std").expect("write to vec");
        for d in 0..N_ATTRIBUTES {
            writeln!(out, "{},{:?},{:?}", ATTRIBUTE_NAMES[d], self.mean[d], self.std[d]).expect("write to vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, reason: String| Error::MalformedRow { line, reason };
        let mut lines = text.lines();
        if lines.next() != Some("dimension,mean,std") {
            return Err(bad(1, "expected header dimension,mean,std".into()));
        }
        let mut stats = AttributeStats::identity();
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let [name, mean, std] = fields[..] else {
                return Err(bad(i + 2, format!("expected 3 fields, got {}", fields.len())));
            };
            if ATTRIBUTE_NAMES.get(i) != Some(&name) {
                return Err(bad(i + 2, format!("unexpected dimension {name:?}")));
            }
            stats.mean[i] = mean.parse().map_err(|_| bad(i + 2, format!("bad mean {mean:?}")))?;
            stats.std[i] = std.parse().map_err(|_| bad(i + 2, format!("bad std {std:?}")))?;
            seen += 1;
        }
        if seen != N_ATTRIBUTES {
            return Err(bad(seen + 2, format!("expected {N_ATTRIBUTES} dimensions, got {seen}")));
        }
        Ok(stats)
    }
}

/// Z-score the kept dimensions of `a`. Constant dimensions are dropped with
/// a warning.
pub fn standardize(a: &AttributeVector, stats: &AttributeStats) -> Result<Vec<f64>> {
    let kept = stats.kept_dims();
    if kept.is_empty() {
        return Err(Error::DegenerateStats("every attribute dimension has zero spread".into()));
    }
    if kept.len() < N_ATTRIBUTES {
        let dropped: Vec<&str> =
            (0..N_ATTRIBUTES).filter(|d| !kept.contains(d)).map(|d| ATTRIBUTE_NAMES[d]).collect();
        log::warn!("dropping constant attribute dimensions {dropped:?}");
    }
    Ok(kept.iter().map(|&d| (a.values[d] - stats.mean[d]) / stats.std[d]).collect())
}

pub fn attribute_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn require_attributes(dataset: &Dataset) -> Result<()> {
    let missing: Vec<String> =
        dataset.records().iter().filter(|r| r.attributes.is_none()).map(|r| r.record_id.clone()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingAttributes(missing))
    }
}

/// Standardised attribute matrix for one dataset, indexed like its records.
#[derive(Clone, Debug)]
pub struct AttributeIndex {
    rows: Vec<Vec<f64>>,
}

impl AttributeIndex {
    pub fn new(dataset: &Dataset, stats: &AttributeStats) -> Result<Self> {
        require_attributes(dataset)?;
        let kept = stats.kept_dims();
        if kept.is_empty() {
            return Err(Error::DegenerateStats("every attribute dimension has zero spread".into()));
        }
        if kept.len() < N_ATTRIBUTES {
            log::warn!("dropping {} constant attribute dimensions", N_ATTRIBUTES - kept.len());
        }
        let rows = dataset
            .records()
            .iter()
            .map(|r| {
                let a = r.attributes.as_ref().expect("checked above");
                kept.iter().map(|&d| (a.values[d] - stats.mean[d]) / stats.std[d]).collect()
            })
            .collect();
        Ok(AttributeIndex { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        attribute_distance(&self.rows[i], &self.rows[j]).expect("rows share dimensionality")
    }

    /// Indices `j != i` with distance at most `h`.
    pub fn neighbors(&self, i: usize, h: f64) -> Vec<usize> {
        (0..self.rows.len()).filter(|&j| j != i && self.distance(i, j) <= h).collect()
    }

    /// Nearest-rank 5th percentile of all pairwise distances; the default
    /// neighbourhood cutoff.
    pub fn default_cutoff(&self) -> Result<f64> {
        let n = self.rows.len();
        if n < 2 {
            return Err(Error::DegenerateStats("need at least two records for a distance cutoff".into()));
        }
        let mut d: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.distance(i, j))
            .collect();
        d.sort_by(f64::total_cmp);
        let rank = ((0.05 * d.len() as f64).ceil() as usize).max(1);
        Ok(d[rank - 1])
    }
}

/// Record ids within standardised distance `h` of `anchor`, in dataset order.
pub fn neighbors_within(anchor: &str, dataset: &Dataset, stats: &AttributeStats, h: f64) -> Result<Vec<String>> {
    let index = AttributeIndex::new(dataset, stats)?;
    let i = dataset
        .records()
        .iter()
        .position(|r| r.record_id == anchor)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown anchor record {anchor:?}")))?;
    Ok(index.neighbors(i, h).into_iter().map(|j| dataset.records()[j].record_id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn vector(v: f64) -> AttributeVector {
        AttributeVector::new([v; N_ATTRIBUTES]).unwrap()
    }

    #[test]
    fn validation() {
        let mut v = [1.0; N_ATTRIBUTES];
        v[5] = -30.0;
        assert!(AttributeVector::new(v).is_ok());
        v[2] = -1.0;
        assert!(matches!(AttributeVector::new(v), Err(Error::InvalidAttribute(_))));
        v[2] = f64::NAN;
        assert!(matches!(AttributeVector::new(v), Err(Error::InvalidAttribute(_))));
    }

    #[test]
    fn standardize_examples() {
        let stats = AttributeStats::fit(&[vector(1.0), vector(3.0)]).unwrap();
        assert_eq!(stats.mean, [2.0; N_ATTRIBUTES]);
        assert_eq!(stats.std, [1.0; N_ATTRIBUTES]);
        assert_eq!(standardize(&vector(2.0), &stats).unwrap(), vec![0.0; N_ATTRIBUTES]);
        assert_eq!(standardize(&vector(3.0), &stats).unwrap(), vec![1.0; N_ATTRIBUTES]);

        let mut a = [1.0; N_ATTRIBUTES];
        a[0] = 5.0;
        let stats = AttributeStats::fit(&[vector(1.0), AttributeVector::new(a).unwrap()]).unwrap();
        assert_eq!(stats.kept_dims(), vec![0]);
        assert_eq!(standardize(&vector(1.0), &stats).unwrap(), vec![-1.0]);

        let stats = AttributeStats::fit(&[vector(1.0), vector(1.0)]).unwrap();
        assert!(matches!(standardize(&vector(1.0), &stats), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn distance_examples() {
        let mut a = vec![0.0; N_ATTRIBUTES];
        a[0] = 3.0;
        a[1] = 4.0;
        assert_eq!(attribute_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(attribute_distance(&a, &[0.0; N_ATTRIBUTES]).unwrap(), 5.0);
        assert!(matches!(attribute_distance(&a, &[0.0; 3]), Err(Error::DimensionMismatch { left: 11, right: 3 })));
    }

    #[test]
    fn neighbor_extremes() {
        let ds = generate_synthetic(&SyntheticSpec { n_records: 20, seed: 2, ..Default::default() }).unwrap();
        let stats = AttributeStats::fit_dataset(&ds).unwrap();
        let id = &ds.records()[0].record_id;
        assert!(neighbors_within(id, &ds, &stats, 0.0).unwrap().is_empty());
        assert_eq!(neighbors_within(id, &ds, &stats, f64::INFINITY).unwrap().len(), 19);
        let stripped = ds.with_attributes(|_| Ok(None)).unwrap();
        assert!(matches!(neighbors_within(id, &stripped, &stats, 1.0), Err(Error::MissingAttributes(v)) if v.len() == 20));
    }

    #[test]
    fn stats_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let stats = AttributeStats::fit(&[vector(0.1), vector(7.3)]).unwrap();
        stats.write_csv(&path).unwrap();
        assert_eq!(AttributeStats::read_csv(&path).unwrap(), stats);
    }

    #[test]
    fn default_cutoff_is_low_percentile() {
        let ds = generate_synthetic(&SyntheticSpec { n_records: 40, seed: 8, ..Default::default() }).unwrap();
        let index = AttributeIndex::new(&ds, &AttributeStats::fit_dataset(&ds).unwrap()).unwrap();
        let h = index.default_cutoff().unwrap();
        let (mut below, mut total) = (0, 0);
        for i in 0..40 {
            for j in i + 1..40 {
                total += 1;
                below += (index.distance(i, j) <= h) as usize;
            }
        }
        assert!(below as f64 >= 0.05 * total as f64 && (below as f64) < 0.05 * total as f64 + 2.0);
    }

    fn point() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn distance_is_a_metric(a in point(), b in point(), c in point()) {
            let d = |x: &[f64], y: &[f64]| attribute_distance(x, y).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &a), 0.0);
            if a != b {
                prop_assert!(d(&a, &b) > 0.0);
            }
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn neighbourhoods_are_symmetric(seed in 0u64..1000, h in 0.5f64..4.0) {
            let ds = generate_synthetic(&SyntheticSpec { n_records: 12, seed, n_samples: 1500, ..Default::default() }).unwrap();
            let index = AttributeIndex::new(&ds, &AttributeStats::fit_dataset(&ds).unwrap()).unwrap();
            for i in 0..12 {
                for j in index.neighbors(i, h) {
                    prop_assert!(index.neighbors(j, h).contains(&i));
                }
            }
        }
    }
}
