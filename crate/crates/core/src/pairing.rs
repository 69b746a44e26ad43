//! Positive-pair strategies: turning a dataset into batches of views with an
//! explicit positive mask.
//!
//! Views are interleaved: anchor `a` of a batch owns views `2a` and `2a + 1`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeIndex, AttributeStats};
use crate::data::{AgeBucket, Dataset, EcgRecord, RhythmCode, Sex, Signal};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{rng_from, tag, Rng};
use crate::transforms::{draw_view_pair, sample_lead, tile_lead, window, AugmentationSpec, SegmentationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TemporalLead,
    Augment,
    Demographics,
    Rhythm,
    Attributes,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::TemporalLead,
        StrategyKind::Augment,
        StrategyKind::Demographics,
        StrategyKind::Rhythm,
        StrategyKind::Attributes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::TemporalLead => "temporal_lead",
            StrategyKind::Augment => "augment",
            StrategyKind::Demographics => "demographics",
            StrategyKind::Rhythm => "rhythm",
            StrategyKind::Attributes => "attributes",
        }
    }

    /// Strategies whose positives may span different recordings.
    pub fn is_cross_record(self) -> bool {
        matches!(self, StrategyKind::Demographics | StrategyKind::Rhythm | StrategyKind::Attributes)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalLeadMode {
    #[default]
    Time,
    Lead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub temporal_lead_mode: TemporalLeadMode,
    pub segmentation: SegmentationSpec,
    pub augment: AugmentationSpec,
    /// Attribute-distance cutoff; `None` picks the 5th percentile of
    /// pairwise distances on the dataset the pairer is built from.
    pub h: Option<f64>,
    /// Compare attributes in raw units instead of z-scores.
    pub raw_distance: bool,
    /// Rhythm grouping ignores condition codes.
    pub rhythm_only: bool,
    /// Anchors without any partner get an augmentation view pair instead of
    /// failing the batch.
    pub fallback: bool,
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec {
            kind: StrategyKind::Augment,
            temporal_lead_mode: TemporalLeadMode::Time,
            segmentation: SegmentationSpec::default(),
            augment: AugmentationSpec::default(),
            h: None,
            raw_distance: false,
            rhythm_only: false,
            fallback: true,
        }
    }
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec { kind, ..Default::default() }
    }

    /// Every section is validated even when the kind ignores it.
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.augment.validate()?;
        if let Some(h) = self.h {
            if !(h > 0.0) || h.is_nan() {
                return Err(Error::InvalidConfig(format!("strategy.h must be positive, got {h}")));
            }
        }
        if self.kind == StrategyKind::TemporalLead
            && self.temporal_lead_mode == TemporalLeadMode::Time
            && self.segmentation.segment_len() < 2
        {
            return Err(Error::InvalidConfig("temporal segments must hold at least two samples".into()));
        }
        Ok(())
    }

    /// Short label used to tag checkpoints and report rows.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::TemporalLead => match self.temporal_lead_mode {
                TemporalLeadMode::Time => "temporal_lead/time".into(),
                TemporalLeadMode::Lead => "temporal_lead/lead".into(),
            },
            k => k.name().into(),
        }
    }
}

/// Cell of the partition used by the group strategies.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    Demographics(AgeBucket, Sex),
    Rhythm(RhythmCode, Vec<String>),
}

pub fn group_key(record: &EcgRecord, kind: StrategyKind, rhythm_only: bool) -> Result<GroupKey> {
    match kind {
        StrategyKind::Demographics => {
            let bucket = record.age_bucket().ok_or_else(|| {
                Error::InvalidConfig(format!("record {} has age {} outside every bucket", record.record_id, record.age_years))
            })?;
            Ok(GroupKey::Demographics(bucket, record.sex))
        }
        StrategyKind::Rhythm => {
            let mut conditions = if rhythm_only { Vec::new() } else { record.conditions.clone() };
            conditions.sort();
            Ok(GroupKey::Rhythm(record.rhythm, conditions))
        }
        other => Err(Error::WrongStrategy(other.name().to_string())),
    }
}

/// Square boolean matrix over the views of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositiveMask {
    n: usize,
    bits: Vec<bool>,
}

impl PositiveMask {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                bits.push(f(i, j));
            }
        }
        PositiveMask { n, bits }
    }

    pub fn from_bits(n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::ShapeMismatch(format!("mask of {} entries for {n} views", bits.len())));
        }
        Ok(PositiveMask { n, bits })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Symmetric, zero diagonal, and at least one positive per row.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) {
                return Err(Error::MaskAsymmetry(format!("diagonal entry {i} is set")));
            }
            for j in i + 1..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(Error::MaskAsymmetry(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
            if !(0..self.n).any(|j| self.get(i, j)) {
                return Err(Error::NoPositive(i));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub views: Vec<Signal>,
    pub positive_mask: PositiveMask,
    pub anchor_ids: Vec<String>,
    /// Dataset indices of the anchors.
    pub anchors: Vec<usize>,
    /// Anchors (batch positions) that had no partner and used augmentations.
    pub fallbacks: Vec<usize>,
}

impl PairBatch {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Positive view pairs `(i, j)`, `i < j`, belonging to different anchors.
    pub fn cross_anchor_positives(&self) -> usize {
        let n = self.n_views();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| i / 2 != j / 2 && self.positive_mask.get(i, j)).count()
    }

    /// Views stacked into `[2B, leads, len]`.
    pub fn stack(&self) -> Result<Tensor<f32>> {
        stack_signals(&self.views)
    }
}

pub fn stack_signals(signals: &[Signal]) -> Result<Tensor<f32>> {
    let first = signals.first().ok_or_else(|| Error::ShapeMismatch("no signals to stack".into()))?;
    let (leads, len) = (first.leads(), first.samples());
    let mut data = Vec::with_capacity(signals.len() * leads * len);
    for s in signals {
        if (s.leads(), s.samples()) != (leads, len) {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack a {}x{} signal with {leads}x{len}",
                s.leads(),
                s.samples()
            )));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(vec![signals.len(), leads, len], data)
}

/// How each anchor relates to the rest of the dataset.
enum Relation {
    None,
    Groups { keys: Vec<GroupKey>, members: HashMap<GroupKey, Vec<usize>> },
    Attributes { index: AttributeIndex, h: f64 },
}

/// Batch builder for one dataset and strategy. Group keys and standardised
/// attributes are computed once up front.
pub struct Pairer<'a> {
    dataset: &'a Dataset,
    spec: StrategySpec,
    relation: Relation,
}

impl<'a> Pairer<'a> {
    pub fn new(dataset: &'a Dataset, spec: &StrategySpec) -> Result<Self> {
        spec.validate()?;
        let relation = match spec.kind {
            StrategyKind::Demographics | StrategyKind::Rhythm => {
                let keys = dataset
                    .records()
                    .iter()
                    .map(|r| group_key(r, spec.kind, spec.rhythm_only))
                    .collect::<Result<Vec<_>>>()?;
                let mut members: HashMap<GroupKey, Vec<usize>> = HashMap::new();
                for (i, k) in keys.iter().enumerate() {
                    members.entry(k.clone()).or_default().push(i);
                }
                Relation::Groups { keys, members }
            }
            StrategyKind::Attributes => {
                let stats = if spec.raw_distance { AttributeStats::identity() } else { AttributeStats::fit_dataset(dataset)? };
                let index = AttributeIndex::new(dataset, &stats)?;
                let h = match spec.h {
                    Some(h) => h,
                    None => index.default_cutoff()?,
                };
                log::info!("attribute neighbourhood cutoff h = {h:.4}");
                Relation::Attributes { index, h }
            }
            _ => Relation::None,
        };
        Ok(Pairer { dataset, spec: spec.clone(), relation })
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    /// Attribute cutoff in effect, for the attribute strategy.
    pub fn cutoff(&self) -> Option<f64> {
        match &self.relation {
            Relation::Attributes { h, .. } => Some(*h),
            _ => None,
        }
    }

    /// Whether two distinct dataset records form a positive pair.
    pub fn related(&self, i: usize, j: usize) -> bool {
        match &self.relation {
            Relation::None => false,
            Relation::Groups { keys, .. } => keys[i] == keys[j],
            Relation::Attributes { index, h } => index.distance(i, j) <= *h,
        }
    }

    /// Dataset records (other than `i`) that may serve as `i`'s partner view.
    fn partners(&self, i: usize) -> Vec<usize> {
        match &self.relation {
            Relation::None => Vec::new(),
            Relation::Groups { keys, members } => members[&keys[i]].iter().copied().filter(|&j| j != i).collect(),
            Relation::Attributes { index, h } => index.neighbors(i, *h),
        }
    }

    fn views_for(&self, position: usize, anchor: usize, rng: &mut Rng) -> Result<((Signal, Signal), bool)> {
        let x = &self.dataset.get(anchor).signal;
        match self.spec.kind {
            StrategyKind::TemporalLead => Ok((self.temporal_lead_views(x, rng)?, false)),
            StrategyKind::Augment => Ok((draw_view_pair(x, &self.spec.augment, rng)?, false)),
            _ => {
                let partners = self.partners(anchor);
                if let Some(&j) = partners.choose(rng) {
                    Ok(((x.clone(), self.dataset.get(j).signal.clone()), false))
                } else if self.spec.fallback {
                    Ok((draw_view_pair(x, &self.spec.augment, rng)?, true))
                } else {
                    Err(Error::EmptyPositive(2 * position))
                }
            }
        }
    }

    fn temporal_lead_views(&self, x: &Signal, rng: &mut Rng) -> Result<(Signal, Signal)> {
        match self.spec.temporal_lead_mode {
            TemporalLeadMode::Time => {
                let seg = &self.spec.segmentation;
                if x.samples() != seg.total_samples {
                    return Err(Error::LengthMismatch {
                        len: x.samples(),
                        segments: seg.v_segments,
                        expected: seg.total_samples,
                    });
                }
                let len = seg.segment_len();
                let start = rng.gen_range(0..seg.v_segments) * len;
                let half = len / 2;
                Ok((window(x, start, half)?, window(x, start + half, half)?))
            }
            TemporalLeadMode::Lead => {
                let picked = sample_indices(rng, x.leads(), 2);
                let a = sample_lead(x, picked.index(0))?;
                let b = sample_lead(x, picked.index(1))?;
                let fs = x.sampling_rate_hz();
                Ok((tile_lead(a, x.leads(), fs), tile_lead(b, x.leads(), fs)))
            }
        }
    }

    /// Batch over the given dataset indices. Views for each anchor come from
    /// a stream keyed by `(seed, position, anchor)`.
    pub fn batch(&self, anchors: &[usize], seed: u64) -> Result<PairBatch> {
        if anchors.len() < 2 {
            return Err(Error::InvalidConfig(format!("a batch needs at least 2 anchors, got {}", anchors.len())));
        }
        if let Some(&bad) = anchors.iter().find(|&&a| a >= self.dataset.len()) {
            return Err(Error::IndexOutOfRange { index: bad, bound: self.dataset.len() });
        }
        let built = anchors
            .par_iter()
            .enumerate()
            .map(|(pos, &a)| {
                let mut rng = rng_from(seed, &[tag("views"), pos as u64, a as u64]);
                self.views_for(pos, a, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut views = Vec::with_capacity(2 * anchors.len());
        let mut fallbacks = Vec::new();
        for (pos, ((v1, v2), fell_back)) in built.into_iter().enumerate() {
            views.push(v1);
            views.push(v2);
            if fell_back {
                fallbacks.push(pos);
            }
        }
        let positive_mask = PositiveMask::from_fn(2 * anchors.len(), |i, j| {
            let (a, b) = (i / 2, j / 2);
            if i == j {
                false
            } else if a == b {
                true
            } else {
                anchors[a] != anchors[b] && self.related(anchors[a], anchors[b])
            }
        });
        positive_mask.validate()?;
        Ok(PairBatch {
            views,
            positive_mask,
            anchor_ids: anchors.iter().map(|&a| self.dataset.get(a).record_id.clone()).collect(),
            anchors: anchors.to_vec(),
            fallbacks,
        })
    }
}

/// Shuffled anchor order for one epoch, chunked into batches. A trailing
/// chunk with fewer than two anchors is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[tag("epoch"), epoch as u64]));
    order.chunks(batch_size.max(2)).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// One batch of `batch_size` anchors drawn without replacement.
pub fn build_batch(dataset: &Dataset, spec: &StrategySpec, batch_size: usize, seed: u64) -> Result<PairBatch> {
    if batch_size > dataset.len() {
        return Err(Error::BatchTooLarge { requested: batch_size, available: dataset.len() });
    }
    let pairer = Pairer::new(dataset, spec)?;
    let picked = sample_indices(&mut rng_from(seed, &[tag("anchors")]), dataset.len(), batch_size);
    pairer.batch(&picked.into_vec(), seed)
}
