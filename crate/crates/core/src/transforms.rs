//! Signal-level view constructors: temporal segmentation, lead selection
//! and stochastic augmentations. Every function is pure given its seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Signal;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    pub v_segments: usize,
    pub total_samples: usize,
}

impl SegmentationSpec {
    pub fn new(v_segments: usize, total_samples: usize) -> Result<Self> {
        let spec = SegmentationSpec { v_segments, total_samples };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_segments == 0 || self.total_samples == 0 {
            return Err(Error::InvalidConfig("segmentation needs positive v_segments and total_samples".into()));
        }
        if self.total_samples % self.v_segments != 0 {
            return Err(Error::LengthMismatch {
                len: self.total_samples,
                segments: self.v_segments,
                expected: self.total_samples / self.v_segments * self.v_segments,
            });
        }
        Ok(())
    }

    pub fn segment_len(&self) -> usize {
        self.total_samples / self.v_segments
    }
}

impl Default for SegmentationSpec {
    fn default() -> Self {
        SegmentationSpec { v_segments: 2, total_samples: crate::data::CHAPMAN_SAMPLES }
    }
}

/// Copy samples `[start, start + len)` of every lead.
pub fn window(x: &Signal, start: usize, len: usize) -> Result<Signal> {
    if start + len > x.samples() {
        return Err(Error::IndexOutOfRange { index: start + len, bound: x.samples() + 1 });
    }
    let mut data = Vec::with_capacity(x.leads() * len);
    for l in 0..x.leads() {
        data.extend_from_slice(&x.lead(l)[start..start + len]);
    }
    Signal::new(x.leads(), len, x.sampling_rate_hz(), data)
}

/// `V` contiguous equal-length segments in temporal order.
pub fn temporal_segments(x: &Signal, spec: &SegmentationSpec) -> Result<Vec<Signal>> {
    spec.validate()?;
    if x.samples() != spec.total_samples {
        return Err(Error::LengthMismatch {
            len: x.samples(),
            segments: spec.v_segments,
            expected: spec.total_samples,
        });
    }
    let len = spec.segment_len();
    (0..spec.v_segments).map(|v| window(x, v * len, len)).collect()
}

pub fn sample_lead(x: &Signal, lead_index: usize) -> Result<&[f32]> {
    if lead_index >= x.leads() {
        return Err(Error::IndexOutOfRange { index: lead_index, bound: x.leads() });
    }
    Ok(x.lead(lead_index))
}

/// Repeat one lead across `leads` identical rows so single-lead views fit a
/// multi-lead encoder.
pub fn tile_lead(lead: &[f32], leads: usize, sampling_rate_hz: u32) -> Signal {
    let data = lead.iter().copied().cycle().take(lead.len() * leads).collect();
    Signal::new(leads, lead.len(), sampling_rate_hz, data).expect("tiled shape is consistent")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Jitter,
    Scale,
    Flip,
    Rotate,
    TimeWarp,
    SizeWarp,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Jitter,
        Augmentation::Scale,
        Augmentation::Flip,
        Augmentation::Rotate,
        Augmentation::TimeWarp,
        Augmentation::SizeWarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Jitter => "jitter",
            Augmentation::Scale => "scale",
            Augmentation::Flip => "flip",
            Augmentation::Rotate => "rotate",
            Augmentation::TimeWarp => "time_warp",
            Augmentation::SizeWarp => "size_warp",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAugmentation(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub enabled: Vec<Augmentation>,
    pub jitter_std: f64,
    pub scale_range: (f64, f64),
    pub warp_knots: usize,
    pub warp_strength: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            enabled: Augmentation::ALL.to_vec(),
            jitter_std: 0.05,
            scale_range: (0.8, 1.2),
            warp_knots: 4,
            warp_strength: 0.2,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale_range must satisfy 0 < low <= high, got ({lo}, {hi})")));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("jitter_std must be nonnegative, got {}", self.jitter_std)));
        }
        if !(self.warp_strength >= 0.0 && self.warp_strength.is_finite()) {
            return Err(Error::InvalidConfig(format!("warp_strength must be nonnegative, got {}", self.warp_strength)));
        }
        if self.warp_knots == 0 {
            return Err(Error::InvalidConfig("warp_knots must be positive".into()));
        }
        Ok(())
    }

    fn distinct_enabled(&self) -> Vec<Augmentation> {
        let mut v = self.enabled.clone();
        v.sort();
        v.dedup();
        v
    }
}

/// Linear interpolation of `row` at fractional positions.
fn resample(row: &[f32], positions: &[f64]) -> Vec<f32> {
    let last = row.len() - 1;
    positions
        .iter()
        .map(|&p| {
            let p = p.clamp(0.0, last as f64);
            let i = (p.floor() as usize).min(last);
            let frac = p - i as f64;
            if frac == 0.0 || i == last {
                row[i]
            } else {
                (row[i] as f64 * (1.0 - frac) + row[i + 1] as f64 * frac) as f32
            }
        })
        .collect()
}

fn map_rows(x: &Signal, mut f: impl FnMut(&[f32]) -> Vec<f32>) -> Signal {
    let mut data = Vec::with_capacity(x.data().len());
    for l in 0..x.leads() {
        data.extend(f(x.lead(l)));
    }
    Signal::new(x.leads(), x.samples(), x.sampling_rate_hz(), data).expect("row maps preserve length")
}

/// Monotone warp of `[0, n-1]` onto itself with fixed endpoints. The local
/// speed is interpolated between `knots + 2` random levels in
/// `1 ± strength`, then integrated.
pub fn warp_positions(n: usize, knots: usize, strength: f64, rng: &mut Rng) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let s = strength.min(0.9);
    let levels: Vec<f64> = (0..knots + 2).map(|_| 1.0 + s * rng.gen_range(-1.0..=1.0)).collect();
    let segments = (knots + 1) as f64;
    let speed = |k: usize| {
        let u = k as f64 / (n - 1) as f64 * segments;
        let i = (u.floor() as usize).min(knots);
        let frac = u - i as f64;
        levels[i] * (1.0 - frac) + levels[i + 1] * frac
    };
    let mut cum = vec![0.0; n];
    for k in 1..n {
        cum[k] = cum[k - 1] + 0.5 * (speed(k - 1) + speed(k));
    }
    let total = cum[n - 1];
    let mut pos: Vec<f64> = cum.iter().map(|c| c / total * (n - 1) as f64).collect();
    pos[0] = 0.0;
    pos[n - 1] = (n - 1) as f64;
    pos
}

/// Apply one augmentation. The output depends only on `(x, kind, spec.seed,
/// draw_seed)` and always has the shape of `x`.
pub fn apply_augmentation(x: &Signal, kind: Augmentation, spec: &AugmentationSpec, draw_seed: u64) -> Result<Signal> {
    if !spec.enabled.contains(&kind) {
        return Err(Error::UnknownAugmentation(kind.name().to_string()));
    }
    spec.validate()?;
    let mut rng = rng_from(spec.seed, &[tag(kind.name()), draw_seed]);
    let n = x.samples();
    let out = match kind {
        Augmentation::Jitter => {
            if spec.jitter_std == 0.0 {
                x.clone()
            } else {
                let normal = Normal::new(0.0, spec.jitter_std).expect("validated std");
                let mut y = x.clone();
                for v in y.data_mut() {
                    *v = (*v as f64 + normal.sample(&mut rng)) as f32;
                }
                y
            }
        }
        Augmentation::Scale => {
            let (lo, hi) = spec.scale_range;
            let factor = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let mut y = x.clone();
            for v in y.data_mut() {
                *v = (*v as f64 * factor) as f32;
            }
            y
        }
        Augmentation::Flip => {
            let mut y = x.clone();
            for v in y.data_mut() {
                *v = -*v;
            }
            y
        }
        Augmentation::Rotate => {
            let leads = x.leads();
            let shift = if leads > 1 { rng.gen_range(1..leads) } else { 0 };
            let mut data = Vec::with_capacity(x.data().len());
            for l in 0..leads {
                data.extend_from_slice(x.lead((l + shift) % leads));
            }
            Signal::new(leads, n, x.sampling_rate_hz(), data)?
        }
        Augmentation::TimeWarp => {
            let pos = warp_positions(n, spec.warp_knots, spec.warp_strength, &mut rng);
            map_rows(x, |row| resample(row, &pos))
        }
        Augmentation::SizeWarp => {
            let crop = ((0.8 * n as f64).ceil() as usize).clamp(1, n);
            let offset = rng.gen_range(0..=n - crop);
            let step = if n > 1 { (crop - 1) as f64 / (n - 1) as f64 } else { 0.0 };
            let pos: Vec<f64> = (0..n).map(|k| offset as f64 + k as f64 * step).collect();
            map_rows(x, |row| resample(row, &pos))
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite("augmentation"));
    }
    Ok(out)
}

/// Two views of `x` under two distinct, randomly chosen augmentations.
pub fn draw_view_pair(x: &Signal, spec: &AugmentationSpec, rng: &mut Rng) -> Result<(Signal, Signal)> {
    let kinds = spec.distinct_enabled();
    if kinds.len() < 2 {
        return Err(Error::InsufficientAugmentations(kinds.len()));
    }
    let picked = sample_indices(rng, kinds.len(), 2);
    let (a, b) = (kinds[picked.index(0)], kinds[picked.index(1)]);
    let (sa, sb): (u64, u64) = (rng.gen(), rng.gen());
    Ok((apply_augmentation(x, a, spec, sa)?, apply_augmentation(x, b, spec, sb)?))
}
