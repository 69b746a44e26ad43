//! Parametric 12-lead ECG generator.
//!
//! Every beat is a sum of Gaussian bumps (P, Q, R, S, T) placed relative to
//! the R-peak time. Leads see each wave through a projection gain derived
//! from the electrical axis (limb leads) or a fixed precordial profile.
//! Class identity enters through the rate range, RR regularity, presence of
//! P waves and fibrillatory baseline activity.

use std::f64::consts::PI;

use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AgeBucket, Dataset, EcgRecord, MergedClass, RhythmCode, Sex, Signal, CHAPMAN_SAMPLES, CHAPMAN_SAMPLING_RATE_HZ, N_CLASSES, N_LEADS};
use crate::attributes::AttributeVector;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag, Rng};

/// Limb lead angles in degrees (I, II, III, aVR, aVL, aVF).
const LIMB_ANGLES: [f64; 6] = [0.0, 60.0, 120.0, -150.0, -30.0, 90.0];
const PRECORDIAL_R: [f64; 6] = [0.2, 0.4, 0.7, 1.0, 1.1, 0.9];
const PRECORDIAL_S: [f64; 6] = [1.2, 1.1, 0.8, 0.5, 0.3, 0.2];
const PRECORDIAL_Q: [f64; 6] = [0.0, 0.0, 0.3, 0.6, 0.8, 0.8];
const PRECORDIAL_T: [f64; 6] = [0.3, 0.6, 0.9, 1.0, 0.9, 0.7];
const PRECORDIAL_P: [f64; 6] = [0.6, 0.5, 0.5, 0.5, 0.5, 0.5];
const P_AXIS: f64 = 50.0;

const AMP_P: f64 = 0.15;
const AMP_Q: f64 = -0.1;
const AMP_R: f64 = 1.2;
const AMP_S: f64 = -0.3;
const AMP_T: f64 = 0.3;
const AMP_F: f64 = 0.05;

/// Beats are only placed with their R peak at least this far from either end.
const EDGE_MARGIN_S: f64 = 0.2;
/// R-peak position in the 600-sample median-beat frame used for the
/// q_onset / q_offset / t_offset attributes.
const MEDIAN_BEAT_R: f64 = 300.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub class_proportions: [f64; N_CLASSES],
    pub noise_std: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub sampling_rate_hz: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_records: 400,
            class_proportions: [0.25; N_CLASSES],
            noise_std: 0.01,
            seed: 0,
            n_samples: CHAPMAN_SAMPLES,
            sampling_rate_hz: CHAPMAN_SAMPLING_RATE_HZ,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let p = &self.class_proportions;
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProportions(format!("class proportions {p:?} must be nonnegative and sum to 1")));
        }
        let nonzero = p.iter().filter(|v| **v > 0.0).count();
        if self.n_records < nonzero.max(1) {
            return Err(Error::InvalidProportions(format!(
                "{} records cannot cover {nonzero} classes with nonzero proportion",
                self.n_records
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        if self.sampling_rate_hz == 0 || (self.n_samples as f64) < 2.0 * EDGE_MARGIN_S * self.sampling_rate_hz as f64 + 1.0 {
            return Err(Error::InvalidConfig("synthetic signal too short for the sampling rate".into()));
        }
        Ok(())
    }

    /// Per-class record counts by largest remainder.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let n = self.n_records as f64;
        let mut counts = [0usize; N_CLASSES];
        let mut rema = [(0.0, 0usize); N_CLASSES];
        for (i, &p) in self.class_proportions.iter().enumerate() {
            counts[i] = (p * n).floor() as usize;
            rema[i] = (p * n - counts[i] as f64, i);
        }
        let mut left = self.n_records - counts.iter().sum::<usize>();
        rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(r, i) in &rema {
            if left == 0 {
                break;
            }
            if r > 0.0 || self.class_proportions[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        counts
    }
}

/// Record-level generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatParams {
    pub rate_bpm: f64,
    /// Half-width of the uniform RR perturbation, as a fraction of the mean RR.
    pub rr_irregularity: f64,
    pub p_wave: bool,
    pub pr_s: f64,
    pub qrs_s: f64,
    pub qtc_s: f64,
    pub r_axis_deg: f64,
    pub t_axis_deg: f64,
    pub fibrillation_hz: Option<f64>,
}

impl BeatParams {
    /// Regular sinus-like beat at a fixed rate with mid-range morphology.
    pub fn regular(rate_bpm: f64) -> Self {
        BeatParams {
            rate_bpm,
            rr_irregularity: 0.0,
            p_wave: true,
            pr_s: 0.16,
            qrs_s: 0.09,
            qtc_s: 0.42,
            r_axis_deg: 45.0,
            t_axis_deg: 40.0,
            fibrillation_hz: None,
        }
    }

    pub fn sample(class: MergedClass, rng: &mut Rng) -> Self {
        let rate_bpm = match class {
            MergedClass::Sr => rng.gen_range(60.0..100.0),
            MergedClass::Sb => rng.gen_range(40.0..55.0),
            MergedClass::Gsvt => rng.gen_range(150.0..220.0),
            MergedClass::Afib => rng.gen_range(70.0..150.0),
        };
        let afib = class == MergedClass::Afib;
        BeatParams {
            rate_bpm,
            rr_irregularity: if afib { 0.3 } else { 0.0 },
            p_wave: !afib,
            pr_s: rng.gen_range(0.14..0.20),
            qrs_s: rng.gen_range(0.08..0.11),
            qtc_s: rng.gen_range(0.39..0.44),
            r_axis_deg: rng.gen_range(0.0..75.0),
            t_axis_deg: rng.gen_range(20.0..70.0),
            fibrillation_hz: if afib { Some(rng.gen_range(5.0..7.0)) } else { None },
        }
    }
}

struct LeadGains {
    p: [f64; N_LEADS],
    q: [f64; N_LEADS],
    r: [f64; N_LEADS],
    s: [f64; N_LEADS],
    t: [f64; N_LEADS],
}

fn lead_gains(params: &BeatParams) -> LeadGains {
    let mut g = LeadGains { p: [0.0; N_LEADS], q: [0.0; N_LEADS], r: [0.0; N_LEADS], s: [0.0; N_LEADS], t: [0.0; N_LEADS] };
    for (i, &theta) in LIMB_ANGLES.iter().enumerate() {
        let qrs = ((params.r_axis_deg - theta) * PI / 180.0).cos();
        g.q[i] = qrs;
        g.r[i] = qrs;
        g.s[i] = qrs;
        g.t[i] = ((params.t_axis_deg - theta) * PI / 180.0).cos();
        g.p[i] = ((P_AXIS - theta) * PI / 180.0).cos();
    }
    for i in 0..6 {
        g.q[6 + i] = PRECORDIAL_Q[i];
        g.r[6 + i] = PRECORDIAL_R[i];
        g.s[6 + i] = PRECORDIAL_S[i];
        g.t[6 + i] = PRECORDIAL_T[i];
        g.p[6 + i] = PRECORDIAL_P[i];
    }
    g
}

fn add_bump(signal: &mut Signal, gains: &[f64; N_LEADS], amp: f64, center_s: f64, sigma_s: f64) {
    let fs = signal.sampling_rate_hz() as f64;
    let n = signal.samples();
    let lo = ((center_s - 5.0 * sigma_s) * fs).floor().max(0.0) as usize;
    let hi = (((center_s + 5.0 * sigma_s) * fs).ceil().max(0.0) as usize).min(n.saturating_sub(1));
    if lo > hi || lo >= n {
        return;
    }
    let bump: Vec<f64> = (lo..=hi)
        .map(|k| {
            let dt = k as f64 / fs - center_s;
            amp * (-(dt * dt) / (2.0 * sigma_s * sigma_s)).exp()
        })
        .collect();
    for (lead, &gain) in gains.iter().enumerate() {
        if gain == 0.0 {
            continue;
        }
        let row = signal.lead_mut(lead);
        for (k, b) in (lo..=hi).zip(&bump) {
            row[k] += (gain * b) as f32;
        }
    }
}

/// Build one noiseless-or-noisy record from its parameters. The first R
/// peak is placed at a random whole-sample offset; AFIB-style RR
/// perturbations and fibrillatory phases also come from `rng`.
pub fn synthesize_record(
    params: &BeatParams,
    n_samples: usize,
    sampling_rate_hz: u32,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<(Signal, AttributeVector)> {
    let fs = sampling_rate_hz as f64;
    let duration = n_samples as f64 / fs;
    let mean_rr = 60.0 / params.rate_bpm;
    let first = ((EDGE_MARGIN_S + rng.gen_range(0.0..mean_rr)) * fs).round() / fs;
    let mut r_times = vec![first];
    let mut rr_used = vec![mean_rr];
    loop {
        let rr = if params.rr_irregularity > 0.0 {
            mean_rr * rng.gen_range(1.0 - params.rr_irregularity..1.0 + params.rr_irregularity)
        } else {
            mean_rr
        };
        let next = r_times[r_times.len() - 1] + rr;
        if next > duration - EDGE_MARGIN_S {
            break;
        }
        r_times.push(next);
        rr_used.push(rr);
    }

    let gains = lead_gains(params);
    let mut signal = Signal::zeros(N_LEADS, n_samples, sampling_rate_hz);
    let qrs = params.qrs_s;
    for (&r, &rr) in r_times.iter().zip(&rr_used) {
        if params.p_wave {
            add_bump(&mut signal, &gains.p, AMP_P, r - params.pr_s, 0.02);
        }
        add_bump(&mut signal, &gains.q, AMP_Q, r - 0.3 * qrs, qrs / 10.0);
        add_bump(&mut signal, &gains.r, AMP_R, r, qrs / 12.0);
        add_bump(&mut signal, &gains.s, AMP_S, r + 0.3 * qrs, qrs / 10.0);
        let qt = params.qtc_s * rr.sqrt();
        let sigma_t = 0.04 * rr.sqrt();
        let t_offset = r - qrs / 2.0 + qt;
        add_bump(&mut signal, &gains.t, AMP_T, t_offset - 2.5 * sigma_t, sigma_t);
    }
    if let Some(f) = params.fibrillation_hz {
        for lead in 0..N_LEADS {
            let gain = match lead {
                6 => 1.0,
                1 | 2 | 5 => 0.6,
                _ => 0.4,
            };
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (k, v) in signal.lead_mut(lead).iter_mut().enumerate() {
                *v += (AMP_F * gain * (2.0 * PI * f * k as f64 / fs + phase).sin()) as f32;
            }
        }
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("valid noise std");
        for v in signal.data_mut() {
            *v += normal.sample(rng) as f32;
        }
    }

    let n = r_times.len();
    let span = r_times[n - 1] - r_times[0];
    let ventricular_rate = if n > 1 { 60.0 * (n - 1) as f64 / span } else { params.rate_bpm };
    let mean_rr_obs = if n > 1 { span / (n - 1) as f64 } else { mean_rr };
    let qt = params.qtc_s * mean_rr_obs.sqrt();
    let atrial_rate = match params.fibrillation_hz {
        Some(f) => 60.0 * f,
        None => ventricular_rate,
    };
    let q_onset = MEDIAN_BEAT_R - qrs / 2.0 * fs;
    let attrs = AttributeVector::new([
        ventricular_rate,
        atrial_rate,
        qrs * 1000.0,
        qt * 1000.0,
        params.qtc_s * 1000.0,
        params.r_axis_deg,
        params.t_axis_deg,
        n as f64,
        q_onset,
        MEDIAN_BEAT_R + qrs / 2.0 * fs,
        q_onset + qt * fs,
    ])?;
    Ok((signal, attrs))
}

fn rhythm_for(class: MergedClass, rng: &mut Rng) -> RhythmCode {
    let table: &[(RhythmCode, u32)] = match class {
        MergedClass::Afib => &[(RhythmCode::Afib, 1780), (RhythmCode::Af, 445)],
        MergedClass::Gsvt => &[
            (RhythmCode::St, 1568),
            (RhythmCode::Svt, 587),
            (RhythmCode::At, 121),
            (RhythmCode::Avnrt, 16),
            (RhythmCode::Avrt, 8),
            (RhythmCode::Saawr, 7),
        ],
        MergedClass::Sb => &[(RhythmCode::Sb, 1)],
        MergedClass::Sr => &[(RhythmCode::Sr, 1826), (RhythmCode::Si, 399)],
    };
    let dist = WeightedIndex::new(table.iter().map(|(_, w)| *w)).expect("positive weights");
    table[dist.sample(rng)].0
}

/// Generate a labelled dataset with ground-truth attributes. Signals are in
/// millivolt-like units and are not normalised.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = spec.class_counts();
    let mut classes: Vec<MergedClass> =
        counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat(MergedClass::ALL[c]).take(k)).collect();
    classes.shuffle(&mut rng_from(spec.seed, &[tag("classes")]));

    let records = classes
        .par_iter()
        .enumerate()
        .map(|(i, &class)| {
            let mut rng = rng_from(spec.seed, &[tag("record"), i as u64]);
            let rhythm = rhythm_for(class, &mut rng);
            let bucket = AgeBucket::ALL[rng.gen_range(0..AgeBucket::ALL.len())];
            let (lo, hi) = bucket.range();
            let age_years = rng.gen_range(lo..=hi);
            let sex = if rng.gen_bool(0.5) { Sex::Male } else { Sex::Female };
            let params = BeatParams::sample(class, &mut rng);
            let (signal, attrs) =
                synthesize_record(&params, spec.n_samples, spec.sampling_rate_hz, spec.noise_std, &mut rng)?;
            Ok(EcgRecord {
                record_id: format!("SYN{i:05}"),
                signal,
                age_years,
                sex,
                rhythm,
                conditions: Vec::new(),
                attributes: Some(attrs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    /// Local maxima of V4 above half its max: an oracle independent of the
    /// attribute extractor, valid on low-noise generator output because V4
    /// has a fixed tall R wave and small P and T waves.
    fn r_peaks_oracle(signal: &Signal) -> Vec<usize> {
        let x = signal.lead(9);
        let max = x.iter().cloned().fold(f32::MIN, f32::max);
        let refractory = (0.2 * signal.sampling_rate_hz() as f64) as usize;
        let mut peaks: Vec<usize> = Vec::new();
        for k in 1..x.len() - 1 {
            if x[k] > 0.5 * max && x[k] >= x[k - 1] && x[k] > x[k + 1] {
                match peaks.last() {
                    Some(&p) if k - p < refractory => {
                        if x[k] > x[p] {
                            *peaks.last_mut().unwrap() = k;
                        }
                    }
                    _ => peaks.push(k),
                }
            }
        }
        peaks
    }

    fn rr_cv(peaks: &[usize]) -> f64 {
        let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let mean = rr.iter().sum::<f64>() / rr.len() as f64;
        let var = rr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr.len() as f64;
        var.sqrt() / mean
    }

    #[test]
    fn proportions_are_respected() {
        let ds = generate_synthetic(&SyntheticSpec { n_records: 400, noise_std: 0.01, seed: 1, ..Default::default() }).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.class_counts(), [100; 4]);
        for r in ds.records() {
            assert_eq!(r.signal.leads(), 12);
            assert_eq!(r.signal.samples(), 5000);
            assert!(r.signal.is_finite());
            assert!(r.age_years >= 18);
        }
    }

    #[test]
    fn invalid_proportions() {
        let spec = SyntheticSpec { class_proportions: [0.5, 0.5, 0.5, 0.0], ..Default::default() };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidProportions(_))));
        let spec = SyntheticSpec { n_records: 3, ..Default::default() };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidProportions(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec { n_records: 8, seed: 5, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn noiseless_shapes_identical_up_to_phase() {
        let params = BeatParams::sample(MergedClass::Sr, &mut rng_from(9, &[]));
        let (a, _) = synthesize_record(&params, 5000, 500, 0.0, &mut rng_from(1, &[])).unwrap();
        let (b, _) = synthesize_record(&params, 5000, 500, 0.0, &mut rng_from(2, &[])).unwrap();
        let (pa, pb) = (r_peaks_oracle(&a), r_peaks_oracle(&b));
        // Compare one full beat cycle around the second R peak of each.
        let (ca, cb) = (pa[1], pb[1]);
        for lead in 0..12 {
            for off in 0..300 {
                let (x, y) = (a.lead(lead)[ca - 150 + off], b.lead(lead)[cb - 150 + off]);
                assert!((x - y).abs() < 1e-5, "lead {lead} offset {off}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn rr_regularity_by_class() {
        let ds = generate_synthetic(&SyntheticSpec { n_records: 80, noise_std: 0.01, seed: 3, ..Default::default() }).unwrap();
        for r in ds.records() {
            let peaks = r_peaks_oracle(&r.signal);
            assert_eq!(peaks.len() as f64, r.attributes.as_ref().unwrap().qrs_count(), "{}", r.record_id);
            let cv = rr_cv(&peaks);
            match r.merged_class() {
                MergedClass::Afib => assert!(cv > 0.1, "{} cv {cv}", r.record_id),
                MergedClass::Sr => assert!(cv < 0.02, "{} cv {cv}", r.record_id),
                _ => {}
            }
        }
    }

    #[test]
    fn class_rates_follow_ranges() {
        let ds = generate_synthetic(&SyntheticSpec { n_records: 80, seed: 4, ..Default::default() }).unwrap();
        for r in ds.records() {
            let rate = r.attributes.as_ref().unwrap().ventricular_rate();
            let ok = match r.merged_class() {
                MergedClass::Sr => (60.0..=100.0).contains(&rate),
                MergedClass::Sb => (40.0..=55.0).contains(&rate),
                MergedClass::Gsvt => (150.0..=220.0).contains(&rate),
                MergedClass::Afib => (45.0..=220.0).contains(&rate),
            };
            assert!(ok, "{} {:?} {rate}", r.record_id, r.merged_class());
        }
    }
}
