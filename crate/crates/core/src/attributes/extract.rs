//! R-peak detection and fiducial heuristics.
//!
//! Detection follows the classic derivative-energy pipeline on lead II:
//! band-pass (difference of centred moving averages), central derivative,
//! squaring, 150 ms moving-window integration, then an adaptive
//! signal/noise threshold with a 200 ms refractory period.

use super::AttributeVector;
use crate::data::{EcgRecord, Signal, LEAD_II};
use crate::error::{Error, Result};

const LEAD_I: usize = 0;
const LEAD_AVF: usize = 5;
const LEAD_V1: usize = 6;
/// R peak position in the synthetic median-beat frame for onset/offset indices.
const MEDIAN_BEAT_R: f64 = 300.0;

/// Centred moving average with a window of `w` samples, truncated at the edges.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn samples(seconds: f64, fs: f64) -> usize {
    ((seconds * fs).round() as usize).max(1)
}

fn band_pass(x: &[f64], fs: f64) -> Vec<f64> {
    let smooth = moving_average(x, samples(0.025, fs));
    let baseline = moving_average(x, samples(0.2, fs));
    smooth.iter().zip(&baseline).map(|(s, b)| s - b).collect()
}

fn energy(bp: &[f64]) -> Vec<f64> {
    let n = bp.len();
    (0..n)
        .map(|i| {
            let d = (bp[(i + 1).min(n - 1)] - bp[i.saturating_sub(1)]) / 2.0;
            d * d
        })
        .collect()
}

/// R-peak sample indices on lead II, in increasing order.
pub fn detect_r_peaks(signal: &Signal) -> Vec<usize> {
    let fs = signal.sampling_rate_hz() as f64;
    let x: Vec<f64> = signal.lead(LEAD_II).iter().map(|&v| v as f64).collect();
    if x.len() < 3 {
        return Vec::new();
    }
    let bp = band_pass(&x, fs);
    let mwi = moving_average(&energy(&bp), samples(0.15, fs));

    let learn = samples(2.0, fs).min(mwi.len());
    let mut spk = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let mut npk = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let refractory = samples(0.2, fs);

    let mut accepted: Vec<usize> = Vec::new();
    for i in 1..mwi.len() - 1 {
        if !(mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1]) {
            continue;
        }
        let threshold = npk + 0.25 * (spk - npk);
        let v = mwi[i];
        if v > threshold && v > 0.0 {
            match accepted.last_mut() {
                Some(last) if i - *last < refractory => {
                    if v > mwi[*last] {
                        *last = i;
                    }
                }
                _ => accepted.push(i),
            }
            spk = 0.125 * v + 0.875 * spk;
        } else {
            npk = 0.125 * v + 0.875 * npk;
        }
    }

    // Move each integrated-energy peak onto the largest band-passed deflection.
    let reach = samples(0.075, fs);
    let mut peaks: Vec<usize> = accepted
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(reach);
            let hi = (p + reach).min(bp.len() - 1);
            (lo..=hi).max_by(|&a, &b| bp[a].abs().total_cmp(&bp[b].abs()).then(b.cmp(&a))).unwrap_or(p)
        })
        .collect();
    peaks.dedup();
    peaks
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Dominant frequency of `x` in `[lo_hz, hi_hz]`, ignoring samples where
/// `weight` is zero.
fn dominant_frequency(x: &[f64], weight: &[f64], fs: f64, lo_hz: f64, hi_hz: f64) -> f64 {
    let mut best = (lo_hz, -1.0);
    let mut f = lo_hz;
    while f <= hi_hz + 1e-9 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (mut re, mut im) = (0.0, 0.0);
        for (k, (&v, &m)) in x.iter().zip(weight).enumerate() {
            if m != 0.0 {
                re += v * (w * k as f64).cos();
                im -= v * (w * k as f64).sin();
            }
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (f, power);
        }
        f += 0.05;
    }
    best.0
}

/// Attributes computed from the waveform of `signal`. `id` labels errors.
pub fn extract_from_signal(signal: &Signal, id: &str) -> Result<AttributeVector> {
    let fs = signal.sampling_rate_hz() as f64;
    let peaks = detect_r_peaks(signal);
    if peaks.len() < 2 {
        return Err(Error::NoPeaksDetected(format!("{id} ({} peak(s) found, need two)", peaks.len())));
    }
    let n = peaks.len();
    let span_s = (peaks[n - 1] - peaks[0]) as f64 / fs;
    let ventricular_rate = 60.0 * (n - 1) as f64 / span_s;
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let mean_rr = rr.iter().sum::<f64>() / rr.len() as f64;
    let rr_cv = (rr.iter().map(|v| (v - mean_rr).powi(2)).sum::<f64>() / rr.len() as f64).sqrt() / mean_rr;

    let lead = |i: usize| -> Vec<f64> { signal.lead(i).iter().map(|&v| v as f64).collect() };
    let ii = lead(LEAD_II);
    let smooth = moving_average(&ii, samples(0.02, fs));
    let e = energy(&band_pass(&ii, fs));
    let len = ii.len();

    // QRS extent per beat: where derivative energy exceeds 2% of its local peak.
    let qrs_reach = samples(0.1, fs);
    let mut onsets = Vec::new();
    let mut offsets = Vec::new();
    for &p in &peaks {
        let lo = p.saturating_sub(qrs_reach);
        let hi = (p + qrs_reach).min(len - 1);
        let local_max = e[lo..=hi].iter().cloned().fold(0.0, f64::max);
        let thr = 0.02 * local_max;
        let on = (lo..=p).find(|&k| e[k] > thr).unwrap_or(p);
        let off = (p..=hi).rev().find(|&k| e[k] > thr).unwrap_or(p);
        onsets.push((p - on) as f64);
        offsets.push((off - p) as f64);
    }
    let on_med = median(onsets);
    let off_med = median(offsets);
    let qrs_ms = (on_med + off_med) / fs * 1000.0;

    // T wave: largest deflection from the pre-QRS level between QRS end and
    // 60% of the following RR; its end is where the deflection drops to 5%.
    let mut qt_samples = Vec::new();
    let mut t_windows = Vec::new();
    for (b, &p) in peaks.iter().enumerate().take(n - 1) {
        let next = peaks[b + 1];
        let start = p + off_med as usize + samples(0.04, fs);
        let stop = (p + ((next - p) as f64 * 0.6) as usize).min(len - 1);
        if start >= stop {
            continue;
        }
        let base = smooth[p.saturating_sub(on_med as usize + samples(0.02, fs))];
        let t_peak = (start..stop).max_by(|&a, &c| (smooth[a] - base).abs().total_cmp(&(smooth[c] - base).abs())).unwrap();
        let amp = (smooth[t_peak] - base).abs();
        let t_end = (t_peak..next).find(|&k| (smooth[k] - base).abs() < 0.05 * amp).unwrap_or(stop);
        qt_samples.push(t_end as f64 - (p as f64 - on_med));
        t_windows.push((start, t_end.max(start + 1)));
    }
    let qt_ms = if qt_samples.is_empty() { 0.0 } else { median(qt_samples) / fs * 1000.0 };
    let qtc_ms = qt_ms / mean_rr.sqrt();

    // Axes from net deflection areas in leads I and aVF.
    let (lead_i, lead_avf) = (lead(LEAD_I), lead(LEAD_AVF));
    let area = |x: &[f64], windows: &[(usize, usize)], base_of: &dyn Fn(usize) -> usize| -> f64 {
        windows.iter().map(|&(a, b)| {
            let base = x[base_of(a)];
            x[a..b].iter().map(|v| v - base).sum::<f64>()
        }).sum()
    };
    let qrs_windows: Vec<(usize, usize)> = peaks
        .iter()
        .map(|&p| (p.saturating_sub(on_med as usize), (p + off_med as usize + 1).min(len)))
        .collect();
    let pre = |a: usize| a.saturating_sub(samples(0.02, fs));
    let axis = |windows: &[(usize, usize)]| -> f64 {
        let y = area(&lead_avf, windows, &pre);
        let x = area(&lead_i, windows, &pre);
        if x == 0.0 && y == 0.0 {
            0.0
        } else {
            y.atan2(x).to_degrees()
        }
    };
    let r_axis = axis(&qrs_windows);
    let t_axis = if t_windows.is_empty() { 0.0 } else { axis(&t_windows) };

    // Irregular rhythms: read the atrial rate off the dominant fibrillatory
    // frequency of V1 with QRS complexes blanked.
    let atrial_rate = if rr_cv > 0.08 && signal.leads() > LEAD_V1 {
        let v1 = lead(LEAD_V1);
        let base = moving_average(&v1, samples(0.2, fs));
        let resid: Vec<f64> = v1.iter().zip(&base).map(|(a, b)| a - b).collect();
        let mut weight = vec![1.0; len];
        let blank = samples(0.06, fs);
        for &p in &peaks {
            for w in &mut weight[p.saturating_sub(blank)..(p + blank).min(len)] {
                *w = 0.0;
            }
        }
        60.0 * dominant_frequency(&resid, &weight, fs, 3.0, 10.0)
    } else {
        ventricular_rate
    };

    let q_onset = MEDIAN_BEAT_R - on_med;
    AttributeVector::new([
        ventricular_rate,
        atrial_rate,
        qrs_ms,
        qt_ms,
        qtc_ms,
        r_axis,
        t_axis,
        n as f64,
        q_onset,
        MEDIAN_BEAT_R + off_med,
        q_onset + qt_ms / 1000.0 * fs,
    ])
}

pub fn extract_attributes(record: &EcgRecord) -> Result<AttributeVector> {
    extract_from_signal(&record.signal, &record.record_id)
}
