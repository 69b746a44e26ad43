//! ECG records, datasets, on-disk format, splits and synthetic generation.

mod format;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeVector;
use crate::error::{Error, Result};

pub use format::{
    load_dataset, read_signal, read_signal_file, write_dataset, write_signal, write_signal_file, LoadOptions,
    LoadReport, MANIFEST_HEADER, SIGNAL_MAGIC, SIGNAL_VERSION,
};
pub use split::{split, SplitSpec};
pub use synth::{generate_synthetic, synthesize_record, BeatParams, SyntheticSpec};

pub const N_LEADS: usize = 12;
pub const N_CLASSES: usize = 4;
pub const CHAPMAN_SAMPLING_RATE_HZ: u32 = 500;
pub const CHAPMAN_SAMPLES: usize = 5000;

/// Standard lead order.
pub const LEAD_NAMES: [&str; N_LEADS] = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];
pub const LEAD_II: usize = 1;

/// The four downstream rhythm classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MergedClass {
    Afib,
    Gsvt,
    Sb,
    Sr,
}

impl MergedClass {
    pub const ALL: [MergedClass; N_CLASSES] = [MergedClass::Afib, MergedClass::Gsvt, MergedClass::Sb, MergedClass::Sr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MergedClass::Afib => "AFIB",
            MergedClass::Gsvt => "GSVT",
            MergedClass::Sb => "SB",
            MergedClass::Sr => "SR",
        }
    }
}

impl fmt::Display for MergedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Source rhythm vocabulary (11 codes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RhythmCode {
    Afib,
    Af,
    Svt,
    At,
    Saawr,
    St,
    Avnrt,
    Avrt,
    Sb,
    Sr,
    /// Sinus irregularity.
    Si,
}

impl RhythmCode {
    pub const ALL: [RhythmCode; 11] = [
        RhythmCode::Afib,
        RhythmCode::Af,
        RhythmCode::Svt,
        RhythmCode::At,
        RhythmCode::Saawr,
        RhythmCode::St,
        RhythmCode::Avnrt,
        RhythmCode::Avrt,
        RhythmCode::Sb,
        RhythmCode::Sr,
        RhythmCode::Si,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RhythmCode::Afib => "AFIB",
            RhythmCode::Af => "AF",
            RhythmCode::Svt => "SVT",
            RhythmCode::At => "AT",
            RhythmCode::Saawr => "SAAWR",
            RhythmCode::St => "ST",
            RhythmCode::Avnrt => "AVNRT",
            RhythmCode::Avrt => "AVRT",
            RhythmCode::Sb => "SB",
            RhythmCode::Sr => "SR",
            RhythmCode::Si => "SI",
        }
    }

    /// Merge table: AFIB←{AFIB, AF}; GSVT←{SVT, AT, SAAWR, ST, AVNRT, AVRT};
    /// SB←{SB}; SR←{SR, SI}.
    pub fn merged(self) -> MergedClass {
        match self {
            RhythmCode::Afib | RhythmCode::Af => MergedClass::Afib,
            RhythmCode::Svt
            | RhythmCode::At
            | RhythmCode::Saawr
            | RhythmCode::St
            | RhythmCode::Avnrt
            | RhythmCode::Avrt => MergedClass::Gsvt,
            RhythmCode::Sb => MergedClass::Sb,
            RhythmCode::Sr | RhythmCode::Si => MergedClass::Sr,
        }
    }
}

impl FromStr for RhythmCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RhythmCode::ALL
            .iter()
            .copied()
            .find(|c| c.code() == s.trim())
            .ok_or_else(|| Error::UnknownRhythmCode(s.to_string()))
    }
}

impl fmt::Display for RhythmCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn name(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?}")),
        }
    }
}

/// The seven reporting age bins: 18–29, 30s, 40s, 50s, 60s, 70s, ≥80.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    Under30,
    Thirties,
    Forties,
    Fifties,
    Sixties,
    Seventies,
    EightyPlus,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 7] = [
        AgeBucket::Under30,
        AgeBucket::Thirties,
        AgeBucket::Forties,
        AgeBucket::Fifties,
        AgeBucket::Sixties,
        AgeBucket::Seventies,
        AgeBucket::EightyPlus,
    ];

    /// `None` for ages below 18.
    pub fn of_age(age: u32) -> Option<Self> {
        Some(match age {
            0..=17 => return None,
            18..=29 => AgeBucket::Under30,
            30..=39 => AgeBucket::Thirties,
            40..=49 => AgeBucket::Forties,
            50..=59 => AgeBucket::Fifties,
            60..=69 => AgeBucket::Sixties,
            70..=79 => AgeBucket::Seventies,
            _ => AgeBucket::EightyPlus,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeBucket::Under30 => "18-29",
            AgeBucket::Thirties => "30s",
            AgeBucket::Forties => "40s",
            AgeBucket::Fifties => "50s",
            AgeBucket::Sixties => "60s",
            AgeBucket::Seventies => "70s",
            AgeBucket::EightyPlus => "80+",
        }
    }

    /// Inclusive age range used when sampling synthetic demographics.
    pub fn range(self) -> (u32, u32) {
        match self {
            AgeBucket::Under30 => (18, 29),
            AgeBucket::EightyPlus => (80, 89),
            b => {
                let lo = 30 + 10 * (b as u32 - 1);
                (lo, lo + 9)
            }
        }
    }
}

/// Multi-lead signal stored row-major as `[leads × samples]` 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    leads: usize,
    samples: usize,
    sampling_rate_hz: u32,
    data: Vec<f32>,
}

impl Signal {
    pub fn new(leads: usize, samples: usize, sampling_rate_hz: u32, data: Vec<f32>) -> Result<Self> {
        if leads == 0 || samples == 0 || sampling_rate_hz == 0 {
            return Err(Error::ShapeMismatch(format!(
                "signal needs positive leads/samples/rate, got {leads}×{samples} at {sampling_rate_hz} Hz"
            )));
        }
        if data.len() != leads * samples {
            return Err(Error::ShapeMismatch(format!(
                "signal {leads}×{samples} needs {} values, got {}",
                leads * samples,
                data.len()
            )));
        }
        Ok(Signal { leads, samples, sampling_rate_hz, data })
    }

    pub fn zeros(leads: usize, samples: usize, sampling_rate_hz: u32) -> Self {
        Signal { leads, samples, sampling_rate_hz, data: vec![0.0; leads * samples] }
    }

    pub fn leads(&self) -> usize {
        self.leads
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sampling_rate_hz(&self) -> u32 {
        self.sampling_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sampling_rate_hz as f64
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn lead(&self, i: usize) -> &[f32] {
        &self.data[i * self.samples..(i + 1) * self.samples]
    }

    pub fn lead_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.samples..(i + 1) * self.samples]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-lead z-score. Constant leads are only centred.
    pub fn normalize_leads(&mut self) {
        let n = self.samples;
        for row in self.data.chunks_mut(n) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            for v in row.iter_mut() {
                let c = *v as f64 - mean;
                *v = if std > 0.0 { (c / std) as f32 } else { c as f32 };
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub signal: Signal,
    pub age_years: u32,
    pub sex: Sex,
    pub rhythm: RhythmCode,
    /// Condition codes, kept sorted and de-duplicated.
    pub conditions: Vec<String>,
    pub attributes: Option<AttributeVector>,
}

impl EcgRecord {
    pub fn merged_class(&self) -> MergedClass {
        self.rhythm.merged()
    }

    pub fn age_bucket(&self) -> Option<AgeBucket> {
        AgeBucket::of_age(self.age_years)
    }

    pub fn set_conditions<I: IntoIterator<Item = String>>(&mut self, codes: I) {
        let mut v: Vec<String> = codes.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
        v.sort();
        v.dedup();
        self.conditions = v;
    }
}

/// Ordered, immutable collection of records with unique ids.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    records: Vec<Arc<EcgRecord>>,
    class_counts: [usize; N_CLASSES],
}

impl Dataset {
    pub fn new(records: Vec<EcgRecord>) -> Result<Self> {
        Self::from_shared(records.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(records: Vec<Arc<EcgRecord>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_counts = [0; N_CLASSES];
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate record_id {:?}", r.record_id)));
            }
            class_counts[r.merged_class().index()] += 1;
        }
        Ok(Dataset { records, class_counts })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Arc<EcgRecord>] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &EcgRecord {
        &self.records[i]
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        self.class_counts
    }

    pub fn class_count_map(&self) -> BTreeMap<MergedClass, usize> {
        MergedClass::ALL.iter().map(|&c| (c, self.class_counts[c.index()])).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.merged_class().index()).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.record_id.as_str()).collect()
    }

    /// Copy with every signal z-scored per lead.
    pub fn normalized(&self) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = (**r).clone();
                r.signal.normalize_leads();
                Arc::new(r)
            })
            .collect();
        Dataset { records, class_counts: self.class_counts }
    }

    /// Copy with attributes replaced by `f(record)`.
    pub fn with_attributes(&self, mut f: impl FnMut(&EcgRecord) -> Result<Option<AttributeVector>>) -> Result<Dataset> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut c = (**r).clone();
                c.attributes = f(r)?;
                Ok(Arc::new(c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { records, class_counts: self.class_counts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_table_is_total_and_matches_groups() {
        let mut per_class = [0; N_CLASSES];
        for code in RhythmCode::ALL {
            per_class[code.merged().index()] += 1;
            assert_eq!(code.code().parse::<RhythmCode>().unwrap(), code);
        }
        assert_eq!(per_class, [2, 6, 1, 2]);
        assert_eq!(RhythmCode::Saawr.merged(), MergedClass::Gsvt);
        assert!(matches!("XYZ".parse::<RhythmCode>(), Err(Error::UnknownRhythmCode(c)) if c == "XYZ"));
    }

    #[test]
    fn age_buckets() {
        assert_eq!(AgeBucket::of_age(17), None);
        assert_eq!(AgeBucket::of_age(18), Some(AgeBucket::Under30));
        assert_eq!(AgeBucket::of_age(29).unwrap().label(), "18-29");
        assert_eq!(AgeBucket::of_age(34).unwrap().label(), "30s");
        assert_eq!(AgeBucket::of_age(30).unwrap().label(), "30s");
        assert_eq!(AgeBucket::of_age(97).unwrap().label(), "80+");
        for b in AgeBucket::ALL {
            let (lo, hi) = b.range();
            assert_eq!(AgeBucket::of_age(lo), Some(b));
            assert_eq!(AgeBucket::of_age(hi), Some(b));
        }
    }

    #[test]
    fn normalization_zscores_each_lead() {
        let data: Vec<f32> = (0..24).map(|i| if i < 12 { i as f32 } else { 3.0 }).collect();
        let mut s = Signal::new(2, 12, 500, data).unwrap();
        s.normalize_leads();
        let l0 = s.lead(0);
        let mean: f64 = l0.iter().map(|&v| v as f64).sum::<f64>() / 12.0;
        let var: f64 = l0.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
        assert!(s.lead(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rec = EcgRecord {
            record_id: "a".into(),
            signal: Signal::zeros(12, 10, 1),
            age_years: 40,
            sex: Sex::Male,
            rhythm: RhythmCode::Sr,
            conditions: vec![],
            attributes: None,
        };
        assert!(Dataset::new(vec![rec.clone(), rec]).is_err());
    }
}
