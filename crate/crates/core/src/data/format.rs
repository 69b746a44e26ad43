//! Manifest CSV + per-record binary signal files.
//!
//! Signal file layout (little-endian):
//!
//! ```text
//! "ECGS"  u16 version  u16 n_leads  u32 n_samples  u32 sampling_rate_hz
//! f32 × (n_leads · n_samples), row-major by lead
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{error, warn};
use rayon::prelude::*;

use super::{Dataset, EcgRecord, RhythmCode, Sex, Signal, N_LEADS};
use crate::attributes::{AttributeVector, N_ATTRIBUTES};
use crate::error::{Error, Result};

pub const SIGNAL_MAGIC: &[u8; 4] = b"ECGS";
pub const SIGNAL_VERSION: u16 = 1;
const SIGNAL_HEADER_LEN: usize = 16;

pub const MANIFEST_HEADER: [&str; 17] = [
    "record_id",
    "signal_path",
    "age",
    "sex",
    "rhythm_code",
    "condition_codes",
    "attr_1",
    "attr_2",
    "attr_3",
    "attr_4",
    "attr_5",
    "attr_6",
    "attr_7",
    "attr_8",
    "attr_9",
    "attr_10",
    "attr_11",
];

pub fn write_signal(signal: &Signal) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIGNAL_HEADER_LEN + 4 * signal.data().len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
    out.extend_from_slice(&(signal.leads() as u16).to_le_bytes());
    out.extend_from_slice(&(signal.samples() as u32).to_le_bytes());
    out.extend_from_slice(&signal.sampling_rate_hz().to_le_bytes());
    for v in signal.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_signal(bytes: &[u8], path: &Path) -> Result<Signal> {
    let bad = |reason: String| Error::MalformedSignal { path: path.to_path_buf(), reason };
    if bytes.len() < SIGNAL_HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != SIGNAL_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SIGNAL_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let leads = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let samples = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rate = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = SIGNAL_HEADER_LEN + 4 * leads * samples;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {leads}×{samples}, found {}", bytes.len())));
    }
    let data: Vec<f32> =
        bytes[SIGNAL_HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let signal = Signal::new(leads, samples, rate, data).map_err(|e| bad(e.to_string()))?;
    if !signal.is_finite() {
        return Err(bad("non-finite sample".into()));
    }
    Ok(signal)
}

pub fn write_signal_file(signal: &Signal, path: &Path) -> Result<()> {
    fs::write(path, write_signal(signal)).map_err(|e| Error::io(path, e))
}

pub fn read_signal_file(path: &Path) -> Result<Signal> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    read_signal(&bytes, path)
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Apply per-record, per-lead z-scoring after reading.
    pub normalize: bool,
    /// Reject signals whose length differs from this.
    pub expected_samples: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { normalize: true, expected_samples: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub rejected_underage: usize,
}

struct Row {
    record_id: String,
    signal_path: PathBuf,
    age: u32,
    sex: Sex,
    rhythm: RhythmCode,
    conditions: Vec<String>,
    attributes: Option<AttributeVector>,
}

fn parse_row(line: usize, rec: &csv::StringRecord, base: &Path) -> Result<Row> {
    let malformed = |reason: String| Error::MalformedRow { line, reason };
    if rec.len() != MANIFEST_HEADER.len() {
        return Err(malformed(format!("expected {} columns, found {}", MANIFEST_HEADER.len(), rec.len())));
    }
    let record_id = rec[0].trim().to_string();
    if record_id.is_empty() {
        return Err(malformed("empty record_id".into()));
    }
    let raw_path = rec[1].trim();
    if raw_path.is_empty() {
        return Err(malformed("empty signal_path".into()));
    }
    let signal_path = base.join(raw_path);
    let age = rec[2].trim().parse::<u32>().map_err(|_| malformed(format!("invalid age {:?}", &rec[2])))?;
    let sex = rec[3].parse::<Sex>().map_err(malformed)?;
    let rhythm = rec[4].parse::<RhythmCode>()?;
    let mut conditions: Vec<String> =
        rec[5].split(';').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    conditions.sort();
    conditions.dedup();
    let attr_fields: Vec<&str> = (6..6 + N_ATTRIBUTES).map(|i| rec[i].trim()).collect();
    let attributes = if attr_fields.iter().all(|f| f.is_empty()) {
        None
    } else if attr_fields.iter().any(|f| f.is_empty()) {
        return Err(malformed("attribute columns must be all filled or all blank".into()));
    } else {
        let mut values = [0.0; N_ATTRIBUTES];
        for (i, f) in attr_fields.iter().enumerate() {
            values[i] = f.parse::<f64>().map_err(|_| malformed(format!("invalid attr_{} {f:?}", i + 1)))?;
        }
        Some(AttributeVector::new(values).map_err(|e| malformed(e.to_string()))?)
    };
    Ok(Row { record_id, signal_path, age, sex, rhythm, conditions, attributes })
}

/// Load a manifest and every signal it references. Row-level problems are
/// all logged; the first one is returned as the error.
pub fn load_dataset(manifest: &Path, options: &LoadOptions) -> Result<(Dataset, LoadReport)> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(manifest)
        .map_err(|e| Error::io(manifest, std::io::Error::other(e)))?;
    let header = reader.headers().map_err(|e| Error::MalformedRow { line: 1, reason: e.to_string() })?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::MalformedRow { line: 1, reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut report = LoadReport::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        report.rows += 1;
        let parsed = rec
            .map_err(|e| Error::MalformedRow { line, reason: e.to_string() })
            .and_then(|rec| parse_row(line, &rec, &base));
        match parsed {
            Ok(row) if row.age < 18 => report.rejected_underage += 1,
            Ok(row) => rows.push(row),
            Err(e) => {
                error!("manifest {}: {e}", manifest.display());
                errors.push(e);
            }
        }
    }
    if report.rejected_underage > 0 {
        warn!("skipped {} records with age below 18", report.rejected_underage);
    }
    if let Some(first) = errors.into_iter().next() {
        return Err(first);
    }

    let records = rows
        .into_par_iter()
        .map(|row| {
            let mut signal = read_signal_file(&row.signal_path)?;
            if signal.leads() != N_LEADS {
                return Err(Error::MalformedSignal {
                    path: row.signal_path.clone(),
                    reason: format!("expected {N_LEADS} leads, found {}", signal.leads()),
                });
            }
            if let Some(n) = options.expected_samples {
                if signal.samples() != n {
                    return Err(Error::MalformedSignal {
                        path: row.signal_path.clone(),
                        reason: format!("expected {n} samples, found {}", signal.samples()),
                    });
                }
            }
            if options.normalize {
                signal.normalize_leads();
            }
            Ok(EcgRecord {
                record_id: row.record_id,
                signal,
                age_years: row.age,
                sex: row.sex,
                rhythm: row.rhythm,
                conditions: row.conditions,
                attributes: row.attributes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(records)?, report))
}

fn file_stem_for(i: usize, id: &str) -> String {
    let safe: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{i:06}_{safe}.ecgs")
}

/// Write `dataset` as `dir/manifest.csv` plus `dir/signals/*.ecgs`, returning
/// the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let sig_dir = dir.join("signals");
    fs::create_dir_all(&sig_dir).map_err(|e| Error::io(&sig_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut out = String::new();
    out.push_str(&MANIFEST_HEADER.join(","));
    out.push('\n');
    for (i, r) in dataset.records().iter().enumerate() {
        let rel = format!("signals/{}", file_stem_for(i, &r.record_id));
        write_signal_file(&r.signal, &dir.join(&rel))?;
        let mut fields = vec![
            r.record_id.clone(),
            rel,
            r.age_years.to_string(),
            r.sex.name().to_string(),
            r.rhythm.code().to_string(),
            r.conditions.join(";"),
        ];
        match &r.attributes {
            Some(a) => fields.extend(a.values().iter().map(|v| v.to_string())),
            None => fields.extend(std::iter::repeat(String::new()).take(N_ATTRIBUTES)),
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(&fields).map_err(|e| Error::io(&manifest, std::io::Error::other(e)))?;
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory writer")).expect("utf-8 csv"));
    }
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
