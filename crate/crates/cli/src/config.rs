//! Run configuration: a sectioned TOML file, `--set section.key=value`
//! overrides, and the resolved form echoed into `run.meta`.

use std::fs;
use std::path::{Path, PathBuf};

use ecgc_core::data::{SplitSpec, SyntheticSpec, N_CLASSES};
use ecgc_core::nn::{EncoderConfig, LossVariant, OptimizerKind};
use ecgc_core::objective::{LossConfig, Phase, TrainConfig};
use ecgc_core::pairing::{StrategyKind, StrategySpec, TemporalLeadMode};
use ecgc_core::transforms::{AugmentationSpec, SegmentationSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Subcommand that produced a resolved config. A config naming a
    /// different command is rejected.
    pub command: Option<String>,
    /// Grouping label for `report`. Pretraining and probing default it to
    /// the strategy label, baselines to `baseline`.
    pub label: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub strategy: StrategySection,
    pub augment: AugmentationSpec,
    pub encoder: EncoderConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            label: None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            strategy: StrategySection::default(),
            augment: AugmentationSpec::default(),
            encoder: EncoderConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Per-record, per-lead z-scoring at load time.
    pub normalize: bool,
    pub split: [f64; 3],
    /// Fixed across training seeds so runs differ only in training draws.
    pub split_seed: u64,
    pub stratify: bool,
    pub synth: SynthSection,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: None,
            normalize: true,
            split: [0.6, 0.2, 0.2],
            split_seed: 0,
            stratify: false,
            synth: SynthSection::default(),
        }
    }
}

impl DataSection {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { ratios: self.split, seed: self.split_seed, stratify: self.stratify }
    }
}

/// Parameters of `synth`; the generator seed is the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_records: usize,
    pub class_proportions: [f64; N_CLASSES],
    pub noise_std: f64,
    pub n_samples: usize,
    pub sampling_rate_hz: u32,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        SynthSection {
            n_records: d.n_records,
            class_proportions: d.class_proportions,
            noise_std: d.noise_std,
            n_samples: d.n_samples,
            sampling_rate_hz: d.sampling_rate_hz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub kind: StrategyKind,
    pub temporal_lead_mode: TemporalLeadMode,
    pub v_segments: usize,
    /// Attribute cutoff; the 5th percentile of training distances if unset.
    pub h: Option<f64>,
    pub raw_distance: bool,
    pub rhythm_only: bool,
    /// Anchors without a cross-record partner use an augmentation pair.
    pub fallback: bool,
    pub temperature: f64,
    pub loss_variant: LossVariant,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            kind: StrategyKind::Augment,
            temporal_lead_mode: TemporalLeadMode::Time,
            v_segments: 2,
            h: None,
            raw_distance: false,
            rhythm_only: false,
            fallback: true,
            temperature: LossConfig::default().temperature,
            loss_variant: LossVariant::SumOut,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub batch_size: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub optimizer: OptimizerKind,
    pub standardize_features: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let pre = TrainConfig::for_phase(Phase::Pretrain);
        let probe = TrainConfig::for_phase(Phase::Probe);
        let base = TrainConfig::for_phase(Phase::Baseline);
        TrainSection {
            pretrain_epochs: pre.epochs,
            pretrain_lr: pre.lr,
            batch_size: pre.batch_size,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            probe_batch_size: probe.batch_size,
            baseline_epochs: base.epochs,
            baseline_lr: base.lr,
            optimizer: pre.optimizer,
            standardize_features: probe.standardize_features,
            eval_batch_size: pre.eval_batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Encoder checkpoint read by `probe`.
    pub checkpoint: Option<PathBuf>,
    /// Score the validation split after every probe / baseline epoch.
    pub validation: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { checkpoint: None, validation: true }
    }
}

impl RunConfig {
    /// Parse TOML text strictly: unknown keys anywhere are errors.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        Self::from_value(text.parse::<toml::Table>().map_err(|e| CliError::Config(e.to_string()))?)
    }

    pub fn from_value(table: toml::Table) -> CliResult<Self> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Load `path` (or start from defaults) and apply `key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Core(ecgc_core::Error::io(p, e)))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(table)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.data.synth;
        SyntheticSpec {
            n_records: s.n_records,
            class_proportions: s.class_proportions,
            noise_std: s.noise_std,
            seed: self.seed,
            n_samples: s.n_samples,
            sampling_rate_hz: s.sampling_rate_hz,
        }
    }

    /// Strategy for signals of `total_samples` samples.
    pub fn strategy_spec(&self, total_samples: usize) -> CliResult<StrategySpec> {
        let s = &self.strategy;
        let spec = StrategySpec {
            kind: s.kind,
            temporal_lead_mode: s.temporal_lead_mode,
            segmentation: SegmentationSpec::new(s.v_segments, total_samples)?,
            augment: self.augment.clone(),
            h: s.h,
            raw_distance: s.raw_distance,
            rhythm_only: s.rhythm_only,
            fallback: s.fallback,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { temperature: self.strategy.temperature, variant: self.strategy.loss_variant }
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let t = &self.train;
        let (epochs, lr, batch_size) = match phase {
            Phase::Pretrain => (t.pretrain_epochs, t.pretrain_lr, t.batch_size),
            Phase::Probe => (t.probe_epochs, t.probe_lr, t.probe_batch_size),
            Phase::Baseline => (t.baseline_epochs, t.baseline_lr, t.batch_size),
        };
        TrainConfig {
            phase,
            epochs,
            lr,
            batch_size,
            seed: self.seed,
            optimizer: t.optimizer,
            eval_batch_size: t.eval_batch_size,
            standardize_features: t.standardize_features,
        }
    }
}

/// Apply one `dotted.key=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in ["sed = 1", "[train]\nepoch = 3", "[encoder]\nembed = 4", "[bogus]\nx = 1"] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert_eq!(err.class(), "InvalidConfig", "{text}");
        }
    }

    #[test]
    fn overrides_create_sections_and_parse_types() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.pretrain_epochs=3").unwrap();
        apply_override(&mut t, "strategy.kind = rhythm").unwrap();
        apply_override(&mut t, "augment.enabled=[\"jitter\", \"flip\"]").unwrap();
        apply_override(&mut t, "seed=9").unwrap();
        let cfg = RunConfig::from_value(t).unwrap();
        assert_eq!(cfg.train.pretrain_epochs, 3);
        assert_eq!(cfg.strategy.kind, StrategyKind::Rhythm);
        assert_eq!(cfg.augment.enabled.len(), 2);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "no_equals").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        apply_override(&mut t, "seed=1").unwrap();
        assert!(apply_override(&mut t, "seed.x=1").is_err());
    }

    #[test]
    fn phase_configs_follow_sections() {
        let mut cfg = RunConfig::default();
        cfg.train.probe_batch_size = 16;
        cfg.seed = 4;
        let p = cfg.train_config(Phase::Probe);
        assert_eq!((p.epochs, p.lr, p.batch_size, p.seed), (10, 1e-2, 16, 4));
        let b = cfg.train_config(Phase::Baseline);
        assert_eq!((b.epochs, b.lr), (50, 1e-4));
    }
}
