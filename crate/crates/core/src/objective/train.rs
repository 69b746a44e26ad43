use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_scores, EpochMetrics, Evaluation, MetricsReport};
use super::LossConfig;
use crate::data::{Dataset, N_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderConfig, Graph, LinearProbe, Optimizer, OptimizerKind, Tensor};
use crate::pairing::{epoch_batches, stack_signals, Pairer, StrategySpec};
use crate::rng::{derive_seed, rng_from, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Probe,
    Baseline,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Probe => "probe",
            Phase::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Records per forward pass when computing embeddings for evaluation.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Probe only: train on embeddings z-scored with training-split
    /// statistics, then fold the scaling back into the weights.
    #[serde(default = "default_standardize")]
    pub standardize_features: bool,
}

fn default_standardize() -> bool {
    true
}

fn default_eval_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn for_phase(phase: Phase) -> Self {
        let (epochs, lr) = match phase {
            Phase::Pretrain => (50, 1e-4),
            Phase::Probe => (10, 1e-2),
            Phase::Baseline => (50, 1e-4),
        };
        TrainConfig {
            phase,
            epochs,
            lr,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            eval_batch_size: default_eval_batch(),
            standardize_features: default_standardize(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 2 and eval_batch_size positive".into()));
        }
        Ok(())
    }

    fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("phase".into(), self.phase.name().into()),
            ("epochs".into(), self.epochs.to_string()),
            ("lr".into(), format!("{:?}", self.lr)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("optimizer".into(), format!("{:?}", self.optimizer).to_lowercase()),
            ("standardize_features".into(), self.standardize_features.to_string()),
            ("schedule".into(), "none (constant lr, no weight decay, no early stopping)".into()),
        ]
    }
}

fn check_phase(cfg: &TrainConfig, want: Phase) -> Result<()> {
    cfg.validate()?;
    if cfg.phase != want {
        return Err(Error::InvalidConfig(format!("{} loop given a {} config", want.name(), cfg.phase.name())));
    }
    Ok(())
}

fn check_label_coverage(labels: &[usize]) -> Result<()> {
    for c in 0..N_CLASSES {
        let positives = labels.iter().filter(|&&l| l == c).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::SingleClass { positives, negatives: labels.len() - positives });
        }
    }
    Ok(())
}

fn records_tensor(dataset: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
    let signals: Vec<_> = idx.iter().map(|&i| dataset.get(i).signal.clone()).collect();
    stack_signals(&signals)
}

pub struct PretextOutcome {
    pub encoder: Encoder<f32>,
    pub report: MetricsReport,
}

/// Contrastive pretraining of a freshly initialised encoder.
pub fn train_pretext(
    dataset: &Dataset,
    strategy: &StrategySpec,
    encoder_config: &EncoderConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<PretextOutcome> {
    check_phase(cfg, Phase::Pretrain)?;
    loss.validate()?;
    if dataset.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let pairer = Pairer::new(dataset, strategy)?;
    let mut encoder = Encoder::<f32>::init(encoder_config.clone(), &mut rng_from(cfg.seed, &[tag("encoder-init")]))?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut report = MetricsReport::new(&format!("pretrain:{}", strategy.label()));
    report.run_metadata = cfg.echo();
    report.run_metadata.push(("strategy".into(), strategy.label()));
    report.run_metadata.push(("temperature".into(), format!("{:?}", loss.temperature)));
    if let Some(h) = pairer.cutoff() {
        report.run_metadata.push(("attribute_cutoff".into(), format!("{h:?}")));
    }
    let (mut cross_total, mut fallback_total, mut batches_total) = (0usize, 0usize, 0usize);

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch);
        let mut sum = 0.0;
        for (b, anchors) in batches.iter().enumerate() {
            let batch = pairer.batch(anchors, derive_seed(cfg.seed, &[tag("batch"), epoch as u64, b as u64]))?;
            cross_total += batch.cross_anchor_positives();
            fallback_total += batch.fallbacks.len();
            batches_total += 1;

            let mut g = Graph::<f32>::new();
            let x = g.input(batch.stack()?);
            let out = encoder.forward(&mut g, x, true)?;
            let l = g.contrastive(out.loss_input, batch.positive_mask.bits(), loss.temperature, loss.variant)?;
            sum += g.value(l).item() as f64;
            g.backward(l)?;
            let grads: Vec<Vec<f32>> = out.params.iter().map(|&p| g.grad_or_zero(p)).collect();
            drop(g);
            let mut refs: Vec<&mut Tensor<f32>> = encoder.params_mut().iter_mut().collect();
            opt.step(&mut refs, &grads)?;
        }
        let mean = sum / batches.len() as f64;
        log::info!("pretrain {} epoch {epoch}/{}: loss {mean:.6}", strategy.label(), cfg.epochs);
        report.epochs.push(EpochMetrics { epoch, loss: mean, validation: None });
    }
    if strategy.kind.is_cross_record() {
        let per_batch = cross_total as f64 / batches_total.max(1) as f64;
        log::info!("cross-anchor positive pairs per batch {per_batch:.2}; fallback anchors {fallback_total}");
        report.run_metadata.push(("cross_anchor_positives_per_batch".into(), format!("{per_batch:?}")));
        report.run_metadata.push(("fallback_anchors".into(), fallback_total.to_string()));
    }
    Ok(PretextOutcome { encoder, report })
}

/// Embeddings `f(x)` of every record, `[N, embed_dim]`, with the encoder
/// treated as constant.
pub fn embed(encoder: &Encoder<f32>, dataset: &Dataset, batch_size: usize) -> Result<Tensor<f32>> {
    let e = encoder.config().embed_dim;
    let mut data = Vec::with_capacity(dataset.len() * e);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut g = Graph::<f32>::new();
        let x = g.input(records_tensor(dataset, chunk)?);
        let out = encoder.forward(&mut g, x, false)?;
        data.extend_from_slice(g.value(out.embedding).data());
    }
    Tensor::new(vec![dataset.len(), e], data)
}

/// Probe metrics on precomputed embeddings.
pub fn evaluate_probe(probe: &LinearProbe<f32>, z: &Tensor<f32>, labels: &[usize]) -> Result<Evaluation> {
    let (n, e) = (z.shape()[0], z.shape()[1]);
    probe.attach(e)?;
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!("{n} embeddings for {} labels", labels.len())));
    }
    let (w, b) = (probe.weight.data(), probe.bias.data());
    let mut logits = vec![0.0f64; n * N_CLASSES];
    for (i, row) in z.data().chunks(e).enumerate() {
        for c in 0..N_CLASSES {
            let mut acc = b[c] as f64;
            for (k, &v) in row.iter().enumerate() {
                acc += v as f64 * w[k * N_CLASSES + c] as f64;
            }
            logits[i * N_CLASSES + c] = acc;
        }
    }
    evaluate_scores(&logits, labels)
}

pub struct ProbeOutcome {
    pub probe: LinearProbe<f32>,
    pub report: MetricsReport,
}

fn gather_rows(z: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let e = z.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * e);
    for &i in idx {
        data.extend_from_slice(&z.data()[i * e..(i + 1) * e]);
    }
    Tensor::new(vec![idx.len(), e], data)
}

/// Per-dimension mean and population std of training embeddings; constant
/// dimensions keep scale 1.
fn feature_stats(z: &Tensor<f32>) -> (Vec<f64>, Vec<f64>) {
    let (n, e) = (z.shape()[0], z.shape()[1]);
    let mut mean = vec![0.0f64; e];
    for row in z.data().chunks(e) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; e];
    for row in z.data().chunks(e) {
        for k in 0..e {
            var[k] += (row[k] as f64 - mean[k]).powi(2);
        }
    }
    let scale = var.iter().map(|v| (v / n as f64).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    (mean, scale)
}

fn standardized(z: &Tensor<f32>, mean: &[f64], scale: &[f64]) -> Result<Tensor<f32>> {
    let e = mean.len();
    let data = z
        .data()
        .chunks(e)
        .flat_map(|row| row.iter().enumerate().map(|(k, &v)| ((v as f64 - mean[k]) / scale[k]) as f32))
        .collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// Train a linear classifier on fixed embeddings.
pub fn train_probe_on_embeddings(
    train: (&Tensor<f32>, &[usize]),
    val: Option<(&Tensor<f32>, &[usize])>,
    test: (&Tensor<f32>, &[usize]),
    cfg: &TrainConfig,
) -> Result<ProbeOutcome> {
    check_phase(cfg, Phase::Probe)?;
    let (z, labels) = train;
    if z.ndim() != 2 || z.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch(format!("{:?} embeddings for {} labels", z.shape(), labels.len())));
    }
    check_label_coverage(labels)?;
    let stats = cfg.standardize_features.then(|| feature_stats(z));
    let (scaled_train, scaled_val);
    let (z, val) = match &stats {
        Some((mean, scale)) => {
            scaled_train = standardized(z, mean, scale)?;
            scaled_val = match val {
                Some((vz, vy)) => Some((standardized(vz, mean, scale)?, vy)),
                None => None,
            };
            (&scaled_train, scaled_val.as_ref().map(|(vz, vy)| (vz, *vy)))
        }
        None => (z, val),
    };
    let mut probe = LinearProbe::<f32>::init(z.shape()[1], &mut rng_from(cfg.seed, &[tag("probe-init")]));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut report = MetricsReport::new("probe");
    report.run_metadata = cfg.echo();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng_from(cfg.seed, &[tag("probe-order"), epoch as u64]));
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::<f32>::new();
            let x = g.input(gather_rows(z, chunk)?);
            let (logits, [w, b]) = probe.forward(&mut g, x)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let l = g.cross_entropy(logits, &y)?;
            sum += g.value(l).item() as f64;
            count += 1;
            g.backward(l)?;
            let grads = vec![g.grad_or_zero(w), g.grad_or_zero(b)];
            let [pw, pb] = probe.params_mut();
            opt.step(&mut [pw, pb], &grads)?;
        }
        let validation = match val {
            Some((vz, vy)) => Some(evaluate_probe(&probe, vz, vy)?),
            None => None,
        };
        log::info!("probe epoch {epoch}/{}: loss {:.6}", cfg.epochs, sum / count as f64);
        report.epochs.push(EpochMetrics { epoch, loss: sum / count as f64, validation });
    }
    if let Some((mean, scale)) = &stats {
        probe.fold_standardization(mean, scale)?;
    }
    report.test = Some(evaluate_probe(&probe, test.0, test.1)?);
    if let Some(best) = report.best_validation_epoch() {
        report.run_metadata.push(("best_validation_epoch".into(), best.to_string()));
    }
    Ok(ProbeOutcome { probe, report })
}

/// Linear probe on a frozen encoder: embeddings are computed once and the
/// encoder is only ever borrowed immutably.
pub fn train_probe(
    encoder: &Encoder<f32>,
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<ProbeOutcome> {
    check_phase(cfg, Phase::Probe)?;
    let z_train = embed(encoder, train, cfg.eval_batch_size)?;
    let z_test = embed(encoder, test, cfg.eval_batch_size)?;
    let z_val = match val {
        Some(v) => Some((embed(encoder, v, cfg.eval_batch_size)?, v.labels())),
        None => None,
    };
    let (train_y, test_y) = (train.labels(), test.labels());
    train_probe_on_embeddings(
        (&z_train, &train_y),
        z_val.as_ref().map(|(z, y)| (z, y.as_slice())),
        (&z_test, &test_y),
        cfg,
    )
}

pub struct BaselineOutcome {
    pub encoder: Encoder<f32>,
    pub probe: LinearProbe<f32>,
    pub report: MetricsReport,
}

/// Supervised end-to-end training of encoder and linear head with
/// cross-entropy, from the same initialisation pretraining would use.
pub fn train_baseline(
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<BaselineOutcome> {
    check_phase(cfg, Phase::Baseline)?;
    let labels = train.labels();
    check_label_coverage(&labels)?;
    let mut encoder = Encoder::<f32>::init(encoder_config.clone(), &mut rng_from(cfg.seed, &[tag("encoder-init")]))?;
    let mut probe = LinearProbe::<f32>::init(encoder_config.embed_dim, &mut rng_from(cfg.seed, &[tag("probe-init")]));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut report = MetricsReport::new("baseline");
    report.run_metadata = cfg.echo();

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch);
        let mut sum = 0.0;
        for chunk in &batches {
            let mut g = Graph::<f32>::new();
            let x = g.input(records_tensor(train, chunk)?);
            let out = encoder.forward(&mut g, x, true)?;
            let (logits, [w, b]) = probe.forward(&mut g, out.embedding)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let l = g.cross_entropy(logits, &y)?;
            sum += g.value(l).item() as f64;
            g.backward(l)?;
            let mut grads: Vec<Vec<f32>> = out.params.iter().map(|&p| g.grad_or_zero(p)).collect();
            grads.push(g.grad_or_zero(w));
            grads.push(g.grad_or_zero(b));
            drop(g);
            let mut refs: Vec<&mut Tensor<f32>> = encoder.params_mut().iter_mut().collect();
            refs.extend(probe.params_mut());
            opt.step(&mut refs, &grads)?;
        }
        let validation = match val {
            Some(v) => Some(evaluate_probe(&probe, &embed(&encoder, v, cfg.eval_batch_size)?, &v.labels())?),
            None => None,
        };
        let mean = sum / batches.len() as f64;
        log::info!("baseline epoch {epoch}/{}: loss {mean:.6}", cfg.epochs);
        report.epochs.push(EpochMetrics { epoch, loss: mean, validation });
    }
    report.test = Some(evaluate_probe(&probe, &embed(&encoder, test, cfg.eval_batch_size)?, &test.labels())?);
    if let Some(best) = report.best_validation_epoch() {
        report.run_metadata.push(("best_validation_epoch".into(), best.to_string()));
    }
    Ok(BaselineOutcome { encoder, probe, report })
}
