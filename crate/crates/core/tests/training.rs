//! Training loops on small synthetic datasets.

use std::sync::Arc;

use ecgc_core::data::{generate_synthetic, split, Dataset, Signal, SplitSpec, SyntheticSpec};
use ecgc_core::nn::EncoderConfig;
use ecgc_core::objective::{train_baseline, train_pretext, train_probe, LossConfig, Phase, TrainConfig};
use ecgc_core::pairing::{StrategyKind, StrategySpec};
use ecgc_core::rng::rng_from;
use rand_distr::{Distribution, StandardNormal};

fn small_encoder() -> EncoderConfig {
    EncoderConfig { n_blocks: 2, base_channels: 8, embed_dim: 32, input_pool: 10, block_kernel: 3, ..Default::default() }
}

fn config(phase: Phase, epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, lr, ..TrainConfig::for_phase(phase) }
}

fn synthetic(n_records: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec { n_records, seed, ..Default::default() }).unwrap().normalized()
}

#[test]
fn augmentation_pretraining_lowers_the_loss() {
    let ds = synthetic(200, 3);
    let out = train_pretext(
        &ds,
        &StrategySpec::new(StrategyKind::Augment),
        &small_encoder(),
        &LossConfig::default(),
        &config(Phase::Pretrain, 20, 1e-3),
    )
    .unwrap();
    let curve = out.report.loss_curve();
    assert_eq!(curve.len(), 20);
    let (first, last) = (curve[0].1, curve[curve.len() - 1].1);
    assert!(last < 0.8 * first, "loss {first} -> {last}");
}

#[test]
fn probe_on_noise_is_at_chance() {
    let ds = generate_synthetic(&SyntheticSpec { n_records: 800, seed: 5, n_samples: 500, ..Default::default() }).unwrap();
    let mut rng = rng_from(5, &[1]);
    let records = ds
        .records()
        .iter()
        .map(|r| {
            let mut r = (**r).clone();
            let data = (0..12 * 500).map(|_| StandardNormal.sample(&mut rng)).collect();
            r.signal = Signal::new(12, 500, 500, data).unwrap();
            Arc::new(r)
        })
        .collect();
    let noise = Dataset::from_shared(records).unwrap();
    let (train, val, test) = split(&noise, &SplitSpec { stratify: true, ..SplitSpec::new([0.6, 0.2, 0.2], 0) }).unwrap();
    let enc = EncoderConfig { input_len: 500, ..small_encoder() };
    let pre = train_pretext(
        &train,
        &StrategySpec::new(StrategyKind::Augment),
        &enc,
        &LossConfig::default(),
        &config(Phase::Pretrain, 2, 1e-3),
    )
    .unwrap();
    let probe = train_probe(&pre.encoder, &train, Some(&val), &test, &config(Phase::Probe, 10, 1e-2)).unwrap();
    let auroc = probe.report.test.unwrap().auroc_macro;
    assert!((0.4..=0.6).contains(&auroc), "macro AUROC {auroc}");
}

/// Uses the default encoder: the two-block one used elsewhere here
/// sometimes still confuses SR with AFIB after 30 epochs on 240 records.
#[test]
fn supervised_baseline_learns_the_classes() {
    let ds = synthetic(400, 7);
    let (train, val, test) = split(&ds, &SplitSpec::new([0.6, 0.2, 0.2], 0)).unwrap();
    let encoder = EncoderConfig::default();
    let out = train_baseline(&train, Some(&val), &test, &encoder, &config(Phase::Baseline, 30, 1e-3)).unwrap();
    let auroc = out.report.test.unwrap().auroc_macro;
    assert!(auroc > 0.9, "macro AUROC {auroc}");
}
