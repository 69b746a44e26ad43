//! Losses, evaluation metrics and the three training loops.

mod metrics;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, LossVariant, Tensor};
use crate::pairing::PositiveMask;

pub use metrics::{
    accuracy, auroc, evaluate_scores, macro_auroc, mean_std, softmax_rows, EpochMetrics, Evaluation, MetricsReport,
    METRICS_HEADER,
};
pub use train::{
    embed, evaluate_probe, train_baseline, train_pretext, train_probe, train_probe_on_embeddings, BaselineOutcome,
    Phase, PretextOutcome, ProbeOutcome, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.07, variant: LossVariant::SumOut }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv)).clamp(-1.0, 1.0))
}

/// Contrastive loss of `embeddings: [2B, d]` under `mask`, averaged over rows.
pub fn contrastive_loss(embeddings: &Tensor<f64>, mask: &PositiveMask, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    if embeddings.ndim() != 2 || embeddings.shape()[0] != mask.size() {
        return Err(Error::ShapeMismatch(format!(
            "embeddings {:?} for a mask over {} views",
            embeddings.shape(),
            mask.size()
        )));
    }
    mask.validate()?;
    let mut g = Graph::<f64>::new();
    let z = g.input(embeddings.clone());
    let loss = g.contrastive(z, mask.bits(), config.temperature, config.variant)?;
    Ok(g.value(loss).item())
}

/// Loss term of one anchor given its similarities to every other view.
/// Unvectorised and stabilised by the maximum logit.
pub fn anchor_loss(sims: &[f64], positive: &[bool], temperature: f64, variant: LossVariant) -> Result<f64> {
    if sims.len() != positive.len() {
        return Err(Error::DimensionMismatch { left: sims.len(), right: positive.len() });
    }
    if !positive.iter().any(|&p| p) {
        return Err(Error::NoPositive(0));
    }
    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_denom = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    Ok(match variant {
        LossVariant::SumOut => {
            let log_pos = logits.iter().zip(positive).filter(|(_, &p)| p).map(|(l, _)| (l - max).exp()).sum::<f64>().ln() + max;
            log_denom - log_pos
        }
        LossVariant::MeanOfLogs => {
            let pos: Vec<f64> = logits.iter().zip(positive).filter(|(_, &p)| p).map(|(l, _)| *l).collect();
            pos.iter().map(|l| log_denom - l).sum::<f64>() / pos.len() as f64
        }
    })
}

/// Mean softmax cross-entropy of `logits: [batch, classes]`.
pub fn cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let x = g.input(logits.clone());
    let loss = g.cross_entropy(x, labels)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let want = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert!((cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.974631).abs() < 1e-6);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    fn pair_mask(b: usize) -> PositiveMask {
        PositiveMask::from_fn(2 * b, |i, j| i != j && i / 2 == j / 2)
    }

    #[test]
    fn anchor_closed_forms() {
        let l = anchor_loss(&[0.3, 0.3], &[true, false], 0.07, LossVariant::SumOut).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = anchor_loss(&[1.0, -1.0], &[true, false], 1.0, LossVariant::SumOut).unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);
        assert!(matches!(anchor_loss(&[1.0], &[false], 1.0, LossVariant::SumOut), Err(Error::NoPositive(0))));
    }

    #[test]
    fn uniform_batch_gives_ln2() {
        // Five identical views on a ring mask: every row has two positives
        // and two negatives at the same logit.
        let z = Tensor::new(vec![5, 3], [0.2, -0.5, 0.7].repeat(5)).unwrap();
        let mask = PositiveMask::from_fn(5, |i, j| (i + 5 - j) % 5 == 1 || (j + 5 - i) % 5 == 1);
        let l = contrastive_loss(&z, &mask, &LossConfig::default()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_mean_of_anchor_losses() {
        let z = Tensor::new(vec![4, 2], vec![1.0, 0.2, 0.8, 0.5, -0.3, 1.0, 0.1, -1.0]).unwrap();
        let mask = pair_mask(2);
        let cfg = LossConfig { temperature: 0.5, variant: LossVariant::SumOut };
        let rows: Vec<Vec<f64>> = z.data().chunks(2).map(<[f64]>::to_vec).collect();
        let mut want = 0.0;
        for i in 0..4 {
            let others: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            let sims: Vec<f64> = others.iter().map(|&j| cosine_sim(&rows[i], &rows[j]).unwrap()).collect();
            let pos: Vec<bool> = others.iter().map(|&j| mask.get(i, j)).collect();
            want += anchor_loss(&sims, &pos, 0.5, LossVariant::SumOut).unwrap() / 4.0;
        }
        assert!((contrastive_loss(&z, &mask, &cfg).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mask_errors() {
        let z = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let asym = PositiveMask::from_bits(2, vec![false, true, false, false]).unwrap();
        assert!(matches!(contrastive_loss(&z, &asym, &LossConfig::default()), Err(Error::MaskAsymmetry(_))));
        let empty = PositiveMask::from_bits(2, vec![false; 4]).unwrap();
        assert!(matches!(contrastive_loss(&z, &empty, &LossConfig::default()), Err(Error::NoPositive(0))));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::new(vec![3, 4], vec![0.5; 12]).unwrap();
        assert!((cross_entropy(&uniform, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, &[0, 4, 1]), Err(Error::LabelOutOfRange { label: 4, classes: 4 })));
    }

    proptest! {
        #[test]
        fn cross_entropy_decreases_with_margin(m1 in 0.0f64..30.0, dm in 0.01f64..30.0, label in 0usize..4) {
            let logits = |m: f64| Tensor::new(vec![1, 4], (0..4).map(|c| if c == label { m } else { 0.0 }).collect()).unwrap();
            let a = cross_entropy(&logits(m1), &[label]).unwrap();
            let b = cross_entropy(&logits(m1 + dm), &[label]).unwrap();
            prop_assert!(b < a || (a - b).abs() < 1e-15 && a < 1e-12);
            prop_assert!(b >= 0.0);
        }

        #[test]
        fn contrastive_loss_is_nonnegative(data in proptest::collection::vec(-3.0f64..3.0, 24), t in 0.05f64..2.0) {
            prop_assume!(data.chunks(4).all(|r| r.iter().any(|v| v.abs() > 1e-3)));
            let z = Tensor::new(vec![6, 4], data).unwrap();
            let l = contrastive_loss(&z, &pair_mask(3), &LossConfig { temperature: t, variant: LossVariant::SumOut }).unwrap();
            prop_assert!(l >= 0.0);
        }
    }

    #[test]
    fn sharper_temperature_lowers_separable_loss() {
        let z = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.9, 0.1, -1.0, 0.0, -0.9, -0.1]).unwrap();
        let mask = pair_mask(2);
        let at = |t: f64| contrastive_loss(&z, &mask, &LossConfig { temperature: t, variant: LossVariant::SumOut }).unwrap();
        let (a, b, c) = (at(1.0), at(0.1), at(0.01));
        assert!(a > b && b > c, "{a} {b} {c}");
        assert!(c < 1e-6);
    }
}
