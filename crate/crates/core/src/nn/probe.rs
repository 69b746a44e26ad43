use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::data::N_CLASSES;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear classifier `H` over frozen embeddings: `logits = z · W + b` with
/// `W: [embed_dim, 4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn init(embed_dim: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        LinearProbe {
            weight: Tensor::from_fn(&[embed_dim, N_CLASSES], |_| T::of(normal.sample(rng))),
            bias: Tensor::zeros(&[N_CLASSES]),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Check that this probe can read embeddings of width `embed_dim`.
    pub fn attach(&self, embed_dim: usize) -> Result<()> {
        if embed_dim != self.embed_dim() {
            return Err(Error::ShapeMismatch(format!(
                "probe expects {}-dimensional embeddings, encoder produces {embed_dim}",
                self.embed_dim()
            )));
        }
        Ok(())
    }

    /// Returns `(logits, [weight, bias])`.
    pub fn forward(&self, g: &mut Graph<T>, z: Var) -> Result<(Var, [Var; 2])> {
        self.attach(g.value(z).shape().get(1).copied().unwrap_or(0))?;
        let w = g.param(self.weight.clone());
        let b = g.param(self.bias.clone());
        Ok((g.linear(z, w, b)?, [w, b]))
    }

    /// Rewrite a probe trained on `(z − mean) / scale` so it reads raw `z`:
    /// `W ← W / scale`, `b ← b − Σ mean·W / scale`.
    pub fn fold_standardization(&mut self, mean: &[f64], scale: &[f64]) -> Result<()> {
        let e = self.embed_dim();
        if mean.len() != e || scale.len() != e {
            return Err(Error::ShapeMismatch(format!(
                "standardization over {} / {} dimensions for a {e}-dimensional probe",
                mean.len(),
                scale.len()
            )));
        }
        let mut bias: Vec<f64> = self.bias.data().iter().map(|v| v.as_f64()).collect();
        let w = self.weight.data_mut();
        for k in 0..e {
            for c in 0..N_CLASSES {
                let folded = w[k * N_CLASSES + c].as_f64() / scale[k];
                bias[c] -= mean[k] * folded;
                w[k * N_CLASSES + c] = T::of(folded);
            }
        }
        for (dst, v) in self.bias.data_mut().iter_mut().zip(bias) {
            *dst = T::of(v);
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn folding_matches_standardized_logits() {
        let mut probe = LinearProbe::<f64>::init(3, &mut rng_from(1, &[]));
        probe.bias = Tensor::new(vec![4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let (mean, scale) = ([1.0, -2.0, 0.5], [2.0, 0.5, 4.0]);
        let z = [0.3, 1.7, -0.9];
        let logits = |p: &LinearProbe<f64>, x: &[f64]| -> Vec<f64> {
            (0..N_CLASSES)
                .map(|c| p.bias.data()[c] + (0..3).map(|k| x[k] * p.weight.data()[k * N_CLASSES + c]).sum::<f64>())
                .collect()
        };
        let standardized: Vec<f64> = (0..3).map(|k| (z[k] - mean[k]) / scale[k]).collect();
        let want = logits(&probe, &standardized);
        probe.fold_standardization(&mean, &scale).unwrap();
        for (a, b) in logits(&probe, &z).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(probe.fold_standardization(&mean[..2], &scale).is_err());
    }
}
