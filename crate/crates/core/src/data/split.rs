use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, N_CLASSES};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Train / validation / test ratios and the shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Split each merged class separately so every part keeps the class mix.
    #[serde(default)]
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: [0.6, 0.2, 0.2], seed: 0, stratify: false }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Self {
        SplitSpec { ratios, seed, stratify: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig(format!("split ratios must be nonnegative, got {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Part sizes `(⌊r₁N⌋, ⌊r₂N⌋, N − both)`.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        // The epsilon keeps e.g. 0.7 × 10 from flooring to 6.
        let a = ((self.ratios[0] * n as f64) + 1e-9).floor() as usize;
        let b = (((self.ratios[1] * n as f64) + 1e-9).floor() as usize).min(n - a.min(n));
        let a = a.min(n);
        [a, b, n - a - b]
    }
}

fn partition(indices: &mut [usize], spec: &SplitSpec, tag: u64) -> [Vec<usize>; 3] {
    indices.shuffle(&mut rng_from(spec.seed, &[0x5b1_17, tag]));
    let [a, b, _] = spec.sizes(indices.len());
    [indices[..a].to_vec(), indices[a..a + b].to_vec(), indices[a + b..].to_vec()]
}

/// Random partition into `(train, validation, test)`. Record order inside
/// each part follows the shuffle.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts: [Vec<usize>; 3] = if spec.stratify {
        let mut parts: [Vec<usize>; 3] = Default::default();
        for class in 0..N_CLASSES {
            let mut idx: Vec<usize> =
                (0..dataset.len()).filter(|&i| dataset.get(i).merged_class().index() == class).collect();
            for (dst, src) in parts.iter_mut().zip(partition(&mut idx, spec, class as u64 + 1)) {
                dst.extend(src);
            }
        }
        parts
    } else {
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        partition(&mut idx, spec, 0)
    };
    let build = |ix: &[usize]| Dataset::from_shared(ix.iter().map(|&i| dataset.records()[i].clone()).collect());
    Ok((build(&parts[0])?, build(&parts[1])?, build(&parts[2])?))
}
