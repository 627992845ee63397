use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            valid: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.valid, self.test];
        if f.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::domain(format!("split fractions must be positive, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("split fractions sum {sum}, expected 1")));
        }
        Ok(())
    }

    /// `(⌊train·N⌋, ⌊valid·N⌋, remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64).floor() as usize;
        let valid = (self.valid * n as f64).floor() as usize;
        (train, valid, n - train - valid)
    }
}

/// Shuffles `samples` with the spec's seed and cuts the permutation into
/// train, validation and test parts.
pub fn split<T: Clone>(samples: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    spec.validate()?;
    if samples.len() < 3 {
        return Err(Error::domain(format!(
            "need at least 3 samples to split, got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (a, b, _) = spec.sizes(samples.len());
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..a]), pick(&order[a..a + b]), pick(&order[a + b..])))
}
