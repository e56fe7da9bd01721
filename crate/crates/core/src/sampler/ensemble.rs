//! Ensemble training samples: N patches drawn from one image, sharing its label.

use rand::seq::index;
use rand::Rng;

use super::patches::PatchSet;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Samples emitted per patch of the parent image.
pub const SAMPLES_PER_PATCH: usize = 2;

/// Member patches are stored as indices into the parent image's [`PatchSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleSample {
    pub image: usize,
    pub members: Vec<usize>,
    pub label: usize,
}

impl EnsembleSample {
    pub fn patches<'a, T>(&'a self, sets: &'a [PatchSet<T>]) -> impl Iterator<Item = &'a Tensor<T>> + 'a {
        let set = &sets[self.image];
        self.members.iter().map(move |&i| &set.patches[i])
    }
}

#[derive(Clone, Debug, Default)]
pub struct EnsembleDataset {
    pub samples: Vec<EnsembleSample>,
    /// Images skipped because they produced no patches.
    pub skipped: usize,
}

/// For each image with M patches emit exactly 2·M samples of N members each:
/// uniform without replacement when M ≥ N, with replacement otherwise.
/// Each image draws from its own stream keyed by its source id.
pub fn make_ensemble_dataset<T>(sets: &[PatchSet<T>], n: usize, seed_value: u64) -> Result<EnsembleDataset> {
    if n == 0 {
        return Err(Error::config("ensemble size N must be at least 1"));
    }
    let mut out = EnsembleDataset::default();
    for (image, set) in sets.iter().enumerate() {
        let m = set.len();
        if m == 0 {
            out.skipped += 1;
            continue;
        }
        let mut rng = seed::rng(seed::derive(seed_value, &[seed::hash_str(&set.source_id)]));
        for _ in 0..SAMPLES_PER_PATCH * m {
            let members = if m >= n {
                index::sample(&mut rng, m, n).into_vec()
            } else {
                (0..n).map(|_| rng.random_range(0..m)).collect()
            };
            out.samples.push(EnsembleSample {
                image,
                members,
                label: set.label,
            });
        }
    }
    if out.skipped > 0 {
        log::warn!("skipped {} images without patches", out.skipped);
    }
    Ok(out)
}
