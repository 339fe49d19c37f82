//! Seeded resampling of the answer set: grades random subsamples to expose
//! score spread per scale.
//!
//! Determinism contract: iteration `i` draws from a ChaCha20 generator
//! whose key is expanded from the 64-bit seed (SplitMix64, via
//! `seed_from_u64`) and whose stream id is `i`. Scores therefore never
//! depend on thread scheduling, and identical seeds yield byte-identical
//! clouds. The generator name is embedded in exported files.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generator identifier written into cloud exports so results remain
/// reproducible across implementations.
pub const GENERATOR_NAME: &str = "chacha20/seed_from_u64/stream=iteration";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BootstrapError {
    #[error("subsample size {subsample} exceeds corpus size {corpus} without replacement")]
    SubsampleTooLarge { subsample: usize, corpus: usize },
    #[error("empty input: nothing to resample")]
    EmptyInput,
    #[error("subsample size and iteration count must be positive")]
    ZeroConfig,
}

/// Resampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Cases drawn per iteration.
    #[serde(default = "default_subsample")]
    pub subsample_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Classical with-replacement bootstrap when true; plain subsampling
    /// (the default) when false.
    #[serde(default)]
    pub replacement: bool,
    pub seed: u64,
}

fn default_subsample() -> usize {
    50
}

fn default_iterations() -> usize {
    500
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig {
            subsample_size: default_subsample(),
            iterations: default_iterations(),
            replacement: false,
            seed,
        }
    }
}

/// N per-iteration scores for one (scale, metric, prompt) slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCloud {
    pub scale_label: String,
    pub metric: String,
    pub prompt_id: String,
    pub scores: Vec<f64>,
}

impl BootstrapCloud {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Grades `iterations` random index subsets of size `subsample_size` with
/// the supplied corpus-level scorer. Answer/reference pairs travel
/// together: the scorer receives index-aligned slices. Sampled indices are
/// sorted ascending, so a score depends only on the chosen subset.
pub fn bootstrap_scores<F>(
    answers: &[&str],
    references: &[&str],
    scorer: F,
    config: &BootstrapConfig,
    scale_label: &str,
    metric: &str,
    prompt_id: &str,
) -> Result<BootstrapCloud, BootstrapError>
where
    F: Fn(&[&str], &[&str]) -> f64 + Sync,
{
    let n = answers.len();
    if n == 0 || references.is_empty() {
        return Err(BootstrapError::EmptyInput);
    }
    debug_assert_eq!(n, references.len());
    if config.subsample_size == 0 || config.iterations == 0 {
        return Err(BootstrapError::ZeroConfig);
    }
    if !config.replacement && config.subsample_size > n {
        return Err(BootstrapError::SubsampleTooLarge {
            subsample: config.subsample_size,
            corpus: n,
        });
    }

    // TODO: each iteration re-scores its subsample from scratch, which
    // re-parses code for tree-backed metrics; exposing per-pair count
    // contributions would make N iterations O(N*S) additions instead.
    let scores: Vec<f64> = (0..config.iterations)
        .into_par_iter()
        .map(|iteration| {
            let indices = sample_indices(config, n, iteration as u64);
            let sub_answers: Vec<&str> = indices.iter().map(|&i| answers[i]).collect();
            let sub_references: Vec<&str> = indices.iter().map(|&i| references[i]).collect();
            scorer(&sub_answers, &sub_references)
        })
        .collect();

    Ok(BootstrapCloud {
        scale_label: scale_label.to_string(),
        metric: metric.to_string(),
        prompt_id: prompt_id.to_string(),
        scores,
    })
}

/// Index sample for one iteration: partial Fisher-Yates without
/// replacement, or independent uniform draws with replacement. Sorted
/// ascending either way.
fn sample_indices(config: &BootstrapConfig, n: usize, iteration: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration);
    let mut indices: Vec<usize>;
    if config.replacement {
        indices = (0..config.subsample_size)
            .map(|_| rng.random_range(0..n))
            .collect();
    } else {
        let mut pool: Vec<usize> = (0..n).collect();
        for k in 0..config.subsample_size {
            let j = rng.random_range(k..n);
            pool.swap(k, j);
        }
        indices = pool[..config.subsample_size].to_vec();
    }
    indices.sort_unstable();
    indices
}
