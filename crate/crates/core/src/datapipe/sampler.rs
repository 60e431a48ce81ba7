use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{DataError, ManifestEntry, Result};
use crate::labels::{Class, LabelVector, NUM_CLASSES};

/// Per-class positive weights `w_c = negatives / positives`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerWeights {
    pub class: [f64; NUM_CLASSES],
    /// Classes whose weight was forced to 0, with the reason.
    pub warnings: Vec<String>,
}

impl SamplerWeights {
    /// `1 + Σ_c w_c·[label_c]`. Weights add across positive classes.
    pub fn sample_weight(&self, labels: &LabelVector) -> f64 {
        1.0 + labels
            .flags()
            .iter()
            .zip(&self.class)
            .filter(|(&pos, _)| pos)
            .map(|(_, w)| w)
            .sum::<f64>()
    }
}

pub fn compute_class_weights(entries: &[ManifestEntry]) -> Result<SamplerWeights> {
    if entries.is_empty() {
        return Err(DataError::Config("cannot weight an empty manifest".into()));
    }
    let mut class = [0.0; NUM_CLASSES];
    let mut warnings = Vec::new();
    for c in Class::ALL {
        let pos = entries.iter().filter(|e| e.labels.get(c)).count();
        let neg = entries.len() - pos;
        if pos == 0 || neg == 0 {
            let msg = if pos == 0 {
                format!("class {c} has no positive examples; weight set to 0 (class unlearnable)")
            } else {
                format!("class {c} has no negative examples; weight set to 0")
            };
            warn!("{msg}");
            warnings.push(msg);
        } else {
            class[c.index()] = neg as f64 / pos as f64;
        }
    }
    Ok(SamplerWeights { class, warnings })
}

/// `n` indices drawn with replacement, proportional to each entry's sample weight.
pub fn sample_epoch(entries: &[ManifestEntry], weights: &SamplerWeights, rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
    let w: Vec<f64> = entries.iter().map(|e| weights.sample_weight(&e.labels)).collect();
    sample_weighted(&w, rng, n)
}

/// `n` indices drawn with replacement, proportional to raw weights `w`.
pub fn sample_weighted(w: &[f64], rng: &mut impl Rng, n: usize) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(w).map_err(|e| DataError::Config(format!("sampler weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Iterations in an epoch of `samples` draws: `ceil(samples / batch_size)`.
///
/// Draws are with replacement, so an epoch tops its last batch up to full
/// size by drawing `iterations * batch_size` indices (15000 → 235 × 64).
pub fn iterations_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size.max(1))
}

/// Full batches only; a trailing partial batch is dropped.
pub fn batches(indices: &[usize], batch_size: usize) -> Vec<&[usize]> {
    indices.chunks_exact(batch_size.max(1)).collect()
}
