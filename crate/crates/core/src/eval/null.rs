use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::interactions::{detect, DetectOptions, Grouping};
use crate::math::RngStream;
use crate::train::{train_pipeline, TrainConfig};

/// Smallest accepted number of permutations.
pub const MIN_PERMUTATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullConfig {
    /// Training config for each permuted replicate.
    pub train: TrainConfig,
    pub val_fraction: f64,
    pub detect: DetectOptions,
    pub groupings: Vec<Grouping>,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                hidden: vec![32, 16],
                epochs: 60,
                batch_size: 128,
                learning_rate: 3e-3,
                eval_mc_samples: 20,
                ..Default::default()
            },
            val_fraction: 0.2,
            detect: DetectOptions {
                mc_samples: 50,
                max_rows: Some(500),
                ..Default::default()
            },
            groupings: vec![Grouping::Single, Grouping::Clusters(4), Grouping::Singletons],
        }
    }
}

/// Null behaviour of one measure across permutations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureNull {
    pub grouping: Grouping,
    pub significant_calls: usize,
    pub total_calls: usize,
    pub fpr: f64,
    /// Largest posterior-mean score per permutation.
    pub max_scores: Vec<f64>,
    /// Mean of `m̂` over all pairs and permutations.
    pub mean_score: f64,
}

impl MeasureNull {
    pub fn p_permute(&self, observed: f64) -> f64 {
        p_permute(observed, &self.max_scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub permutations: usize,
    pub measures: Vec<MeasureNull>,
}

impl PermutationNull {
    pub fn measure(&self, g: Grouping) -> Option<&MeasureNull> {
        self.measures.iter().find(|m| m.grouping == g)
    }
}

/// `(1 + #{max ≥ s}) / (P + 1)`.
pub fn p_permute(observed: f64, max_scores: &[f64]) -> f64 {
    let exceed = max_scores.iter().filter(|m| **m >= observed).count();
    (1 + exceed) as f64 / (max_scores.len() + 1) as f64
}

/// Seeds of one replicate derived from its stream, independent of scheduling.
fn replicate_seed(rng: &RngStream, tag: u64) -> u64 {
    rng.child(tag).rng().next_u64()
}

/// Shuffle the target `p` times, retrain and re-detect on each permuted copy.
/// Every significant call on permuted data is a false positive.
pub fn permutation_null(
    data: &Dataset,
    config: &NullConfig,
    p: usize,
    rng: RngStream,
    exec: Exec,
) -> Result<PermutationNull> {
    if p < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!("need at least {MIN_PERMUTATIONS} permutations, got {p}")));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::invalid("val_fraction must lie in (0, 1)"));
    }
    if config.groupings.is_empty() {
        return Err(Error::Empty("groupings"));
    }
    config.train.validate()?;
    let per_rep = exec.try_map(p, |r| -> Result<Vec<(usize, usize, f64, f64)>> {
        let rep = rng.child(r as u64);
        let mut y = data.y.clone();
        y.shuffle(&mut rep.child(0).rng());
        let permuted = data.with_target(y)?;
        let parts = permuted.split(&[1.0 - config.val_fraction], rep.child(1))?;
        let train_cfg = TrainConfig {
            seed: replicate_seed(&rep, 2),
            ..config.train.clone()
        };
        let outcome = train_pipeline(&parts[0], &parts[1], None, &train_cfg, Exec::Sequential, |_, _| {})?;
        let opts = DetectOptions {
            seed: replicate_seed(&rep, 3),
            ..config.detect.clone()
        };
        let det = detect(&outcome.checkpoint, &parts[0].x, &config.groupings, &opts, Exec::Sequential)?;
        Ok(det
            .estimates
            .iter()
            .map(|est| {
                let sig = est.iter().filter(|e| e.significant()).count();
                let max = est.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
                let sum = est.iter().map(|e| e.mean).sum::<f64>();
                (sig, est.len(), max, sum)
            })
            .collect())
    })?;
    let measures = config
        .groupings
        .iter()
        .enumerate()
        .map(|(g, grouping)| {
            let sig: usize = per_rep.iter().map(|r| r[g].0).sum();
            let total: usize = per_rep.iter().map(|r| r[g].1).sum();
            let sum: f64 = per_rep.iter().map(|r| r[g].3).sum();
            MeasureNull {
                grouping: *grouping,
                significant_calls: sig,
                total_calls: total,
                fpr: if total > 0 { sig as f64 / total as f64 } else { 0.0 },
                max_scores: per_rep.iter().map(|r| r[g].2).collect(),
                mean_score: if total > 0 { sum / total as f64 } else { 0.0 },
            }
        })
        .collect();
    Ok(PermutationNull {
        permutations: p,
        measures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_permute_counting() {
        let maxes: Vec<f64> = (0..99).map(|k| k as f64 / 100.0).collect();
        assert!((p_permute(5.0, &maxes) - 0.01).abs() < 1e-15);
        assert!((p_permute(-1.0, &maxes) - 1.0).abs() < 1e-15);
        assert!((p_permute(0.5, &maxes) - 50.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_permutations() {
        let d = Dataset::unnamed(crate::math::Matrix::zeros(4, 2), vec![0.0; 4]).unwrap();
        assert!(permutation_null(&d, &NullConfig::default(), 19, RngStream::new(0), Exec::Sequential).is_err());
    }
}
