//! Experimental protocols: the synthetic generator, interaction injection,
//! permutation nulls, ROC curves, a Lasso-with-products baseline and rank
//! metrics.

mod inject;
mod lasso;
mod null;
mod roc;
mod simulate;

pub use inject::{division_offset, inject_interaction, InjectionForm, InjectionSpec, EXP_CLAMP, MIN_DENOMINATOR};
pub use lasso::{lasso_products_baseline, LassoFit, DEFAULT_LAMBDA};
pub use null::{p_permute, permutation_null, MeasureNull, NullConfig, PermutationNull, MIN_PERMUTATIONS};
pub use roc::{roc_curve, roc_from_scores, z_score, RocCurve, RocPoint};
pub use simulate::{simulate, GroundTruth, InteractionForm, InteractionTerm, SimulatedData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::interactions::{InteractionEstimate, Pair};

/// Pairs ordered by estimate rank (rank 1 first).
pub fn ranking(estimates: &[InteractionEstimate]) -> Vec<Pair> {
    let mut e: Vec<&InteractionEstimate> = estimates.iter().collect();
    e.sort_by_key(|x| (x.rank, x.pair));
    e.into_iter().map(|x| x.pair).collect()
}

/// 1-based rank of each true pair in `ranked` (best first), in truth order.
pub fn rank_of_truth(ranked: &[Pair], truth: &GroundTruth) -> Result<Vec<usize>> {
    truth
        .pairs
        .iter()
        .map(|&[i, j]| {
            ranked
                .iter()
                .position(|&(a, b)| (a.min(b), a.max(b)) == (i, j))
                .map(|k| k + 1)
                .ok_or(Error::MissingPair(i, j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::all_pairs;

    #[test]
    fn truth_at_top() {
        let ranked = vec![(2, 3), (0, 1), (1, 2)];
        assert_eq!(rank_of_truth(&ranked, &GroundTruth::new([(2, 3)])).unwrap(), vec![1]);
        assert!(rank_of_truth(&ranked, &GroundTruth::new([(0, 3)])).is_err());
    }

    #[test]
    fn seven_truths_in_top_seven() {
        let truth = GroundTruth::new((0..7).map(|k| (k, k + 1)));
        let mut ranked: Vec<Pair> = (0..7).rev().map(|k| (k, k + 1)).collect();
        ranked.extend(all_pairs(8).into_iter().filter(|&(i, j)| !truth.contains(i, j)));
        let ranks = rank_of_truth(&ranked, &truth).unwrap();
        assert_eq!(ranks.iter().sum::<usize>() as f64 / 7.0, 4.0);
    }

    #[test]
    fn oracle_scoring_ranks_truth_first() {
        let truth = GroundTruth::new([(0, 2), (1, 3)]);
        let mut est: Vec<InteractionEstimate> = all_pairs(4)
            .into_iter()
            .map(|p| {
                let m = if truth.contains(p.0, p.1) { f64::INFINITY } else { 1.0 };
                InteractionEstimate::from_moments(p, m, 0.0)
            })
            .collect();
        crate::interactions::assign_ranks(&mut est);
        let mut r = rank_of_truth(&ranking(&est), &truth).unwrap();
        r.sort_unstable();
        assert_eq!(r, vec![1, 2]);
    }
}
