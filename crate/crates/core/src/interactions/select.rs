use serde::{Deserialize, Serialize};

use super::{cluster_points, partition_kmeans, sample_effects, Pair, Partition};
use crate::bnn::ConcreteDropoutMLP;
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::math::{Matrix, RngStream};

/// Fraction of the largest Δ² below which the trace counts as converged.
pub const DEFAULT_TAU: f64 = 0.05;

/// 1-based ranks by descending effect; ties go to the lower index
/// (pairs are kept in lexicographic order).
pub fn effect_ranks(w: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; w.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// `Σ_i (w_M(i) - w_{M-1}(i))² (π_M(i) - π_{M-1}(i))²`
pub fn rank_weighted_distance(prev: &[f64], curr: &[f64]) -> Result<f64> {
    check_dim(prev.len(), curr.len())?;
    let (rp, rc) = (effect_ranks(prev), effect_ranks(curr));
    Ok((0..prev.len())
        .map(|i| {
            let dw = curr[i] - prev[i];
            let dr = rc[i] as f64 - rp[i] as f64;
            dw * dw * dr * dr
        })
        .sum())
}

/// Smallest `M` from which every later Δ² stays within `tau · max Δ²`.
pub fn choose_m(ms: &[usize], deltas: &[f64], tau: f64) -> Result<usize> {
    check_dim(ms.len(), deltas.len())?;
    if ms.is_empty() {
        return Err(Error::Empty("M scan"));
    }
    let max = deltas.iter().cloned().fold(0.0_f64, f64::max);
    let limit = tau * max;
    let mut chosen = ms[ms.len() - 1];
    for i in (0..ms.len()).rev() {
        if deltas[i] <= limit {
            chosen = ms[i];
        } else {
            break;
        }
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSelectionTrace {
    /// Scanned cluster counts (each compared with `M - 1`).
    pub ms: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Posterior-mean effect vectors `w_M`, for `M = ms[0] - 1 ..= ms.last()`.
    pub effects: Vec<Vec<f64>>,
    pub pairs: Vec<Pair>,
    pub tau: f64,
    pub chosen: usize,
}

impl MSelectionTrace {
    /// Effect vector for cluster count `m`, if it was scanned.
    pub fn effects_at(&self, m: usize) -> Option<&[f64]> {
        let first = self.ms.first()? - 1;
        self.effects.get(m.checked_sub(first)?).map(Vec::as_slice)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("M,delta_sq\n");
        for (m, d) in self.ms.iter().zip(&self.deltas) {
            s.push_str(&format!("{m},{d:?}\n"));
        }
        s
    }
}

/// Scan `M` over `min_m..=max_m`, computing posterior-mean GEH vectors with
/// shared mask draws and the rank-weighted distance between neighbours.
pub fn select_m(
    net: &ConcreteDropoutMLP,
    x: &Matrix,
    pairs: &[Pair],
    layer: usize,
    min_m: usize,
    max_m: usize,
    k: usize,
    tau: f64,
    rng: RngStream,
    exec: Exec,
) -> Result<MSelectionTrace> {
    if min_m < 2 {
        return Err(Error::invalid("M scan must start at 2 or above"));
    }
    if max_m < min_m + 1 {
        return Err(Error::invalid("M scan needs at least two cluster counts"));
    }
    if max_m > x.rows() {
        return Err(Error::invalid(format!("M scan up to {max_m} exceeds {} points", x.rows())));
    }
    let points = cluster_points(net, x, layer)?;
    let partitions: Vec<Partition> = ((min_m - 1)..=max_m)
        .map(|m| partition_kmeans(&points, m, rng.child(1_000_000 + m as u64)))
        .collect::<Result<_>>()?;
    let refs: Vec<&Partition> = partitions.iter().collect();
    let samples = sample_effects(net, x, &refs, pairs, layer, k, rng, exec)?;
    let effects: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| (0..s.cols()).map(|c| s.column(c).iter().sum::<f64>() / s.rows() as f64).collect())
        .collect();
    let ms: Vec<usize> = (min_m..=max_m).collect();
    let deltas = effects
        .windows(2)
        .map(|w| rank_weighted_distance(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let chosen = choose_m(&ms, &deltas, tau)?;
    Ok(MSelectionTrace {
        ms,
        deltas,
        effects,
        pairs: pairs.to_vec(),
        tau,
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_zero_distance() {
        let w = [0.3, 0.1, 0.9];
        assert_eq!(rank_weighted_distance(&w, &w).unwrap(), 0.0);
    }

    #[test]
    fn rank_preserving_changes_are_ignored() {
        assert_eq!(rank_weighted_distance(&[0.9, 0.5, 0.1], &[2.0, 0.7, 0.05]).unwrap(), 0.0);
    }

    #[test]
    fn swapped_ranks() {
        let d = rank_weighted_distance(&[0.9, 0.1], &[0.2, 0.8]).unwrap();
        assert!((d - 0.98).abs() < 1e-12);
        assert!(rank_weighted_distance(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn tau_rule() {
        let ms = [2, 3, 4, 5, 6];
        assert_eq!(choose_m(&ms, &[5.0, 3.0, 0.01, 0.02, 0.01], DEFAULT_TAU).unwrap(), 4);
        assert_eq!(choose_m(&ms, &[0.0; 5], DEFAULT_TAU).unwrap(), 2);
        // a late spike resets the choice
        assert_eq!(choose_m(&ms, &[5.0, 0.01, 0.01, 1.0, 0.01], DEFAULT_TAU).unwrap(), 6);
    }

    #[test]
    fn tie_ranks_follow_index_order() {
        assert_eq!(effect_ranks(&[0.5, 0.9, 0.5]), vec![2, 1, 3]);
    }
}
