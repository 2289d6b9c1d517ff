use serde::{Deserialize, Serialize};

use super::Partition;
use crate::bnn::{ConcreteDropoutMLP, MaskMode, MaskSample};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::hessian::{input_hessian, HessianRequest};
use crate::math::{stats, Matrix, RngStream};

/// Unordered feature pair `(i, j)` with `i < j`.
pub type Pair = (usize, usize);

/// All `D(D-1)/2` pairs in lexicographic order.
pub fn all_pairs(d: usize) -> Vec<Pair> {
    (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect()
}

/// Pairs among the given feature subset, lexicographic.
pub fn pairs_among(features: &[usize]) -> Vec<Pair> {
    let mut f = features.to_vec();
    f.sort_unstable();
    f.dedup();
    let mut out = Vec::new();
    for (a, &i) in f.iter().enumerate() {
        for &j in &f[a + 1..] {
            out.push((i, j));
        }
    }
    out
}

/// Nodes at `layer` whose keep probability is at least `min_keep`.
pub fn important_nodes(net: &ConcreteDropoutMLP, layer: usize, min_keep: f64) -> Vec<usize> {
    net.drop_probs(layer)
        .iter()
        .enumerate()
        .filter(|(_, p)| 1.0 - **p >= min_keep)
        .map(|(k, _)| k)
        .collect()
}

/// Mixed partials `∂²g/∂x_i∂x_j` for every data row and pair, at one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianField {
    pub pairs: Vec<Pair>,
    /// `N × L`
    pub values: Matrix,
}

/// Points at which layer-`layer` Hessians are clustered: standardized inputs
/// for layer 0, mean-network activations otherwise.
pub fn cluster_points(net: &ConcreteDropoutMLP, x: &Matrix, layer: usize) -> Result<Matrix> {
    if layer == 0 {
        return Ok(x.clone());
    }
    let mean = net.mean_mask();
    let rows = (0..x.rows())
        .map(|r| net.activations(x.row(r), &mean, layer))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

pub fn hessian_field(
    net: &ConcreteDropoutMLP,
    mask: &MaskSample,
    layer: usize,
    x: &Matrix,
    pairs: &[Pair],
) -> Result<HessianField> {
    if layer >= net.depth() {
        return Err(Error::invalid(format!("layer {layer} out of range for depth {}", net.depth())));
    }
    let width = net.width_at(layer);
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= *j || *j >= width) {
        return Err(Error::invalid(format!("pair ({i}, {j}) invalid for width {width}")));
    }
    let mut values = Matrix::zeros(x.rows(), pairs.len());
    for r in 0..x.rows() {
        let point = if layer == 0 {
            x.row(r).to_vec()
        } else {
            net.activations(x.row(r), mask, layer)?
        };
        let h = input_hessian(&HessianRequest {
            net,
            mask,
            layer,
            point: &point,
        })?;
        for (slot, &(i, j)) in values.row_mut(r).iter_mut().zip(pairs) {
            *slot = h[(i, j)];
        }
    }
    Ok(HessianField {
        pairs: pairs.to_vec(),
        values,
    })
}

/// EAH: `mean_x |H_ij(x)|`.
pub fn expected_absolute(field: &HessianField) -> Vec<f64> {
    let n = field.values.rows() as f64;
    (0..field.pairs.len())
        .map(|c| (0..field.values.rows()).map(|r| field.values[(r, c)].abs()).sum::<f64>() / n)
        .collect()
}

/// AEH: `|mean_x H_ij(x)|`.
pub fn absolute_expected(field: &HessianField) -> Vec<f64> {
    let n = field.values.rows() as f64;
    (0..field.pairs.len())
        .map(|c| ((0..field.values.rows()).map(|r| field.values[(r, c)]).sum::<f64>() / n).abs())
        .collect()
}

/// M-GEH: size-weighted average over groups of `|mean_{x∈A_m} H_ij(x)|`.
pub fn group_expected(field: &HessianField, partition: &Partition) -> Result<Vec<f64>> {
    check_dim(field.values.rows(), partition.num_points())?;
    let m = partition.num_groups();
    let l = field.pairs.len();
    let mut sums = Matrix::zeros(m, l);
    for (r, &g) in partition.assignments.iter().enumerate() {
        for (s, v) in sums.row_mut(g).iter_mut().zip(field.values.row(r)) {
            *s += v;
        }
    }
    let total: usize = partition.sizes.iter().sum();
    let mut out = vec![0.0; l];
    for g in 0..m {
        let size = partition.sizes[g];
        if size == 0 {
            continue;
        }
        let w = size as f64 / total as f64;
        for (o, s) in out.iter_mut().zip(sums.row(g)) {
            *o += w * (s / size as f64).abs();
        }
    }
    Ok(out)
}

/// M-GEH of every pair for a single posterior draw `mask`.
pub fn geh_single_sample(
    net: &ConcreteDropoutMLP,
    mask: &MaskSample,
    partition: &Partition,
    pairs: &[Pair],
    x: &Matrix,
    layer: usize,
) -> Result<Vec<f64>> {
    let field = hessian_field(net, mask, layer, x, pairs)?;
    group_expected(&field, partition)
}

/// Posterior summary of one pair's interaction measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEstimate {
    pub pair: Pair,
    pub mean: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_bayes: f64,
    pub rank: usize,
}

/// Credible-interval half-width multiplier: 2 posterior SDs.
pub const CI_MULTIPLIER: f64 = 2.0;

impl InteractionEstimate {
    pub fn from_moments(pair: Pair, mean: f64, variance: f64) -> Self {
        let sd = variance.max(0.0).sqrt();
        Self {
            pair,
            mean,
            variance,
            ci_low: mean - CI_MULTIPLIER * sd,
            ci_high: mean + CI_MULTIPLIER * sd,
            p_bayes: bayes_p_value(mean, sd),
            rank: 0,
        }
    }

    /// Sample mean and unbiased variance of MC draws.
    pub fn from_samples(pair: Pair, samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("need at least 2 MC samples"));
        }
        Ok(Self::from_moments(pair, stats::mean(samples), stats::sample_variance(samples)))
    }

    pub fn sd(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }

    /// Significant iff the 95% credible interval excludes zero.
    pub fn significant(&self) -> bool {
        self.ci_low > 0.0
    }

    /// Significance with a custom interval multiplier (`m - c·sd > 0`).
    pub fn significant_at(&self, multiplier: f64) -> bool {
        self.mean - multiplier * self.sd() > 0.0
    }
}

/// One-sided `Φ(-m/sd)` under a Gaussian approximation of the posterior.
pub fn bayes_p_value(mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        stats::normal_cdf(-mean / sd)
    } else if mean > 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Ranks 1..L by descending mean; ties go to the lexicographically smaller pair.
pub fn assign_ranks(estimates: &mut [InteractionEstimate]) {
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| {
        estimates[b]
            .mean
            .total_cmp(&estimates[a].mean)
            .then(estimates[a].pair.cmp(&estimates[b].pair))
    });
    for (r, &i) in order.iter().enumerate() {
        estimates[i].rank = r + 1;
    }
}

/// Summaries from a `K × L` matrix of per-sample effects.
pub fn summarize(pairs: &[Pair], samples: &Matrix) -> Result<Vec<InteractionEstimate>> {
    check_dim(pairs.len(), samples.cols())?;
    let mut est = pairs
        .iter()
        .enumerate()
        .map(|(c, &p)| InteractionEstimate::from_samples(p, &samples.column(c)))
        .collect::<Result<Vec<_>>>()?;
    assign_ranks(&mut est);
    Ok(est)
}

/// Draw `k` hard masks and evaluate every partition's GEH on each, sharing
/// the Hessian field across partitions. Returns one `K × L` matrix per
/// partition; row `s` always comes from mask stream `s`.
pub fn sample_effects(
    net: &ConcreteDropoutMLP,
    x: &Matrix,
    partitions: &[&Partition],
    pairs: &[Pair],
    layer: usize,
    k: usize,
    rng: RngStream,
    exec: Exec,
) -> Result<Vec<Matrix>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 MC samples"));
    }
    if layer >= net.depth() {
        return Err(Error::invalid(format!("layer {layer} out of range for depth {}", net.depth())));
    }
    for p in partitions {
        check_dim(x.rows(), p.num_points())?;
    }
    let per_sample = exec.try_map(k, |s| -> Result<Vec<Vec<f64>>> {
        let mask = net.sample_mask(&mut rng.child(s as u64).rng(), MaskMode::Hard);
        let field = hessian_field(net, &mask, layer, x, pairs)?;
        partitions.iter().map(|p| group_expected(&field, p)).collect()
    })?;
    let mut out = vec![Matrix::zeros(k, pairs.len()); partitions.len()];
    for (s, effects) in per_sample.into_iter().enumerate() {
        for (m, e) in out.iter_mut().zip(effects) {
            m.row_mut(s).copy_from_slice(&e);
        }
    }
    Ok(out)
}

/// Bayesian GEH: posterior mean, variance, credible interval and p-value of
/// each pair's M-GEH under the dropout posterior, from `k` mask draws.
pub fn bayesian_geh(
    net: &ConcreteDropoutMLP,
    x: &Matrix,
    partition: &Partition,
    pairs: &[Pair],
    layer: usize,
    k: usize,
    rng: RngStream,
    exec: Exec,
) -> Result<Vec<InteractionEstimate>> {
    let samples = sample_effects(net, x, &[partition], pairs, layer, k, rng, exec)?;
    summarize(pairs, &samples[0])
}
