use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interactions::{all_pairs, Pair};
use crate::math::{stats, Matrix};

/// Regularization used for the products baseline by default.
pub const DEFAULT_LAMBDA: f64 = 5e-4;

const MAX_SWEEPS: usize = 100_000;
const TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub pairs: Vec<Pair>,
    /// Coefficients on standardized columns (features first, then products
    /// in pair order), in standardized target units.
    pub std_coefs: Vec<f64>,
    /// The same coefficients in raw feature/target units.
    pub raw_coefs: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
}

impl LassoFit {
    pub fn pair_coef(&self, pair: Pair) -> Option<f64> {
        let d = self.std_coefs.len() - self.pairs.len();
        self.pairs.iter().position(|p| *p == pair).map(|k| self.raw_coefs[d + k])
    }

    /// Pairs ordered by descending `|standardized coefficient|`; ties keep
    /// lexicographic order.
    pub fn ranked_pairs(&self) -> Vec<Pair> {
        let d = self.std_coefs.len() - self.pairs.len();
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.sort_by(|&a, &b| self.std_coefs[d + b].abs().total_cmp(&self.std_coefs[d + a].abs()));
        order.into_iter().map(|k| self.pairs[k]).collect()
    }
}

/// Coordinate descent for `(1/2N)‖y − Xb‖² + λ‖b‖₁` on standardized main
/// effects and all pairwise products.
pub fn lasso_products_baseline(data: &Dataset, lambda: f64) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::Empty("lasso rows"));
    }
    let d = data.dim();
    let pairs = all_pairs(d);
    let p = d + pairs.len();
    let mut cols: Vec<Vec<f64>> = (0..d).map(|c| data.x.column(c)).collect();
    for &(i, j) in &pairs {
        cols.push(cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).collect());
    }
    let means: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
    let sds: Vec<f64> = cols.iter().map(|c| stats::population_variance(c).sqrt()).collect();
    let y_mean = stats::mean(&data.y);
    let y_sd = stats::population_variance(&data.y).sqrt();
    let y_sd = if y_sd > 0.0 { y_sd } else { 1.0 };
    let active: Vec<bool> = sds.iter().map(|s| *s > 1e-12 * (1.0 + s.abs())).collect();
    let z = Matrix::from_fn(n, p, |r, c| if active[c] { (cols[c][r] - means[c]) / sds[c] } else { 0.0 });
    let yz: Vec<f64> = data.y.iter().map(|v| (v - y_mean) / y_sd).collect();
    let nf = n as f64;
    let mut gram = z.gram();
    for v in gram.as_mut_slice() {
        *v /= nf;
    }
    let mut xty = vec![0.0; p];
    z.tr_matvec_into(&yz, &mut xty);
    for v in &mut xty {
        *v /= nf;
    }
    let mut b = vec![0.0; p];
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for k in 0..p {
            if !active[k] {
                continue;
            }
            let g = gram.row(k);
            let partial = xty[k] - crate::math::dot(g, &b) + g[k] * b[k];
            let new = soft_threshold(partial, lambda) / g[k];
            max_change = max_change.max((new - b[k]).abs());
            b[k] = new;
        }
        if max_change < TOL {
            break;
        }
    }
    let raw: Vec<f64> = (0..p)
        .map(|k| if active[k] { b[k] * y_sd / sds[k] } else { 0.0 })
        .collect();
    let intercept = y_mean - raw.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LassoFit {
        pairs,
        std_coefs: b,
        raw_coefs: raw,
        intercept,
        sweeps,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
