use log::warn;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{check_dim, Error, Result};

/// Per-column affine scaling to zero mean and unit population variance.
///
/// Zero-variance columns keep `std = 1` and are flagged in `constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Empty("matrix to standardize"));
        }
        let n = x.rows() as f64;
        let mut means = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (m, v) in means.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                let d = v - means[c];
                vars[c] += d * d;
            }
        }
        let mut stds = Vec::with_capacity(x.cols());
        let mut constant = Vec::with_capacity(x.cols());
        for (c, var) in vars.into_iter().enumerate() {
            let sd = (var / n).sqrt();
            // relative threshold so large-magnitude constant columns still count
            if sd <= 1e-12 * means[c].abs().max(1.0) {
                warn!("column {c} has zero variance; leaving it unscaled");
                stds.push(1.0);
                constant.push(true);
            } else {
                stds.push(sd);
                constant.push(false);
            }
        }
        Ok(Self {
            means,
            stds,
            constant,
        })
    }

    pub fn fit_vec(values: &[f64]) -> Result<Self> {
        Self::fit(&Matrix::from_vec(values.len(), 1, values.to_vec())?)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn has_constant_columns(&self) -> bool {
        self.constant.iter().any(|c| *c)
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.dim(), x.cols())?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            self.apply_row_in_place(out.row_mut(r));
        }
        Ok(out)
    }

    pub fn apply_row_in_place(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - self.means[c]) / self.stds[c];
        }
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        check_dim(self.dim(), z.cols())?;
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.stds[c] + self.means[c];
            }
        }
        Ok(out)
    }

    /// Scalar helpers for single-column scalers (e.g. the regression target).
    pub fn apply_scalar(&self, v: f64) -> f64 {
        (v - self.means[0]) / self.stds[0]
    }

    pub fn invert_scalar(&self, z: f64) -> f64 {
        z * self.stds[0] + self.means[0]
    }
}

/// Fit a standardizer and return it together with the transformed data.
pub fn standardize_fit_apply(x: &Matrix) -> Result<(Standardizer, Matrix)> {
    let s = Standardizer::fit(x)?;
    let z = s.apply(x)?;
    Ok((s, z))
}
