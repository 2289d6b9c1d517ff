use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Exponent bound for the exponential form.
pub const EXP_CLAMP: f64 = 10.0;
/// Minimum allowed `|x_j + c|` for the division form.
pub const MIN_DENOMINATOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionForm {
    /// `x_i·x_j`
    Multiplicative,
    /// `exp(clamp(x_i + x_j, ±10))`
    Exponential,
    /// `x_i / (x_j + c)`
    Division,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub form: InjectionForm,
    /// Zero-based feature indices.
    pub pair: [usize; 2],
    pub strength: f64,
    /// Division offset `c`; chosen from the data when absent.
    #[serde(default)]
    pub offset: Option<f64>,
}

impl InjectionSpec {
    pub fn new(form: InjectionForm, pair: (usize, usize), strength: f64) -> Self {
        Self {
            form,
            pair: [pair.0, pair.1],
            strength,
            offset: None,
        }
    }
}

/// Smallest non-negative shift that keeps `x_j + c ≥ 0.5` on every row.
pub fn division_offset(column: &[f64]) -> f64 {
    let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
    (MIN_DENOMINATOR - min).max(0.0)
}

/// `ỹ = y + w·h(x_i, x_j)`.
pub fn inject_interaction(data: &Dataset, spec: &InjectionSpec) -> Result<Dataset> {
    let [i, j] = spec.pair;
    let d = data.dim();
    if i == j || i >= d || j >= d {
        return Err(Error::invalid(format!("injection pair ({i}, {j}) invalid for {d} features")));
    }
    if !spec.strength.is_finite() {
        return Err(Error::invalid("injection strength must be finite"));
    }
    let xi = data.x.column(i);
    let xj = data.x.column(j);
    let offset = match (spec.form, spec.offset) {
        (InjectionForm::Division, Some(c)) => {
            if let Some(v) = xj.iter().find(|v| (*v + c).abs() < MIN_DENOMINATOR) {
                return Err(Error::invalid(format!(
                    "division guard violated: |x_{j} + {c}| = {} < {MIN_DENOMINATOR}",
                    (v + c).abs()
                )));
            }
            c
        }
        (InjectionForm::Division, None) => division_offset(&xj),
        _ => 0.0,
    };
    let y = data
        .y
        .iter()
        .zip(xi.iter().zip(&xj))
        .map(|(y, (a, b))| {
            let h = match spec.form {
                InjectionForm::Multiplicative => a * b,
                InjectionForm::Exponential => (a + b).clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
                InjectionForm::Division => a / (b + offset),
            };
            y + spec.strength * h
        })
        .collect();
    data.with_target(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{stats, Matrix, RngStream};
    use rand::Rng;

    fn data(n: usize) -> Dataset {
        let mut r = RngStream::new(5).rng();
        let x = Matrix::from_fn(n, 3, |_, _| r.random_range(-1.0..1.0));
        let y = (0..n).map(|k| x[(k, 0)] - x[(k, 2)]).collect();
        Dataset::unnamed(x, y).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let d = data(50);
        for form in [InjectionForm::Multiplicative, InjectionForm::Exponential, InjectionForm::Division] {
            assert_eq!(inject_interaction(&d, &InjectionSpec::new(form, (0, 1), 0.0)).unwrap(), d);
        }
    }

    #[test]
    fn multiplicative_variance_identity() {
        let d = data(4000);
        let out = inject_interaction(&d, &InjectionSpec::new(InjectionForm::Multiplicative, (0, 1), 1.0)).unwrap();
        let prod: Vec<f64> = (0..d.len()).map(|k| d.x[(k, 0)] * d.x[(k, 1)]).collect();
        let cov = {
            let (my, mp) = (stats::mean(&d.y), stats::mean(&prod));
            d.y.iter().zip(&prod).map(|(a, b)| (a - my) * (b - mp)).sum::<f64>() / d.len() as f64
        };
        let expect = stats::population_variance(&d.y) + stats::population_variance(&prod) + 2.0 * cov;
        assert!((stats::population_variance(&out.y) - expect).abs() < 1e-10);
    }

    #[test]
    fn division_offset_keeps_denominator_away_from_zero() {
        let d = data(200);
        let c = division_offset(&d.x.column(1));
        assert!(d.x.column(1).iter().all(|v| v + c >= MIN_DENOMINATOR - 1e-15));
        let mut spec = InjectionSpec::new(InjectionForm::Division, (0, 1), 1.0);
        spec.offset = Some(0.0);
        assert!(inject_interaction(&d, &spec).is_err());
        spec.offset = Some(5.0);
        assert!(inject_interaction(&d, &spec).is_ok());
    }

    #[test]
    fn exponential_is_clamped() {
        let x = Matrix::from_rows(&[vec![100.0, 100.0], vec![-100.0, -100.0]]).unwrap();
        let d = Dataset::unnamed(x, vec![0.0, 0.0]).unwrap();
        let out = inject_interaction(&d, &InjectionSpec::new(InjectionForm::Exponential, (0, 1), 1.0)).unwrap();
        assert!((out.y[0] - 10f64.exp()).abs() < 1e-6);
        assert!((out.y[1] - (-10f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_pairs() {
        let d = data(10);
        assert!(inject_interaction(&d, &InjectionSpec::new(InjectionForm::Multiplicative, (1, 1), 1.0)).is_err());
        assert!(inject_interaction(&d, &InjectionSpec::new(InjectionForm::Multiplicative, (0, 3), 1.0)).is_err());
    }
}
