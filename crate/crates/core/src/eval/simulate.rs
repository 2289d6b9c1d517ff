use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{stats, Matrix, RngStream};

/// Functional forms `h(x, y)` available to simulated interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionForm {
    /// `x·y`
    Product,
    /// `x²·y²`
    SquareProduct,
    /// `exp(x + y)`
    Exp,
    /// `x / (y + offset)`
    Div,
    /// `max(x, y)`
    Max,
    /// `sin(πx)·y`
    SinProduct,
    /// `(x + y)²`
    SquareSum,
    /// `|x − y|`
    AbsDiff,
}

impl InteractionForm {
    pub fn eval(&self, x: f64, y: f64, offset: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Self::Product => x * y,
            Self::SquareProduct => x * x * y * y,
            Self::Exp => (x + y).exp(),
            Self::Div => x / (y + offset),
            Self::Max => x.max(y),
            Self::SinProduct => (PI * x).sin() * y,
            Self::SquareSum => (x + y).powi(2),
            Self::AbsDiff => (x - y).abs(),
        }
    }

    /// `∂²h/∂x∂y` (zero almost everywhere for the piecewise-linear forms).
    pub fn mixed_partial(&self, x: f64, y: f64, offset: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Self::Product => 1.0,
            Self::SquareProduct => 4.0 * x * y,
            Self::Exp => (x + y).exp(),
            Self::Div => -1.0 / (y + offset).powi(2),
            Self::Max | Self::AbsDiff => 0.0,
            Self::SinProduct => PI * (PI * x).cos(),
            Self::SquareSum => 2.0,
        }
    }

    /// Whether the mixed partial is smooth (not a kink or a constant-zero form).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::Max | Self::AbsDiff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionTerm {
    pub form: InteractionForm,
    /// Zero-based feature indices.
    pub pair: [usize; 2],
    pub weight: f64,
    /// Denominator shift, used by the division form only.
    #[serde(default)]
    pub offset: f64,
}

impl InteractionTerm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weight * self.form.eval(x[self.pair[0]], x[self.pair[1]], self.offset)
    }

    pub fn mixed_partial(&self, x: &[f64]) -> f64 {
        self.weight * self.form.mixed_partial(x[self.pair[0]], x[self.pair[1]], self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub main_weights: Vec<f64>,
    pub interactions: Vec<InteractionTerm>,
    /// Uniform sampling interval per feature.
    pub ranges: Vec<[f64; 2]>,
    pub signal_to_noise: f64,
    /// Replace the target by standard normal noise (signal discarded).
    pub pure_noise: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let wide = [0.5, 1.5];
        let narrow = [-0.5, 0.5];
        let forms = [
            InteractionForm::Product,
            InteractionForm::SquareProduct,
            InteractionForm::Exp,
            InteractionForm::Div,
            InteractionForm::Max,
            InteractionForm::SquareProduct,
            InteractionForm::SquareSum,
        ];
        let weights = [3.0, 3.0, 1.0, 3.0, 2.5, 3.0, 1.5];
        Self {
            n_train: 20_000,
            n_val: 5_000,
            n_test: 5_000,
            main_weights: vec![1.0; 8],
            interactions: forms
                .iter()
                .zip(weights)
                .enumerate()
                .map(|(k, (form, weight))| InteractionTerm {
                    form: *form,
                    pair: [k, k + 1],
                    weight,
                    offset: 0.0,
                })
                .collect(),
            ranges: vec![wide, narrow, wide, narrow, wide, wide, narrow, wide],
            signal_to_noise: 1.0,
            pure_noise: false,
        }
    }
}

/// Set of truly interacting pairs (zero-based, `i < j`, sorted).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub pairs: Vec<[usize; 2]>,
}

impl GroundTruth {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut p: Vec<[usize; 2]> = pairs.into_iter().map(|(i, j)| [i.min(j), i.max(j)]).collect();
        p.sort_unstable();
        p.dedup();
        Self { pairs: p }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.binary_search(&[i.min(j), i.max(j)]).is_ok()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl SyntheticSpec {
    /// Default spec with every split scaled by `factor`.
    pub fn scaled(factor: f64) -> Self {
        let d = Self::default();
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            n_train: s(d.n_train),
            n_val: s(d.n_val),
            n_test: s(d.n_test),
            ..d
        }
    }

    pub fn dim(&self) -> usize {
        self.main_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("at least one feature is required"));
        }
        if self.ranges.len() != d {
            return Err(Error::invalid(format!("{} ranges for {d} features", self.ranges.len())));
        }
        if self.ranges.iter().any(|[a, b]| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::invalid("each range must be a finite interval [low, high] with low < high"));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::invalid("every split needs at least one row"));
        }
        if !(self.signal_to_noise >= 0.0) || !self.signal_to_noise.is_finite() {
            return Err(Error::invalid("signal_to_noise must be a finite non-negative number"));
        }
        if self.signal_to_noise == 0.0 && !self.pure_noise {
            return Err(Error::invalid(
                "signal_to_noise = 0 implies infinite noise variance; set \"pure_noise\": true for a noise-only target",
            ));
        }
        for t in &self.interactions {
            let [i, j] = t.pair;
            if i == j || i >= d || j >= d {
                return Err(Error::invalid(format!("interaction pair ({i}, {j}) invalid for {d} features")));
            }
            if t.form == InteractionForm::Div {
                let [a, b] = self.ranges[j];
                let (lo, hi) = (a + t.offset, b + t.offset);
                if lo.min(hi) < 0.5 && hi.max(lo) > -0.5 {
                    return Err(Error::invalid(format!(
                        "division by feature {j}: range plus offset must stay at least 0.5 away from zero"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth::new(
            self.interactions
                .iter()
                .filter(|t| t.weight != 0.0)
                .map(|t| (t.pair[0], t.pair[1])),
        )
    }

    /// Noise-free response at one point.
    pub fn signal(&self, x: &[f64]) -> f64 {
        let main: f64 = self.main_weights.iter().zip(x).map(|(w, v)| w * v).sum();
        let inter: f64 = self
            .interactions
            .iter()
            .map(|t| t.eval(x))
            .sum();
        main + inter
    }

    /// `∂²signal/∂x_i∂x_j` at one point.
    pub fn signal_mixed_partial(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let key = [i.min(j), i.max(j)];
        self.interactions
            .iter()
            .filter(|t| [t.pair[0].min(t.pair[1]), t.pair[0].max(t.pair[1])] == key)
            .map(|t| t.mixed_partial(x))
            .sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
    /// Noise variance actually used.
    pub noise_var: f64,
}

/// Draw train/val/test splits from the additive-plus-interactions model,
/// with noise variance set to `Var(signal) / SN` on the generated signal.
pub fn simulate(spec: &SyntheticSpec, rng: RngStream) -> Result<SimulatedData> {
    spec.validate()?;
    let n = spec.n_train + spec.n_val + spec.n_test;
    let d = spec.dim();
    let mut feat_rng = rng.child(0).rng();
    let x = Matrix::from_fn(n, d, |_, c| {
        let [a, b] = spec.ranges[c];
        feat_rng.random_range(a..b)
    });
    let signal: Vec<f64> = (0..n).map(|r| spec.signal(x.row(r))).collect();
    let mut noise_rng = rng.child(1).rng();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (y, noise_var) = if spec.pure_noise {
        ((0..n).map(|_| std_normal.sample(&mut noise_rng)).collect(), 1.0)
    } else {
        let var = stats::population_variance(&signal) / spec.signal_to_noise;
        let sd = var.sqrt();
        let y = signal
            .iter()
            .map(|s| s + sd * std_normal.sample(&mut noise_rng))
            .collect();
        (y, var)
    };
    let all = Dataset::new(spec.feature_names(), x, y)?;
    let idx: Vec<usize> = (0..n).collect();
    let (a, b) = (spec.n_train, spec.n_train + spec.n_val);
    Ok(SimulatedData {
        train: all.select_rows(&idx[..a]),
        val: all.select_rows(&idx[a..b]),
        test: all.select_rows(&idx[b..]),
        truth: spec.truth(),
        noise_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_train: n,
            n_val: 10,
            n_test: 10,
            ..Default::default()
        }
    }

    #[test]
    fn default_spec_shape() {
        let s = SyntheticSpec::default();
        s.validate().unwrap();
        assert_eq!(s.dim(), 8);
        assert_eq!(s.truth().pairs, (0..7).map(|k| [k, k + 1]).collect::<Vec<_>>());
        assert_eq!(s.ranges[1], [-0.5, 0.5]);
        assert_eq!(s.ranges[4], [0.5, 1.5]);
    }

    #[test]
    fn noise_to_signal_ratio_matches() {
        let s = spec(20_000);
        let data = simulate(&s, RngStream::new(3)).unwrap();
        let sig: Vec<f64> = (0..data.train.len()).map(|r| s.signal(data.train.x.row(r))).collect();
        let resid: Vec<f64> = data.train.y.iter().zip(&sig).map(|(y, s)| y - s).collect();
        let ratio = stats::population_variance(&resid) / stats::population_variance(&sig);
        assert!((0.9..=1.1).contains(&ratio), "{ratio}");
    }

    #[test]
    fn features_respect_ranges() {
        let s = spec(500);
        let data = simulate(&s, RngStream::new(4)).unwrap();
        for r in 0..data.train.len() {
            for (c, [a, b]) in s.ranges.iter().enumerate() {
                let v = data.train.x[(r, c)];
                assert!(v >= *a && v < *b);
            }
        }
    }

    #[test]
    fn zero_snr_is_rejected_unless_pure_noise() {
        let mut s = spec(50);
        s.signal_to_noise = 0.0;
        let err = simulate(&s, RngStream::new(1)).unwrap_err();
        assert!(err.to_string().contains("pure_noise"));
        s.pure_noise = true;
        assert!(simulate(&s, RngStream::new(1)).is_ok());
    }

    #[test]
    fn zero_weights_give_empty_truth() {
        let mut s = spec(50);
        for t in &mut s.interactions {
            t.weight = 0.0;
        }
        assert!(s.truth().is_empty());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let s = spec(100);
        assert_eq!(simulate(&s, RngStream::new(9)).unwrap(), simulate(&s, RngStream::new(9)).unwrap());
        assert_ne!(simulate(&s, RngStream::new(9)).unwrap(), simulate(&s, RngStream::new(10)).unwrap());
    }

    #[test]
    fn unsafe_division_is_rejected() {
        let mut s = spec(10);
        s.interactions[0].form = InteractionForm::Div;
        assert!(s.validate().is_err());
    }

    #[test]
    fn mixed_partials_match_finite_differences() {
        let forms = [
            InteractionForm::Product,
            InteractionForm::SquareProduct,
            InteractionForm::Exp,
            InteractionForm::Div,
            InteractionForm::SinProduct,
            InteractionForm::SquareSum,
        ];
        let (x, y, h) = (0.7, 0.3, 1e-4);
        for f in forms {
            let e = |a: f64, b: f64| f.eval(a, b, 1.0);
            let fd = (e(x + h, y + h) - e(x + h, y - h) - e(x - h, y + h) + e(x - h, y - h)) / (4.0 * h * h);
            assert!((fd - f.mixed_partial(x, y, 1.0)).abs() < 1e-5, "{f:?}");
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let s = SyntheticSpec::default();
        let json = serde_json::to_string(&s).unwrap();
        let back: SyntheticSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SyntheticSpec>(r#"{"bogus": 1}"#).is_err());
    }
}
