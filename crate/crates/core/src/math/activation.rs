use serde::{Deserialize, Serialize};

/// Smooth elementwise nonlinearity with closed-form first and second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Identity,
    /// `x²`. Exists for building networks with known curvature in tests.
    Square,
}

impl Activation {
    /// Returns `(f(x), f'(x), f''(x))`.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Activation::Softplus => {
                let v = x.max(0.0) + (-x.abs()).exp().ln_1p();
                let s = sigmoid(x);
                (v, s, s * (1.0 - s))
            }
            Activation::Identity => (x, 1.0, 0.0),
            Activation::Square => (x * x, 2.0 * x, 2.0),
        }
    }

    /// `(f(x), f'(x))`, skipping the second derivative.
    #[inline]
    pub fn eval_d1(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Softplus => (x.max(0.0) + (-x.abs()).exp().ln_1p(), sigmoid(x)),
            Activation::Identity => (x, 1.0),
            Activation::Square => (x * x, 2.0 * x),
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        self.eval_d1(x).0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd(a: Activation, x: f64, h: f64) -> (f64, f64) {
        let d1 = (a.value(x + h) - a.value(x - h)) / (2.0 * h);
        let d2 = (a.eval(x + h).1 - a.eval(x - h).1) / (2.0 * h);
        (d1, d2)
    }

    #[test]
    fn closed_forms_at_origin() {
        assert_eq!(Activation::Tanh.eval(0.0), (0.0, 1.0, 0.0));
        let (v, d1, d2) = Activation::Softplus.eval(0.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!((d1, d2), (0.5, 0.25));
        assert_eq!(Activation::Identity.eval(3.7).2, 0.0);
    }

    #[test]
    fn tanh_at_one_matches_finite_differences() {
        let (_, d1, d2) = Activation::Tanh.eval(1.0);
        let (f1, f2) = fd(Activation::Tanh, 1.0, 1e-4);
        assert!(((d1 - f1) / d1).abs() < 1e-6);
        assert!(((d2 - f2) / d2).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let (v, d1, d2) = Activation::Softplus.eval(800.0);
        assert_eq!(v, 800.0);
        assert_eq!(d1, 1.0);
        assert_eq!(d2, 0.0);
        let (v, d1, _) = Activation::Softplus.eval(-800.0);
        assert!(v >= 0.0 && v < 1e-300 && d1 < 1e-300);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn derivatives_match_finite_differences(x in -6.0f64..6.0, k in 0usize..4) {
            let a = [Activation::Tanh, Activation::Softplus, Activation::Identity, Activation::Square][k];
            let (v, d1, d2) = a.eval(x);
            prop_assert!(v.is_finite() && d1.is_finite() && d2.is_finite());
            let (f1, f2) = fd(a, x, 1e-4);
            prop_assert!((d1 - f1).abs() <= 1e-5 * d1.abs().max(1.0));
            prop_assert!((d2 - f2).abs() <= 1e-5 * d2.abs().max(1.0));
        }
    }
}
