//! Piecewise smoothing surrogate of the cardinality function.
//!
//! ```text
//! θ(s, μ) = 3s/(2μ)                  s < μ/3
//!         = 1 − 9(s − μ)²/(8μ²)      μ/3 ≤ s ≤ μ
//!         = 1                        s > μ
//! ```
//!
//! `θ` is evaluated for negative `s` as well (the linear branch extends);
//! only its values on the box matter to the solver.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Validated smoothing parameter, `μ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Mu(f64);

impl Mu {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self(mu))
        } else {
            Err(Error::Domain(format!("smoothing parameter must be positive, got {mu}")))
        }
    }

    /// For values already known to be positive and finite.
    pub(crate) fn from_positive(mu: f64) -> Self {
        debug_assert!(mu > 0.0 && mu.is_finite());
        Self(mu)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Value and both partial derivatives of `θ` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothEval {
    pub value: f64,
    pub grad_s: f64,
    pub grad_mu: f64,
}

pub fn theta(s: f64, mu: Mu) -> f64 {
    let mu = mu.0;
    if s < mu / 3.0 {
        1.5 * s / mu
    } else if s <= mu {
        let d = s - mu;
        1.0 - 9.0 * d * d / (8.0 * mu * mu)
    } else {
        1.0
    }
}

/// `∂θ/∂s`; globally Lipschitz in `s` with constant `9/(4μ²)`.
pub fn theta_grad_s(s: f64, mu: Mu) -> f64 {
    let mu = mu.0;
    if s < mu / 3.0 {
        1.5 / mu
    } else if s <= mu {
        9.0 * (mu - s) / (4.0 * mu * mu)
    } else {
        0.0
    }
}

/// `∂θ/∂μ`; nonpositive for `s ≥ 0`.
pub fn theta_grad_mu(s: f64, mu: Mu) -> f64 {
    let mu = mu.0;
    if mu > 3.0 * s {
        -1.5 * s / (mu * mu)
    } else if s <= mu {
        -9.0 * (mu - s) * s / (4.0 * mu * mu * mu)
    } else {
        0.0
    }
}

pub fn smooth_eval(s: f64, mu: Mu) -> SmoothEval {
    SmoothEval {
        value: theta(s, mu),
        grad_s: theta_grad_s(s, mu),
        grad_mu: theta_grad_mu(s, mu),
    }
}

/// `Θ(x, μ) = Σ θ(xᵢ, μ)`.
pub fn theta_sum(x: &DVector<f64>, mu: Mu) -> f64 {
    x.iter().map(|&s| theta(s, mu)).sum()
}

pub fn theta_sum_grad_x(x: &DVector<f64>, mu: Mu) -> DVector<f64> {
    x.map(|s| theta_grad_s(s, mu))
}

pub fn theta_sum_grad_mu(x: &DVector<f64>, mu: Mu) -> f64 {
    x.iter().map(|&s| theta_grad_mu(s, mu)).sum()
}

/// `sup |∂θ/∂μ(s, μ)|` over `s ∈ [0, upper]`.
///
/// The map `s ↦ |∂θ/∂μ|` increases on `[0, μ/2]` and peaks at `s = μ/2`
/// with value `9/(16μ)`.
pub fn grad_mu_sup(upper: f64, mu: Mu) -> f64 {
    let peak = 0.5 * mu.0;
    theta_grad_mu(upper.clamp(0.0, peak), mu).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mu(v: f64) -> Mu {
        Mu::new(v).unwrap()
    }

    #[test]
    fn rejects_nonpositive_mu() {
        assert!(Mu::new(0.0).is_err());
        assert!(Mu::new(-1.0).is_err());
        assert!(Mu::new(f64::NAN).is_err());
    }

    #[test]
    fn theta_examples() {
        for m in [0.01, 0.6, 3.0] {
            assert_eq!(theta(0.0, mu(m)), 0.0);
            assert_eq!(theta(m, mu(m)), 1.0);
            assert_eq!(theta(2.0 * m, mu(m)), 1.0);
        }
        // both branches at the breakpoint s = μ/3
        assert_relative_eq!(theta(0.2, mu(0.6)), 0.5, epsilon = 1e-15);
        assert_relative_eq!(1.5 * 0.2 / 0.6, 0.5, epsilon = 1e-15);
        assert_relative_eq!(1.0 - 9.0 * 0.16 / (8.0 * 0.36), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn grad_s_examples() {
        assert_relative_eq!(theta_grad_s(0.1, mu(0.6)), 2.5, epsilon = 1e-15);
        assert_eq!(theta_grad_s(0.6, mu(0.6)), 0.0);
        assert_eq!(theta_grad_s(1.2, mu(0.6)), 0.0);
        assert_relative_eq!(theta_grad_s(0.2, mu(0.6)), 2.5, epsilon = 1e-14);
    }

    #[test]
    fn grad_mu_examples() {
        assert_relative_eq!(theta_grad_mu(0.1, mu(0.6)), -0.3 / 0.72, epsilon = 1e-15);
        assert_eq!(theta_grad_mu(0.7, mu(0.6)), 0.0);
        assert_eq!(theta_grad_mu(0.0, mu(0.6)), 0.0);
    }

    #[test]
    fn sum_examples() {
        let m = mu(0.5);
        let z = DVector::zeros(4);
        assert_eq!(theta_sum(&z, m), 0.0);
        assert!(theta_sum_grad_x(&z, m).iter().all(|&g| g == 3.0));
        assert_eq!(theta_sum_grad_mu(&z, m), 0.0);
        assert_eq!(theta_sum(&DVector::from_element(7, 1.0), m), 7.0);
        let x = DVector::from_vec(vec![0.2, 0.8]);
        assert_relative_eq!(theta_sum(&x, mu(0.6)), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn continuity_at_breakpoints() {
        for m in [1e-3, 0.6, 4.0] {
            let mm = mu(m);
            let eps = 1e-9 * m;
            for s in [m / 3.0, m] {
                for f in [theta as fn(f64, Mu) -> f64, theta_grad_s] {
                    let tol = 1e-5 * (1.0 + 1.0 / m);
                    assert!((f(s + eps, mm) - f(s, mm)).abs() < tol);
                    assert!((f(s - eps, mm) - f(s, mm)).abs() < tol);
                }
            }
        }
    }

    #[test]
    fn saturation_is_exact_below_s() {
        for s in [1e-4, 0.3, 2.0] {
            for k in 1..20 {
                let m = s * (k as f64) / 20.0;
                assert_eq!(theta(s, mu(m)), 1.0);
            }
        }
    }

    #[test]
    fn sum_converges_to_cardinality() {
        let x = DVector::from_vec(vec![0.0, 1e-3, 0.5, 0.0, 2.0]);
        assert_eq!(theta_sum(&x, mu(1e-4)), 3.0);
        assert!(theta_sum(&x, mu(1.0)) < 3.0);
    }

    #[test]
    fn grad_mu_sup_peak() {
        let m = mu(0.4);
        assert_relative_eq!(grad_mu_sup(10.0, m), 9.0 / (16.0 * 0.4), max_relative = 1e-14);
        assert_relative_eq!(grad_mu_sup(0.05, m), theta_grad_mu(0.05, m).abs());
        assert_eq!(grad_mu_sup(0.0, m), 0.0);
    }

    proptest! {
        #[test]
        fn bounds_and_monotonicity(s in 0.0f64..10.0, m in 1e-4f64..5.0, ds in 0.0f64..1.0) {
            let mm = mu(m);
            let v = theta(s, mm);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(theta_grad_s(s, mm) >= 0.0);
            prop_assert!(theta_grad_mu(s, mm) <= 0.0);
            prop_assert!(theta(s + ds, mm) >= v);
            prop_assert!(theta(s, mu(m + ds)) <= v);
        }

        #[test]
        fn grad_s_is_lipschitz(s1 in -1.0f64..3.0, s2 in -1.0f64..3.0, m in 1e-3f64..2.0) {
            let mm = mu(m);
            let lhs = (theta_grad_s(s1, mm) - theta_grad_s(s2, mm)).abs();
            let rhs = 9.0 / (4.0 * m * m) * (s1 - s2).abs();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
