//! Two-sided boxes `−l ≤ y ≤ u` via `y = x₊ − x₋` with
//! `(x₊, x₋) ∈ [0, u] × [0, l]`, penalized by `λ‖x₊‖₀ + λ‖x₋‖₀`.

use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correction::{apply_correction, correct, solve_and_correct};
use crate::dynamics::{SolveOptions, SolveReport};
use crate::error::{check_len, Error, Result};
use crate::model::{grad_bound_with, DynamicsParams, BoxSet, GradBoundBranch, LossModel, ProblemSpec, QuadraticLoss};

/// `min f(y) + λ‖y‖₀` over `[−lower_mag, upper]`.
#[derive(Debug, Clone)]
pub struct TwoSidedSpec {
    pub loss: Arc<dyn LossModel>,
    pub lower_mag: DVector<f64>,
    pub upper: DVector<f64>,
    pub lambda: f64,
    /// Bound on `‖∇f‖_∞` over `[−l, u]`. Computed from the data for
    /// quadratic losses; required for anything else.
    pub grad_bound: Option<f64>,
}

impl TwoSidedSpec {
    pub fn new(
        loss: Arc<dyn LossModel>,
        lower_mag: DVector<f64>,
        upper: DVector<f64>,
        lambda: f64,
        grad_bound: Option<f64>,
    ) -> Result<Self> {
        check_len("lower magnitudes", loss.dim(), lower_mag.len())?;
        check_len("upper bounds", loss.dim(), upper.len())?;
        for (name, v) in [("lower magnitude", &lower_mag), ("upper bound", &upper)] {
            if let Some(i) = v.iter().position(|&e| !(e >= 0.0) || !e.is_finite()) {
                return Err(Error::Config(format!("{name} {i} must be finite and nonnegative")));
            }
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            loss,
            lower_mag,
            upper,
            lambda,
            grad_bound,
        })
    }

    pub fn quadratic(
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower_mag: DVector<f64>,
        upper: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(Arc::new(QuadraticLoss::new(a, b)?), lower_mag, upper, lambda, None)
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        y.len() == self.dim() && (0..self.dim()).all(|i| -self.lower_mag[i] <= y[i] && y[i] <= self.upper[i])
    }

    /// `f(y) + λ‖y‖₀`.
    pub fn objective_true(&self, y: &DVector<f64>) -> f64 {
        self.loss.value(y) + self.lambda * crate::l0_norm(y) as f64
    }

    /// `(max(y, 0), max(−y, 0))` stacked, the complementary lift of `y`.
    pub fn lift(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("two-sided point", self.dim(), y.len())?;
        let n = self.dim();
        Ok(DVector::from_fn(2 * n, |i, _| {
            if i < n {
                y[i].max(0.0)
            } else {
                (-y[i - n]).max(0.0)
            }
        }))
    }
}

/// `g(x₊, x₋) = f(x₊ − x₋)` for a non-quadratic `f`.
#[derive(Debug, Clone)]
pub struct SplitLoss {
    inner: Arc<dyn LossModel>,
}

impl SplitLoss {
    pub fn new(inner: Arc<dyn LossModel>) -> Self {
        Self { inner }
    }

    fn difference(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.inner.dim();
        x.rows(0, n) - x.rows(n, n)
    }
}

impl LossModel for SplitLoss {
    fn dim(&self) -> usize {
        2 * self.inner.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(&self.difference(x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.inner.gradient(&self.difference(x));
        let n = g.len();
        DVector::from_fn(2 * n, |i, _| if i < n { g[i] } else { -g[i - n] })
    }
}

/// The one-sided `2n`-dimensional problem over `[0, u] × [0, l]`.
///
/// Quadratic losses become `‖[A, −A]x − b‖²` with the gradient bound taken
/// from the general (mixed-sign) branch at `k = max(‖u‖_∞, ‖l‖_∞)`.
pub fn split(spec: &TwoSidedSpec) -> Result<ProblemSpec> {
    let upper = DVector::from_iterator(
        2 * spec.dim(),
        spec.upper.iter().chain(spec.lower_mag.iter()).copied(),
    );
    let bounds = BoxSet::one_sided(upper)?;
    match spec.loss.as_quadratic() {
        Some(q) => {
            let a = q.a();
            let (m, n) = a.shape();
            let mut stacked = DMatrix::zeros(m, 2 * n);
            stacked.columns_mut(0, n).copy_from(a);
            stacked.columns_mut(n, n).copy_from(&(-a));
            let k = bounds.max_upper();
            let origin = a.tr_mul(q.b()).amax() * 2.0;
            let mut grad_bound = if k > 0.0 {
                grad_bound_with(&stacked, q.b(), k, GradBoundBranch::General)?.max(origin)
            } else {
                origin
            };
            if let Some(user) = spec.grad_bound {
                grad_bound = user;
            }
            if !(grad_bound > 0.0) {
                grad_bound = f64::MIN_POSITIVE.sqrt();
            }
            let loss = QuadraticLoss::new(stacked, q.b().clone())?;
            ProblemSpec::new(Arc::new(loss), bounds, spec.lambda, grad_bound)
        }
        None => {
            let grad_bound = spec.grad_bound.ok_or_else(|| {
                Error::Config("a gradient bound is required to split a non-quadratic loss".into())
            })?;
            ProblemSpec::new(Arc::new(SplitLoss::new(spec.loss.clone())), bounds, spec.lambda, grad_bound)
        }
    }
}

/// `x₊ − x₋`.
pub fn recombine(x_plus: &DVector<f64>, x_minus: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("x_minus vs x_plus", x_plus.len(), x_minus.len())?;
    Ok(x_plus - x_minus)
}

/// Raw difference plus the complementarity-cleaned pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recombined {
    pub y: DVector<f64>,
    /// `x₊ − min(x₊, x₋)`
    pub x_plus: DVector<f64>,
    /// `x₋ − min(x₊, x₋)`
    pub x_minus: DVector<f64>,
    /// `max_i min(x₊ᵢ, x₋ᵢ)` before cleaning.
    pub max_overlap: f64,
}

/// Recombines and cleans; warns when some `min(x₊ᵢ, x₋ᵢ)` exceeds `tol`.
pub fn recombine_clean(x_plus: &DVector<f64>, x_minus: &DVector<f64>, tol: f64) -> Result<Recombined> {
    let y = recombine(x_plus, x_minus)?;
    let overlap = x_plus.zip_map(x_minus, f64::min);
    let max_overlap = overlap.iter().fold(0.0, |m: f64, &v| m.max(v));
    if max_overlap > tol {
        warn!("split output is not complementary: max min(x+, x-) = {max_overlap:e}");
    }
    Ok(Recombined {
        y,
        x_plus: x_plus - &overlap,
        x_minus: x_minus - &overlap,
        max_overlap,
    })
}

/// [`solve_and_correct`](crate::correction::solve_and_correct) on the split
/// problem `split_spec = split(original)`. An endpoint with overlapping halves
/// is replaced by the lift of `x₊ − x₋`, corrected again, so the returned
/// point is complementary.
pub fn solve_and_correct_split(
    original: &TwoSidedSpec,
    split_spec: &ProblemSpec,
    params: &DynamicsParams,
    x0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let mut report = solve_and_correct(split_spec, params, x0, opts)?;
    let (p, m) = halves(&report.final_x)?;
    let overlap = p.zip_map(&m, f64::min).amax();
    if overlap > params.num_zero_tol() {
        debug!("relifting split endpoint with overlap {overlap:e}");
        let lifted = original.lift(&(p - m))?;
        let fixed = correct(split_spec, params, &lifted)?;
        apply_correction(split_spec, params, &mut report, fixed.x)?;
    }
    Ok(report)
}

/// Splits a stacked `2n` vector into `(x₊, x₋)`.
pub fn halves(x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() % 2 != 0 {
        return Err(Error::Dimension {
            what: "stacked split vector (must be even)",
            expected: x.len() + 1,
            got: x.len(),
        });
    }
    let n = x.len() / 2;
    Ok((x.rows(0, n).into_owned(), x.rows(n, n).into_owned()))
}
