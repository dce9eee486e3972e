//! Problem definition: loss, box constraint, penalty weight and the
//! parameter-selection rules (gradient bound, `mu_star`) the dynamics need.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Coordinatewise box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("box bounds", lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Config(format!("box bound {i} is not finite")));
            }
            if l > u {
                return Err(Error::Config(format!(
                    "box bound {i}: lower {l} exceeds upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The box `[0, upper]`.
    pub fn one_sided(upper: DVector<f64>) -> Result<Self> {
        if let Some(i) = upper.iter().position(|&u| u < 0.0) {
            return Err(Error::Config(format!("upper bound {i} is negative")));
        }
        Self::new(DVector::zeros(upper.len()), upper)
    }

    /// The box `[0, k]^n`.
    pub fn uniform(n: usize, k: f64) -> Result<Self> {
        Self::one_sided(DVector::from_element(n, k))
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn is_one_sided(&self) -> bool {
        self.lower.iter().all(|&l| l == 0.0)
    }

    /// `‖upper‖_∞`.
    pub fn max_upper(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, &u| m.max(u.abs()))
    }

    /// Smallest nonzero upper bound; pinned coordinates (`upper = 0`) are ignored.
    /// `None` when every coordinate is pinned.
    pub fn min_positive_upper(&self) -> Option<f64> {
        self.upper
            .iter()
            .filter(|&&u| u != 0.0)
            .fold(None, |m: Option<f64>, &u| Some(m.map_or(u, |m| m.min(u))))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, x: &mut DVector<f64>) {
        for ((v, l), u) in x.iter_mut().zip(self.lower.iter()).zip(self.upper.iter()) {
            *v = v.clamp(*l, *u);
        }
    }

    /// [`BoxSet::project_in_place`], then flush subnormal entries to zero.
    /// Coordinates decaying toward a zero target never reach it exactly, and
    /// subnormal arithmetic is slow enough to dominate long runs.
    pub(crate) fn project_flush(&self, x: &mut DVector<f64>) {
        self.project_in_place(x);
        for v in x.iter_mut() {
            if v.abs() < f64::MIN_POSITIVE {
                *v = 0.0;
            }
        }
    }
}

/// Componentwise `median(lower_i, x_i, upper_i)`.
pub fn project_box(x: &DVector<f64>, bounds: &BoxSet) -> Result<DVector<f64>> {
    check_len("project_box input", bounds.dim(), x.len())?;
    Ok(bounds.project(x))
}

/// Smooth convex loss.
///
/// Implementors must be convex with a locally Lipschitz gradient; nothing
/// here can verify that for user-supplied losses.
pub trait LossModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Downcast hook used for quadratic-only shortcuts.
    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        None
    }
}

/// `f(x) = ‖Ax − b‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QuadraticLoss {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_len("rows of A vs length of b", a.nrows(), b.len())?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }
}

impl LossModel for QuadraticLoss {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.residual(x);
        self.a.tr_mul(&r) * 2.0
    }

    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        Some(self)
    }
}

/// `2Aᵀ(Ax − b)`.
pub fn quadratic_gradient(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("rows of A vs length of b", a.nrows(), b.len())?;
    check_len("columns of A vs length of x", a.ncols(), x.len())?;
    Ok(a.tr_mul(&(a * x - b)) * 2.0)
}

/// Which form of the quadratic gradient bound to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradBoundBranch {
    /// `‖C1‖_∞` when `A` and `b` are entrywise nonnegative, otherwise the general form.
    Auto,
    /// `max(‖C1‖_∞, ‖C2‖_∞)` regardless of signs.
    General,
}

/// Upper bound on `‖∇f(x)‖_∞` over `[0, k]ⁿ` for `f = ‖Ax − b‖²`.
///
/// With `W = |A|`, `C1 = 2(WᵀW k𝟙 − Aᵀb)` and `C2 = 2(−WᵀW k𝟙 − Aᵀb)`; the
/// result is `max(‖C1‖_∞, ‖C2‖_∞)`, or just `‖C1‖_∞` when all of `A` and `b`
/// are nonnegative. The nonnegative shortcut ignores the `−2Aᵀb` lower end of
/// the gradient range, so it can undershoot when `b` dominates `A`;
/// [`ProblemSpec::quadratic`] guards against that.
pub fn estimate_grad_bound(a: &DMatrix<f64>, b: &DVector<f64>, k: f64) -> Result<f64> {
    grad_bound_with(a, b, k, GradBoundBranch::Auto)
}

pub fn grad_bound_with(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    k: f64,
    branch: GradBoundBranch,
) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Config(format!("box bound k must be positive, got {k}")));
    }
    check_len("rows of A vs length of b", a.nrows(), b.len())?;
    let w = a.abs();
    let atb = a.tr_mul(b);
    let wtw_k1 = w.tr_mul(&(&w * DVector::from_element(a.ncols(), k)));
    let c1 = (&wtw_k1 - &atb) * 2.0;
    let l1 = c1.amax();
    let nonnegative = a.iter().all(|&v| v >= 0.0) && b.iter().all(|&v| v >= 0.0);
    if branch == GradBoundBranch::Auto && nonnegative {
        return Ok(l1);
    }
    let c2 = (-wtw_k1 - atb) * 2.0;
    Ok(l1.max(c2.amax()))
}

/// `0.9 · min{k, 3λ/(2(k + L_f)), 2λ/(n L_f)}`.
///
/// Uses the common bound `k` for both the largest and the smallest nonzero
/// upper bound, so it is only guaranteed admissible for `[0, k]ⁿ`. For
/// heterogeneous boxes use [`default_mu_star`].
pub fn select_mu_star(k: f64, lambda: f64, n: usize, grad_bound: f64) -> Result<f64> {
    if !(k > 0.0) || !(lambda > 0.0) || n == 0 || !(grad_bound > 0.0) {
        return Err(Error::Config(format!(
            "select_mu_star needs positive inputs (k = {k}, lambda = {lambda}, n = {n}, grad_bound = {grad_bound})"
        )));
    }
    let terms = [
        k,
        3.0 * lambda / (2.0 * (k + grad_bound)),
        2.0 * lambda / (n as f64 * grad_bound),
    ];
    Ok(0.9 * terms.iter().copied().fold(f64::INFINITY, f64::min))
}

/// One term of the admissibility bound on `mu_star`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuStarTerm {
    pub name: &'static str,
    pub value: f64,
}

/// The three terms `mu_star` must stay strictly below:
/// the smallest nonzero upper bound, `3λ/(2(v̄ + L_f))` and `2λ/(n L_f)`.
pub fn mu_star_terms(bounds: &BoxSet, lambda: f64, grad_bound: f64) -> [MuStarTerm; 3] {
    let n = bounds.dim() as f64;
    let vbar = bounds.max_upper();
    let vmin = bounds.min_positive_upper().unwrap_or(f64::INFINITY);
    let div = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    [
        MuStarTerm {
            name: "min nonzero upper bound",
            value: vmin,
        },
        MuStarTerm {
            name: "3*lambda/(2*(max upper bound + grad_bound))",
            value: div(3.0 * lambda, 2.0 * (vbar + grad_bound)),
        },
        MuStarTerm {
            name: "2*lambda/(n*grad_bound)",
            value: div(2.0 * lambda, n * grad_bound),
        },
    ]
}

/// Fails naming the first violated term.
pub fn check_mu_star(mu_star: f64, bounds: &BoxSet, lambda: f64, grad_bound: f64) -> Result<()> {
    if !(mu_star > 0.0) || !mu_star.is_finite() {
        return Err(Error::Config(format!("mu_star must be positive, got {mu_star}")));
    }
    for term in mu_star_terms(bounds, lambda, grad_bound) {
        if !(mu_star < term.value) {
            return Err(Error::MuStarBound {
                term: term.name,
                bound: term.value,
                mu_star,
            });
        }
    }
    Ok(())
}

/// `0.9 ×` the tightest admissibility term, using the true largest and
/// smallest nonzero upper bounds. Coincides with [`select_mu_star`] on `[0, k]ⁿ`.
pub fn default_mu_star(spec: &ProblemSpec) -> f64 {
    let min_term = mu_star_terms(&spec.bounds, spec.lambda, spec.grad_bound)
        .iter()
        .map(|t| t.value)
        .fold(f64::INFINITY, f64::min);
    0.9 * min_term
}

/// `min f(x) + λ‖x‖₀` over a one-sided box, plus the gradient bound `L_f`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub loss: Arc<dyn LossModel>,
    pub bounds: BoxSet,
    pub lambda: f64,
    pub grad_bound: f64,
}

const GRAD_BOUND_SAMPLES: usize = 16;

impl ProblemSpec {
    /// Validates dimensions, `lambda > 0`, and that `grad_bound` dominates
    /// `‖∇f‖_∞` on a sampled set of box points (both corners, the midpoint
    /// and a fixed pseudo-random sample).
    pub fn new(loss: Arc<dyn LossModel>, bounds: BoxSet, lambda: f64, grad_bound: f64) -> Result<Self> {
        check_len("loss dimension vs box", bounds.dim(), loss.dim())?;
        if !bounds.is_one_sided() {
            return Err(Error::Config(
                "the solver works on boxes [0, upper]; split two-sided problems first".into(),
            ));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if !(grad_bound > 0.0) || !grad_bound.is_finite() {
            return Err(Error::Config(format!(
                "grad_bound must be positive, got {grad_bound}"
            )));
        }
        let spec = Self {
            loss,
            bounds,
            lambda,
            grad_bound,
        };
        spec.check_grad_bound()?;
        Ok(spec)
    }

    /// Quadratic problem with `L_f` computed from the data. The bound is the
    /// [`estimate_grad_bound`] value at `k = ‖upper‖_∞`, raised to `‖2Aᵀb‖_∞`
    /// (the gradient norm at the origin) if the nonnegative shortcut undershoots.
    pub fn quadratic(a: DMatrix<f64>, b: DVector<f64>, bounds: BoxSet, lambda: f64) -> Result<Self> {
        let loss = QuadraticLoss::new(a, b)?;
        let k = bounds.max_upper();
        let grad_bound = if k > 0.0 {
            let est = estimate_grad_bound(loss.a(), loss.b(), k)?;
            est.max(loss.a().tr_mul(loss.b()).amax() * 2.0)
        } else {
            loss.a().tr_mul(loss.b()).amax() * 2.0
        };
        // all-zero data gives a zero gradient; any positive bound is valid then
        let grad_bound = if grad_bound > 0.0 { grad_bound } else { f64::MIN_POSITIVE.sqrt() };
        Self::new(Arc::new(loss), bounds, lambda, grad_bound)
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn check_grad_bound(&self) -> Result<()> {
        let n = self.dim();
        let lo = self.bounds.lower();
        let hi = self.bounds.upper();
        let mut points = vec![lo.clone(), hi.clone(), (lo + hi) * 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0x10f1_0e5e);
        for _ in 0..GRAD_BOUND_SAMPLES {
            points.push(DVector::from_fn(n, |i, _| lo[i] + rng.random::<f64>() * (hi[i] - lo[i])));
        }
        for p in &points {
            let g = self.loss.gradient(p).amax();
            if g > self.grad_bound * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::Config(format!(
                    "grad_bound {} is below a sampled gradient norm {g}",
                    self.grad_bound
                )));
            }
        }
        Ok(())
    }

    /// Lipschitz constant `2σ_max(A)²` of `∇f` for quadratic losses; `None`
    /// for other losses.
    pub fn gradient_lipschitz(&self) -> Option<f64> {
        let q = self.loss.as_quadratic()?;
        let s = q.a().clone().singular_values().max();
        Some(2.0 * s * s)
    }

    /// `f(x) + λ‖x‖₀`, counting exact nonzeros.
    pub fn objective_true(&self, x: &DVector<f64>) -> f64 {
        self.loss.value(x) + self.lambda * crate::l0_norm(x) as f64
    }
}

/// Annealing law for the smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `μ(t) = ½(α₀/(1+t)^β + μ*)`
    #[default]
    PowerLaw,
    /// `μ(t) = ½(α₀ e^{−βt} + μ*)`
    Exponential,
}

/// Parameters of the projection dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub gamma: f64,
    pub alpha0: f64,
    pub beta: f64,
    pub mu_star: f64,
    pub schedule: ScheduleKind,
    /// Integrator step `h`.
    pub step: f64,
    /// `T_max`.
    pub horizon: f64,
    pub residual_tol: f64,
}

pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

impl DynamicsParams {
    /// `γ = α₀ = β = 1`, `h = 0.01/γ`, horizon 10, `mu_star` from [`default_mu_star`].
    pub fn for_problem(spec: &ProblemSpec) -> Self {
        Self {
            gamma: 1.0,
            alpha0: 1.0,
            beta: 1.0,
            mu_star: default_mu_star(spec),
            schedule: ScheduleKind::PowerLaw,
            step: 0.01,
            horizon: 10.0,
            residual_tol: DEFAULT_RESIDUAL_TOL,
        }
    }

    /// Checks positivity of every rate/scale and `mu_star` admissibility for `spec`.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("alpha0", self.alpha0),
            ("beta", self.beta),
            ("step", self.step),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::Config(format!(
                "residual_tol must be nonnegative, got {}",
                self.residual_tol
            )));
        }
        check_mu_star(self.mu_star, &spec.bounds, spec.lambda, spec.grad_bound)
    }

    /// Entries below this count as zero when reporting supports.
    pub fn num_zero_tol(&self) -> f64 {
        self.mu_star / 12.0
    }
}
