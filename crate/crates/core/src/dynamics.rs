//! Projection dynamics
//!
//! ```text
//! ẋ = γ(−x + P[x − ∇f(x) − λ∇ₓΘ(x, μ(t))])
//! ```
//!
//! integrated with classical fixed-step RK4 followed by a clamp onto the box.
//! `μ(t)` follows the closed-form schedule, which is the exact solution of
//! the autonomous `μ`-equation, so that equation is never integrated itself.

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::correction::certify_local_min;
use crate::error::{check_len, Error, Result};
use crate::model::{DynamicsParams, ProblemSpec, ScheduleKind};
use crate::smoothing::{grad_mu_sup, theta_grad_s, theta_sum, Mu};

/// Smoothing-parameter schedule `μ(t) = ½(α(t) + μ*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSchedule {
    pub kind: ScheduleKind,
    pub alpha0: f64,
    pub beta: f64,
    pub mu_star: f64,
}

impl MuSchedule {
    pub fn from_params(params: &DynamicsParams) -> Self {
        Self {
            kind: params.schedule,
            alpha0: params.alpha0,
            beta: params.beta,
            mu_star: params.mu_star,
        }
    }

    pub fn mu_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("schedule time must be nonnegative, got {t}")));
        }
        Ok(self.eval(t))
    }

    fn eval(&self, t: f64) -> f64 {
        let alpha = match self.kind {
            ScheduleKind::PowerLaw => self.alpha0 / (1.0 + t).powf(self.beta),
            ScheduleKind::Exponential => self.alpha0 * (-self.beta * t).exp(),
        };
        0.5 * (alpha + self.mu_star)
    }

    /// `μ*/2`, the limit of the schedule.
    pub fn limit(&self) -> f64 {
        0.5 * self.mu_star
    }
}

pub fn mu_at(schedule: &MuSchedule, t: f64) -> Result<f64> {
    schedule.mu_at(t)
}

/// One point on the trajectory. `residual` is the stationarity residual at
/// the limiting parameter `μ*/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub x: DVector<f64>,
    pub mu: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    CertifiedLocalMin,
    NeedsCorrection,
    MaxHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub objective_smooth: f64,
    pub residual: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_x: DVector<f64>,
    pub final_t: f64,
    pub final_residual: f64,
    /// `f + λΘ(·, μ*/2)` at `final_x`.
    pub objective_smooth: f64,
    /// `f + λ|support|`.
    pub objective_true: f64,
    /// Indices with `final_x_i >= mu_star/12`.
    pub support: Vec<usize>,
    pub iterations: usize,
    pub trajectory_samples: Vec<TrajectorySample>,
    pub certificate: Certificate,
    /// Steps where the merit `f + λΘ + λϱ̂μ` rose by more than 1e-8.
    pub merit_violations: usize,
    /// Set once the correction phase has replaced `final_x`.
    pub corrected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Record a trajectory sample every `sample_stride` steps; 0 keeps only the endpoints.
    pub sample_stride: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { sample_stride: 100 }
    }
}

const MERIT_SLACK: f64 = 1e-8;

/// `P[x − g − λ∇ₓΘ(x, μ)]` for a precomputed loss gradient `g`.
fn projected_target(spec: &ProblemSpec, x: &DVector<f64>, grad: &DVector<f64>, mu: Mu) -> DVector<f64> {
    let lo = spec.bounds.lower();
    let hi = spec.bounds.upper();
    DVector::from_fn(x.len(), |i, _| {
        let v = x[i] - grad[i] - spec.lambda * theta_grad_s(x[i], mu);
        v.clamp(lo[i], hi[i])
    })
}

fn field_with_grad(spec: &ProblemSpec, gamma: f64, x: &DVector<f64>, grad: &DVector<f64>, mu: Mu) -> DVector<f64> {
    (projected_target(spec, x, grad, mu) - x) * gamma
}

fn residual_with_grad(spec: &ProblemSpec, x: &DVector<f64>, grad: &DVector<f64>, mu: Mu) -> f64 {
    (projected_target(spec, x, grad, mu) - x).amax()
}

/// `γ(−x + P[x − ∇f(x) − λ∇ₓΘ(x, μ(t))])`.
pub fn rhs(spec: &ProblemSpec, params: &DynamicsParams, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_len("state vector", spec.dim(), x.len())?;
    let mu = Mu::new(MuSchedule::from_params(params).mu_at(t)?)?;
    Ok(field_with_grad(spec, params.gamma, x, &spec.loss.gradient(x), mu))
}

/// `‖x − P[x − ∇f(x) − λ∇ₓΘ(x, μ)]‖_∞`; zero exactly at `μ`-stationary points.
pub fn stationarity_residual(spec: &ProblemSpec, x: &DVector<f64>, mu: f64) -> Result<f64> {
    check_len("state vector", spec.dim(), x.len())?;
    let mu = Mu::new(mu)?;
    Ok(residual_with_grad(spec, x, &spec.loss.gradient(x), mu))
}

/// Classical RK4 step of `ẋ = field(x, t)` given the first stage `k1`.
pub(crate) fn rk4<F>(mut field: F, x: &DVector<f64>, k1: DVector<f64>, t: f64, h: f64) -> DVector<f64>
where
    F: FnMut(&DVector<f64>, f64) -> DVector<f64>,
{
    let half = 0.5 * h;
    let k2 = field(&(x + &k1 * half), t + half);
    let k3 = field(&(x + &k2 * half), t + half);
    let k4 = field(&(x + &k3 * h), t + h);
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

struct Flow<'a> {
    spec: &'a ProblemSpec,
    gamma: f64,
    schedule: MuSchedule,
    limit: Mu,
}

impl<'a> Flow<'a> {
    fn new(spec: &'a ProblemSpec, params: &DynamicsParams) -> Result<Self> {
        let schedule = MuSchedule::from_params(params);
        Ok(Self {
            spec,
            gamma: params.gamma,
            schedule,
            limit: Mu::new(schedule.limit())?,
        })
    }

    fn mu(&self, t: f64) -> Mu {
        // the schedule is bounded below by μ*/2 > 0
        Mu::from_positive(self.schedule.eval(t))
    }

    fn field(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        field_with_grad(self.spec, self.gamma, x, &self.spec.loss.gradient(x), self.mu(t))
    }

    /// RK4 + clamp, reusing the loss gradient at `x`. `None` on a non-finite
    /// update (checked before the clamp, which would hide NaNs).
    fn advance(&self, x: &DVector<f64>, grad: &DVector<f64>, t: f64, h: f64) -> Option<DVector<f64>> {
        let k1 = field_with_grad(self.spec, self.gamma, x, grad, self.mu(t));
        let mut next = rk4(|y, s| self.field(y, s), x, k1, t, h);
        if !next.iter().all(|v| v.is_finite()) {
            return None;
        }
        self.spec.bounds.project_flush(&mut next);
        Some(next)
    }
}

/// Advances one step of size `params.step`: RK4 on the nonautonomous field,
/// clamp onto the box, then refresh `μ` and the residual at `μ*/2`.
pub fn step(spec: &ProblemSpec, params: &DynamicsParams, state: &SolverState) -> Result<SolverState> {
    check_len("state vector", spec.dim(), state.x.len())?;
    let flow = Flow::new(spec, params)?;
    let grad = spec.loss.gradient(&state.x);
    let t = state.t + params.step;
    let x = flow.advance(&state.x, &grad, state.t, params.step).ok_or_else(|| Error::Divergence {
        t,
        last_x: state.x.clone(),
    })?;
    let residual = residual_with_grad(spec, &x, &spec.loss.gradient(&x), flow.limit);
    Ok(SolverState {
        t,
        mu: flow.schedule.eval(t),
        x,
        residual,
    })
}

/// Largest step for which RK4 stays stable on the loss part of the field,
/// `2.5/(γ L)` with `L` the gradient Lipschitz constant (the real-axis
/// stability limit of RK4 is about 2.785). `None` when `L` is unknown.
///
/// The penalty term is ignored: it is stiff only inside the narrow band
/// `[μ/3, μ]`, which the clamp handles.
pub fn rk4_stable_step(spec: &ProblemSpec, gamma: f64) -> Option<f64> {
    let l = spec.gradient_lipschitz()?;
    (l > 0.0).then(|| 2.5 / (gamma * l))
}

/// Computable stand-in for the merit constant: `Σᵢ sup |∂θ/∂μ|` over the box at `μ*/2`.
pub fn merit_rho(spec: &ProblemSpec, mu_star: f64) -> Result<f64> {
    let mu = Mu::new(0.5 * mu_star)?;
    Ok(spec.bounds.upper().iter().map(|&u| grad_mu_sup(u, mu)).sum())
}

/// Entries at or above `tol` (the zero-rounding rule for supports).
pub fn support_of(x: &DVector<f64>, tol: f64) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Residual at `μ*/2` over coordinates at or above the lower-bound level `μ*/6`.
/// Coordinates below that level sit in the collapsing regime: their projected
/// target is exactly zero and they decay like `e^{−γt}`.
fn settle_residual(spec: &ProblemSpec, x: &DVector<f64>, grad: &DVector<f64>, mu_star: f64) -> f64 {
    let target = projected_target(spec, x, grad, Mu::from_positive(0.5 * mu_star));
    x.iter()
        .zip(target.iter())
        .filter(|(v, _)| **v >= mu_star / 6.0)
        .fold(0.0, |m, (v, p)| m.max((v - p).abs()))
}

pub fn solve(spec: &ProblemSpec, params: &DynamicsParams, x0: &DVector<f64>) -> Result<SolveReport> {
    solve_with(spec, params, x0, &SolveOptions::default())
}

/// Integrates until both the residual at `μ*/2` and the residual at the
/// current `μ(t)` drop below `residual_tol`, or the horizon is reached.
///
/// The certificate is `MaxHorizon` when the horizon stops the run while some
/// coordinate at or above `μ*/6` is still farther than `mu_star/12` from its
/// projected target; otherwise the endpoint is passed to
/// [`certify_local_min`].
pub fn solve_with(
    spec: &ProblemSpec,
    params: &DynamicsParams,
    x0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    check_len("initial point", spec.dim(), x0.len())?;
    params.validate(spec)?;
    let flow = Flow::new(spec, params)?;
    let mut x = x0.clone();
    if !spec.bounds.contains(&x) {
        warn!("initial point lies outside the box; projecting it");
        spec.bounds.project_in_place(&mut x);
    }

    let h = params.step;
    if let Some(limit) = rk4_stable_step(spec, params.gamma) {
        if h > limit {
            warn!("step {h} exceeds the RK4 stability limit {limit:.3e} for this loss; the trajectory may oscillate");
        }
    }
    let max_steps = (params.horizon / h - 1e-9).ceil().max(0.0) as usize;
    let rho = merit_rho(spec, params.mu_star)?;
    let lambda = spec.lambda;

    let smooth_objective = |x: &DVector<f64>, mu: Mu| spec.loss.value(x) + lambda * theta_sum(x, mu);

    let mut grad = spec.loss.gradient(&x);
    let mut residual = residual_with_grad(spec, &x, &grad, flow.limit);
    let mut samples = Vec::new();
    let mut merit_violations = 0usize;
    let mut k = 0usize;
    let mut t = 0.0;
    let mut mu = flow.mu(0.0);
    let mut obj = smooth_objective(&x, mu);
    let mut merit = obj + lambda * rho * mu.get();

    samples.push(TrajectorySample {
        t,
        objective_smooth: obj,
        residual,
        mu: mu.get(),
    });

    let converged = loop {
        // the flow must be at rest too: points that are stationary only at μ*/2
        // (e.g. interpolating points with every entry above μ*/2) keep moving
        if residual <= params.residual_tol
            && residual_with_grad(spec, &x, &grad, mu) <= params.residual_tol
        {
            break true;
        }
        if k >= max_steps {
            break false;
        }
        k += 1;
        let t_next = k as f64 * h;
        let Some(next) = flow.advance(&x, &grad, t, h) else {
            return Err(Error::Divergence { t: t_next, last_x: x });
        };
        x = next;
        t = t_next;
        grad = spec.loss.gradient(&x);
        residual = residual_with_grad(spec, &x, &grad, flow.limit);
        mu = flow.mu(t);
        obj = smooth_objective(&x, mu);
        let next_merit = obj + lambda * rho * mu.get();
        if next_merit > merit + MERIT_SLACK {
            merit_violations += 1;
        }
        merit = next_merit;
        if opts.sample_stride > 0 && k % opts.sample_stride == 0 {
            samples.push(TrajectorySample {
                t,
                objective_smooth: obj,
                residual,
                mu: mu.get(),
            });
        }
    };

    if samples.last().map_or(true, |s| s.t != t) {
        samples.push(TrajectorySample {
            t,
            objective_smooth: obj,
            residual,
            mu: mu.get(),
        });
    }
    if merit_violations > 0 {
        warn!("merit increased on {merit_violations} of {k} steps (discretization)");
    }

    let settled = converged || settle_residual(spec, &x, &grad, params.mu_star) <= params.num_zero_tol();
    let certificate = if settled {
        certify_local_min(spec, &x, params.mu_star, params.residual_tol)
    } else {
        Certificate::MaxHorizon
    };
    debug!("solve finished: t = {t}, steps = {k}, residual = {residual:e}, {certificate:?}");

    let support = support_of(&x, params.num_zero_tol());
    let objective_true = spec.loss.value(&x) + lambda * support.len() as f64;
    Ok(SolveReport {
        objective_smooth: smooth_objective(&x, flow.limit),
        objective_true,
        support,
        final_x: x,
        final_t: t,
        final_residual: residual,
        iterations: k,
        trajectory_samples: samples,
        certificate,
        merit_violations,
        corrected: false,
    })
}

/// Writes samples as CSV with columns `t,objective_smooth,residual,mu`.
pub fn write_trajectory_csv<W: std::io::Write>(samples: &[TrajectorySample], mut out: W) -> Result<()> {
    writeln!(out, "t,objective_smooth,residual,mu")?;
    for s in samples {
        writeln!(out, "{},{},{},{}", s.t, s.objective_smooth, s.residual, s.mu)?;
    }
    Ok(())
}
