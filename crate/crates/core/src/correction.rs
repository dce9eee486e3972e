//! Support partition, hard-threshold update point, the restricted correction
//! flow and local-minimizer certification.
//!
//! For a point `x` and level `μ*` the coordinates split into
//!
//! * near-zero:  `x_i ∈ [0, μ*/6)`
//! * transition: `x_i ∈ [μ*/6, μ*/2)`
//! * nonzero:    `x_i ∈ [μ*/2, upper_i]`
//!
//! An endpoint with an empty transition set and exact zeros on the near-zero
//! set is a local minimizer of `f + λ‖·‖₀` as soon as it minimizes `f` over
//! the face that pins its zeros. Otherwise the update point (entries below
//! `μ*/2` zeroed) is handed to the correction flow, whose limit minimizes `f`
//! over that face.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4, solve_with, support_of, Certificate, SolveOptions, SolveReport};
use crate::error::{check_len, Error, Result};
use crate::l0_norm;
use crate::model::{BoxSet, DynamicsParams, ProblemSpec, QuadraticLoss};

/// Index sets of a point relative to `μ*`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupportPartition {
    /// `[0, μ*/6)`
    pub near_zero: Vec<usize>,
    /// `[μ*/6, μ*/2)`
    pub transition: Vec<usize>,
    /// `[μ*/2, upper]`
    pub nonzero: Vec<usize>,
}

impl SupportPartition {
    fn classify(x: &DVector<f64>, low: f64, high: f64) -> Self {
        let mut p = Self::default();
        for (i, &v) in x.iter().enumerate() {
            if v < low {
                p.near_zero.push(i);
            } else if v < high {
                p.transition.push(i);
            } else {
                p.nonzero.push(i);
            }
        }
        p
    }

    /// Classification with the `μ*/12` tolerance band: entries in
    /// `[μ*/6 − μ*/12, μ*/2 + μ*/12)` count as transition.
    pub fn banded(x: &DVector<f64>, mu_star: f64) -> Self {
        let tol = mu_star / 12.0;
        Self::classify(x, mu_star / 6.0 - tol, mu_star / 2.0 + tol)
    }
}

/// Exact half-open classification; boundary values `μ*/6` and `μ*/2` fall
/// into the transition and nonzero sets respectively.
pub fn partition(x: &DVector<f64>, mu_star: f64, bounds: &BoxSet) -> Result<SupportPartition> {
    check_len("point", bounds.dim(), x.len())?;
    if !bounds.is_one_sided() {
        return Err(Error::Domain("partition needs a box of the form [0, upper]".into()));
    }
    if !bounds.contains(x) {
        return Err(Error::Domain("partition point lies outside the box".into()));
    }
    Ok(SupportPartition::classify(x, mu_star / 6.0, mu_star / 2.0))
}

/// Zeroes every entry with `|x_i| < μ*/2`.
pub fn mu_update_point(x: &DVector<f64>, mu_star: f64) -> DVector<f64> {
    x.map(|v| if v.abs() >= 0.5 * mu_star { v } else { 0.0 })
}

/// Coordinates pinned to zero during the correction flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenSet {
    pinned: Vec<bool>,
}

impl FrozenSet {
    /// Pins the zero entries of `x` (for an update point: the near-zero and
    /// transition sets of the original point).
    pub fn zeros_of(x: &DVector<f64>) -> Self {
        Self {
            pinned: x.iter().map(|&v| v == 0.0).collect(),
        }
    }

    pub fn from_mask(pinned: Vec<bool>) -> Self {
        Self { pinned }
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned[i]
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.pinned.len()).filter(|&i| !self.pinned[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.pinned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pinned.is_empty()
    }

    /// The face `{x ∈ box : x_i = 0 for pinned i}`.
    fn restrict(&self, bounds: &BoxSet) -> Result<BoxSet> {
        let upper = DVector::from_fn(bounds.dim(), |i, _| {
            if self.pinned[i] {
                0.0
            } else {
                bounds.upper()[i]
            }
        });
        BoxSet::new(bounds.lower().clone(), upper)
    }
}

const SHORTCUT_TOL: f64 = 1e-12;
const ACTIVE_SET_MAX_ITERS: usize = 500;
const PG_MAX_ITERS: usize = 200_000;
const FLOW_MAX_STEPS: usize = 5_000_000;

/// Minimizes `f` over the face of the box given by `frozen`, starting from
/// `x_start`.
///
/// For quadratic losses this runs an exact box least-squares solve on the
/// free coordinates only; the correction flow has that minimizer as its limit.
/// Other losses integrate the flow `ẋ = γ₁(−x + P[x − ∇f(x)])` with RK4
/// (see [`correction_flow`]).
pub fn correction_solve(
    spec: &ProblemSpec,
    frozen: &FrozenSet,
    x_start: &DVector<f64>,
    gamma1: f64,
    params: &DynamicsParams,
) -> Result<DVector<f64>> {
    check_len("correction start", spec.dim(), x_start.len())?;
    check_len("frozen set", spec.dim(), frozen.len())?;
    match spec.loss.as_quadratic() {
        Some(q) => Ok(restricted_least_squares(q, &spec.bounds, frozen, x_start)),
        None => correction_flow(spec, frozen, x_start, gamma1, params),
    }
}

/// RK4 integration of the correction flow on the face, stopped once the
/// unit-step projected-gradient residual is below `params.residual_tol`
/// (or after a fixed step budget).
pub fn correction_flow(
    spec: &ProblemSpec,
    frozen: &FrozenSet,
    x_start: &DVector<f64>,
    gamma1: f64,
    params: &DynamicsParams,
) -> Result<DVector<f64>> {
    if !(gamma1 > 0.0) {
        return Err(Error::Config(format!("gamma1 must be positive, got {gamma1}")));
    }
    let face = frozen.restrict(&spec.bounds)?;
    let loss = &spec.loss;
    let field = |x: &DVector<f64>| (face.project(&(x - loss.gradient(x))) - x) * gamma1;
    let mut x = face.project(x_start);
    let h = params.step * params.gamma / gamma1;
    let tol = params.residual_tol;
    for k in 0..FLOW_MAX_STEPS {
        let k1 = field(&x);
        if k1.amax() / gamma1 <= tol {
            return Ok(x);
        }
        let mut next = rk4(|y, _| field(y), &x, k1, 0.0, h);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                t: k as f64 * h,
                last_x: x,
            });
        }
        face.project_flush(&mut next);
        x = next;
    }
    warn!("correction flow hit its step budget before reaching tolerance {tol:e}");
    Ok(x)
}

/// Box-constrained least squares on the free coordinates.
fn restricted_least_squares(
    q: &QuadraticLoss,
    bounds: &BoxSet,
    frozen: &FrozenSet,
    x_start: &DVector<f64>,
) -> DVector<f64> {
    let free = frozen.free_indices();
    let n = bounds.dim();
    let mut out = DVector::zeros(n);
    if free.is_empty() {
        return out;
    }
    let a = q.a().select_columns(free.iter());
    let lo = DVector::from_iterator(free.len(), free.iter().map(|&i| bounds.lower()[i]));
    let hi = DVector::from_iterator(free.len(), free.iter().map(|&i| bounds.upper()[i]));
    let x0 = DVector::from_iterator(free.len(), free.iter().map(|&i| x_start[i]));
    let z = box_least_squares(&a, q.b(), &lo, &hi, x0);
    for (k, &i) in free.iter().enumerate() {
        out[i] = z[k];
    }
    out
}

/// `argmin ‖Az − b‖²` over `lo ≤ z ≤ hi`.
///
/// Primal active-set iteration: a minimum-norm least-squares step (SVD) on
/// the free coordinates, cut short at the first bound it crosses, which is
/// then held; after a full step the held coordinate whose multiplier has the
/// wrong sign by the largest margin is released. Rank-deficient free sets
/// are fine since the residual, and so the multipliers, are unique. Should
/// the active set cycle, projected gradient takes over.
pub(crate) fn box_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    z0: DVector<f64>,
) -> DVector<f64> {
    let n = z0.len();
    let grad = |z: &DVector<f64>| a.tr_mul(&(a * z - b)) * 2.0;
    let kkt_tol = SHORTCUT_TOL.max(1e-14 * grad(&DVector::zeros(n)).amax());

    let mut z = z0;
    for i in 0..n {
        z[i] = z[i].clamp(lo[i], hi[i]);
    }
    let mut held: Vec<bool> = (0..n).map(|i| lo[i] == hi[i]).collect();

    for _ in 0..ACTIVE_SET_MAX_ITERS.max(10 * n) {
        let free: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
        if !free.is_empty() {
            let a_free = a.select_columns(free.iter());
            let r = b - a * &z;
            let svd = a_free.svd(true, true);
            let cutoff = 1e-12 * svd.singular_values.amax();
            let Ok(d) = svd.solve(&r, cutoff) else { break };
            let mut alpha = 1.0;
            for (k, &i) in free.iter().enumerate() {
                let room = if d[k] < 0.0 {
                    (lo[i] - z[i]) / d[k]
                } else if d[k] > 0.0 {
                    (hi[i] - z[i]) / d[k]
                } else {
                    f64::INFINITY
                };
                alpha = f64::min(alpha, room.max(0.0));
            }
            for (k, &i) in free.iter().enumerate() {
                z[i] = (z[i] + alpha * d[k]).clamp(lo[i], hi[i]);
            }
            if alpha < 1.0 {
                for (k, &i) in free.iter().enumerate() {
                    let to_lo = d[k] < 0.0 && (z[i] - lo[i]) <= 1e-14 * (1.0 + lo[i].abs());
                    let to_hi = d[k] > 0.0 && (hi[i] - z[i]) <= 1e-14 * (1.0 + hi[i].abs());
                    if to_lo || to_hi {
                        z[i] = if to_lo { lo[i] } else { hi[i] };
                        held[i] = true;
                    }
                }
                continue;
            }
        }
        let g = grad(&z);
        let release = (0..n)
            .filter(|&i| held[i] && lo[i] < hi[i])
            .map(|i| {
                let wrong_sign = if z[i] <= lo[i] { -g[i] } else { g[i] };
                (i, wrong_sign)
            })
            .filter(|&(_, v)| v > kkt_tol)
            .max_by(|x, y| x.1.total_cmp(&y.1));
        match release {
            Some((i, _)) => held[i] = false,
            None => return z,
        }
    }
    warn!("active-set least squares did not settle; finishing with projected gradient");
    projected_gradient(a, b, lo, hi, z)
}

fn projected_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    mut z: DVector<f64>,
) -> DVector<f64> {
    let lipschitz = (a.tr_mul(a) * 2.0).symmetric_eigenvalues().amax().max(f64::MIN_POSITIVE);
    for _ in 0..PG_MAX_ITERS {
        let g = a.tr_mul(&(a * &z - b)) * 2.0;
        let mut res = 0.0f64;
        for i in 0..z.len() {
            let next = (z[i] - g[i] / lipschitz).clamp(lo[i], hi[i]);
            res = res.max((z[i] - (z[i] - g[i]).clamp(lo[i], hi[i])).abs());
            z[i] = next;
        }
        if res <= SHORTCUT_TOL {
            break;
        }
    }
    z
}

/// `CertifiedLocalMin` iff, under the `μ*/12` tolerance band, the transition
/// set is empty, every near-zero entry is exactly zero, and the nonzero
/// coordinates satisfy `‖x_K − P[x_K − ∇f(x)_K]‖_∞ ≤ residual_tol`.
pub fn certify_local_min(spec: &ProblemSpec, x: &DVector<f64>, mu_star: f64, residual_tol: f64) -> Certificate {
    if x.len() != spec.dim() || !spec.bounds.contains(x) {
        return Certificate::NeedsCorrection;
    }
    let part = SupportPartition::banded(x, mu_star);
    if !part.transition.is_empty() || part.near_zero.iter().any(|&i| x[i] != 0.0) {
        return Certificate::NeedsCorrection;
    }
    if part.nonzero.is_empty() {
        return Certificate::CertifiedLocalMin;
    }
    let g = spec.loss.gradient(x);
    let lo = spec.bounds.lower();
    let hi = spec.bounds.upper();
    let restricted = part
        .nonzero
        .iter()
        .map(|&i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max);
    if restricted <= residual_tol {
        Certificate::CertifiedLocalMin
    } else {
        Certificate::NeedsCorrection
    }
}

/// Result of [`correct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub x: DVector<f64>,
    pub update_point: DVector<f64>,
    /// Whether the handed-in point had a nonempty transition set.
    pub had_transition: bool,
    pub l0_before: usize,
    pub l0_after: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Number of threshold-and-solve rounds until certification.
    pub rounds: usize,
}

const OBJECTIVE_SLACK: f64 = 1e-12;

/// Threshold at `μ*/2`, then minimize `f` over the face pinning the new
/// zeros; repeated (support shrinks every round) until the point certifies.
///
/// Checked on every round:
/// * the update point never raises `f + λ‖·‖₀`;
/// * when the input had a nonempty transition set, the result has strictly
///   fewer nonzeros and a strictly smaller `f + λ‖·‖₀`.
///
/// A failed check is a [`Error::Consistency`], which points at a
/// misconfigured `mu_star`.
pub fn correct(spec: &ProblemSpec, params: &DynamicsParams, x_bar: &DVector<f64>) -> Result<Correction> {
    check_len("point to correct", spec.dim(), x_bar.len())?;
    let mu_star = params.mu_star;
    let scale = |v: f64| OBJECTIVE_SLACK * (1.0 + v.abs());

    let mut current = spec.bounds.project(x_bar);
    let l0_before = l0_norm(&current);
    let objective_before = spec.objective_true(&current);
    let had_transition = !partition(&current, mu_star, &spec.bounds)?.transition.is_empty();
    let mut first_update = None;

    for round in 1..=spec.dim() + 1 {
        let part = partition(&current, mu_star, &spec.bounds)?;
        let transition = !part.transition.is_empty();
        let update = mu_update_point(&current, mu_star);
        let obj_cur = spec.objective_true(&current);
        let obj_upd = spec.objective_true(&update);
        if obj_upd > obj_cur + scale(obj_cur) {
            return Err(Error::Consistency(format!(
                "update point raised the objective from {obj_cur} to {obj_upd}"
            )));
        }
        let frozen = FrozenSet::zeros_of(&update);
        let next = correction_solve(spec, &frozen, &update, params.gamma, params)?;
        if transition {
            let (l0_cur, l0_next) = (l0_norm(&current), l0_norm(&next));
            let obj_next = spec.objective_true(&next);
            if l0_next >= l0_cur || obj_cur - obj_next <= scale(obj_cur) {
                return Err(Error::Consistency(format!(
                    "correction did not decrease the objective strictly: \
                     ‖x‖₀ {l0_cur} -> {l0_next}, objective {obj_cur} -> {obj_next}"
                )));
            }
        }
        first_update.get_or_insert_with(|| update.clone());
        debug!("correction round {round}: ‖x‖₀ = {}", l0_norm(&next));
        if certify_local_min(spec, &next, mu_star, params.residual_tol) == Certificate::CertifiedLocalMin {
            return Ok(Correction {
                l0_after: l0_norm(&next),
                objective_after: spec.objective_true(&next),
                x: next,
                update_point: first_update.unwrap_or(update),
                had_transition,
                l0_before,
                objective_before,
                rounds: round,
            });
        }
        current = next;
    }
    Err(Error::Consistency(
        "corrected point failed to certify after exhausting the support".into(),
    ))
}

/// Runs the projection dynamics and, when the endpoint needs it, the
/// correction phase. The returned report describes the final point.
pub fn solve_and_correct(
    spec: &ProblemSpec,
    params: &DynamicsParams,
    x0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let mut report = solve_with(spec, params, x0, opts)?;
    if report.certificate == Certificate::NeedsCorrection {
        let fixed = correct(spec, params, &report.final_x)?;
        apply_correction(spec, params, &mut report, fixed.x)?;
    }
    Ok(report)
}

pub(crate) fn apply_correction(
    spec: &ProblemSpec,
    params: &DynamicsParams,
    report: &mut SolveReport,
    x: DVector<f64>,
) -> Result<()> {
    let limit = 0.5 * params.mu_star;
    report.final_residual = crate::dynamics::stationarity_residual(spec, &x, limit)?;
    report.objective_smooth = spec.loss.value(&x)
        + spec.lambda * crate::smoothing::theta_sum(&x, crate::smoothing::Mu::new(limit)?);
    report.support = support_of(&x, params.num_zero_tol());
    report.objective_true = spec.loss.value(&x) + spec.lambda * report.support.len() as f64;
    report.certificate = certify_local_min(spec, &x, params.mu_star, params.residual_tol);
    report.final_x = x;
    report.corrected = true;
    Ok(())
}
