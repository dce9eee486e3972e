//! Python bindings for the `l0flow` solver.

use l0flow::bench::{self, ExperimentConfig, ExperimentKind, ParamOverrides, Scale, StartPoint};
use l0flow::problem::{Bound as Extent, LoadedProblem, ProblemFile};
use l0flow::{
    certify_local_min, correct, halves, recombine, solve_and_correct, solve_and_correct_split, Certificate,
    DynamicsParams, Error, Mu, ScheduleKind, SolveOptions,
};
use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn certificate_name(c: Certificate) -> &'static str {
    match c {
        Certificate::CertifiedLocalMin => "certified_local_min",
        Certificate::NeedsCorrection => "needs_correction",
        Certificate::MaxHorizon => "max_horizon",
    }
}

fn extent(v: &Bound<'_, PyAny>, field: &str) -> PyResult<Extent> {
    if let Ok(x) = v.extract::<f64>() {
        return Ok(Extent::Scalar(x));
    }
    v.extract::<Vec<f64>>()
        .map(Extent::Vector)
        .map_err(|_| PyValueError::new_err(format!("{field} must be a float or a sequence of floats")))
}

/// `min ‖Ax − b‖² + λ‖x‖₀` over `[−lower, upper]` (or `[0, upper]` without `lower`).
#[pyclass(name = "Problem", module = "l0flow_py", frozen)]
struct PyProblem {
    inner: LoadedProblem,
}

impl PyProblem {
    fn params(&self, params: Option<&PyParams>) -> PyResult<DynamicsParams> {
        let spec = self.inner.solver_spec();
        let p = params.map_or_else(|| DynamicsParams::for_problem(spec), |p| p.inner);
        p.validate(spec).map_err(py_err)?;
        Ok(p)
    }

    fn vector(&self, x: Vec<f64>, what: &str) -> PyResult<DVector<f64>> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "{what}: expected {} entries, got {}",
                self.inner.dim(),
                x.len()
            )));
        }
        Ok(DVector::from_vec(x))
    }

    /// Original coordinates to solver coordinates.
    fn to_solver(&self, x: DVector<f64>) -> PyResult<DVector<f64>> {
        match &self.inner {
            LoadedProblem::OneSided(_) => Ok(x),
            LoadedProblem::TwoSided { original, .. } => original.lift(&x).map_err(py_err),
        }
    }

    fn to_original(&self, x: &DVector<f64>) -> PyResult<Vec<f64>> {
        match &self.inner {
            LoadedProblem::OneSided(_) => Ok(x.iter().copied().collect()),
            LoadedProblem::TwoSided { .. } => {
                let (p, m) = halves(x).map_err(py_err)?;
                Ok(recombine(&p, &m).map_err(py_err)?.iter().copied().collect())
            }
        }
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (a, b, lam, upper, lower = None))]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        lam: f64,
        upper: &Bound<'_, PyAny>,
        lower: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let file = ProblemFile {
            a,
            b,
            lambda: lam,
            upper: extent(upper, "upper")?,
            lower: lower.map(|l| extent(l, "lower")).transpose()?,
            x0: None,
        };
        Ok(Self {
            inner: file.into_problem().map_err(py_err)?,
        })
    }

    /// Parses the JSON problem-file format used by the command line tool.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file = ProblemFile::from_json(text).map_err(py_err)?;
        Ok(Self {
            inner: file.into_problem().map_err(py_err)?,
        })
    }

    /// The 3x2 example with known minimizer `(0, 23/38)`.
    #[staticmethod]
    fn test_example() -> Self {
        Self {
            inner: LoadedProblem::OneSided(bench::test_example_spec()),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn two_sided(&self) -> bool {
        matches!(self.inner, LoadedProblem::TwoSided { .. })
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.solver_spec().lambda
    }

    /// Bound on `‖∇f‖∞` over the box used to pick `mu_star`.
    #[getter]
    fn grad_bound(&self) -> f64 {
        self.inner.solver_spec().grad_bound
    }

    fn default_params(&self) -> PyParams {
        PyParams {
            inner: DynamicsParams::for_problem(self.inner.solver_spec()),
        }
    }

    /// `f(x) + λ‖x‖₀` in original coordinates.
    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = self.vector(x, "x")?;
        Ok(match &self.inner {
            LoadedProblem::OneSided(s) => s.objective_true(&x),
            LoadedProblem::TwoSided { original, .. } => original.objective_true(&x),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(dim={}, lam={}, two_sided={})",
            self.inner.dim(),
            self.lam(),
            self.two_sided()
        )
    }
}

/// Dynamics parameters; start from `Problem.default_params()`.
#[pyclass(name = "Params", module = "l0flow_py")]
struct PyParams {
    inner: DynamicsParams,
}

macro_rules! param_fields {
    ($($name:ident, $set:ident);*) => {
        #[pymethods]
        impl PyParams {
            $(
                #[getter]
                fn $name(&self) -> f64 {
                    self.inner.$name
                }

                #[setter]
                fn $set(&mut self, v: f64) {
                    self.inner.$name = v;
                }
            )*

            /// `"power_law"` or `"exponential"`.
            #[getter]
            fn schedule(&self) -> &'static str {
                match self.inner.schedule {
                    ScheduleKind::PowerLaw => "power_law",
                    ScheduleKind::Exponential => "exponential",
                }
            }

            #[setter]
            fn set_schedule(&mut self, v: &str) -> PyResult<()> {
                self.inner.schedule = match v {
                    "power_law" => ScheduleKind::PowerLaw,
                    "exponential" => ScheduleKind::Exponential,
                    _ => return Err(PyValueError::new_err(format!("unknown schedule {v:?}"))),
                };
                Ok(())
            }

            fn __repr__(&self) -> String {
                format!("Params({:?})", self.inner)
            }
        }
    };
}

param_fields!(
    gamma, set_gamma;
    alpha0, set_alpha0;
    beta, set_beta;
    mu_star, set_mu_star;
    step, set_step;
    horizon, set_horizon;
    residual_tol, set_residual_tol
);

#[pyclass(name = "SolveResult", module = "l0flow_py", get_all, frozen)]
struct PySolveResult {
    /// Final point in original coordinates.
    x: Vec<f64>,
    certificate: &'static str,
    support: Vec<usize>,
    objective: f64,
    objective_smooth: f64,
    final_t: f64,
    final_residual: f64,
    iterations: usize,
    corrected: bool,
    merit_violations: usize,
    /// `(t, objective_smooth, residual, mu)` rows.
    trajectory: Vec<(f64, f64, f64, f64)>,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(certificate={:?}, x={:?}, objective={})",
            self.certificate, self.x, self.objective
        )
    }
}

/// Runs the flow from `x0` (default: all ones in solver coordinates) and
/// corrects the endpoint when needed.
#[pyfunction]
#[pyo3(signature = (problem, x0 = None, params = None, trajectory_stride = 0))]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    x0: Option<Vec<f64>>,
    params: Option<&PyParams>,
    trajectory_stride: usize,
) -> PyResult<PySolveResult> {
    let p = problem.params(params)?;
    let spec = problem.inner.solver_spec();
    let x0 = match x0 {
        Some(x) => problem.to_solver(problem.vector(x, "x0")?)?,
        None => bench::start_point(spec, StartPoint::Ones, 0),
    };
    let opts = SolveOptions {
        sample_stride: trajectory_stride,
    };
    let r = py
        .detach(|| match &problem.inner {
            LoadedProblem::OneSided(s) => solve_and_correct(s, &p, &x0, &opts),
            LoadedProblem::TwoSided { original, split } => solve_and_correct_split(original, split, &p, &x0, &opts),
        })
        .map_err(py_err)?;
    let x = problem.to_original(&r.final_x)?;
    let support = x
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= p.num_zero_tol())
        .map(|(i, _)| i)
        .collect();
    Ok(PySolveResult {
        x,
        certificate: certificate_name(r.certificate),
        support,
        objective: r.objective_true,
        objective_smooth: r.objective_smooth,
        final_t: r.final_t,
        final_residual: r.final_residual,
        iterations: r.iterations,
        corrected: r.corrected,
        merit_violations: r.merit_violations,
        trajectory: r
            .trajectory_samples
            .iter()
            .map(|s| (s.t, s.objective_smooth, s.residual, s.mu))
            .collect(),
    })
}

/// Threshold-and-refit correction of `x`; returns the corrected point.
#[pyfunction]
#[pyo3(signature = (problem, x, params = None))]
fn correct_point(problem: &PyProblem, x: Vec<f64>, params: Option<&PyParams>) -> PyResult<Vec<f64>> {
    let p = problem.params(params)?;
    let x = problem.to_solver(problem.vector(x, "x")?)?;
    let c = correct(problem.inner.solver_spec(), &p, &x).map_err(py_err)?;
    problem.to_original(&c.x)
}

/// Sufficient local-minimality test; returns the certificate name.
#[pyfunction]
#[pyo3(signature = (problem, x, params = None))]
fn certify(problem: &PyProblem, x: Vec<f64>, params: Option<&PyParams>) -> PyResult<&'static str> {
    let p = problem.params(params)?;
    let x = problem.to_solver(problem.vector(x, "x")?)?;
    Ok(certificate_name(certify_local_min(
        problem.inner.solver_spec(),
        &x,
        p.mu_star,
        p.residual_tol,
    )))
}

/// `(near_zero, transition, nonzero)` index lists of a point in `[0, upper]`.
#[pyfunction]
fn partition(x: Vec<f64>, mu_star: f64, upper: Vec<f64>) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let bounds = l0flow::BoxSet::one_sided(DVector::from_vec(upper)).map_err(py_err)?;
    let p = l0flow::partition(&DVector::from_vec(x), mu_star, &bounds).map_err(py_err)?;
    Ok((p.near_zero, p.transition, p.nonzero))
}

/// Smoothed indicator `θ(s, μ)` and its partial derivatives `(θ, ∂θ/∂s, ∂θ/∂μ)`.
#[pyfunction]
fn theta(s: f64, mu: f64) -> PyResult<(f64, f64, f64)> {
    let m = Mu::new(mu).map_err(py_err)?;
    Ok((l0flow::theta(s, m), l0flow::theta_grad_s(s, m), l0flow::theta_grad_mu(s, m)))
}

/// Runs a bundled experiment and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (kind, seeds = None, scale = "desk", n = None, m = None, sparsity = None, data = None, step = None, horizon = None))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    kind: &str,
    seeds: Option<u64>,
    scale: &str,
    n: Option<usize>,
    m: Option<usize>,
    sparsity: Option<usize>,
    data: Option<std::path::PathBuf>,
    step: Option<f64>,
    horizon: Option<f64>,
) -> PyResult<String> {
    let kind: ExperimentKind = kind.parse().map_err(py_err)?;
    let scale = match scale {
        "desk" => Scale::Desk,
        "paper" => Scale::Paper,
        _ => return Err(PyValueError::new_err(format!("unknown scale {scale:?}"))),
    };
    let mut cfg = ExperimentConfig::defaults(kind, scale);
    if let Some(k) = seeds {
        cfg.seeds = (0..k).collect();
    }
    cfg.n = n.unwrap_or(cfg.n);
    cfg.m = m.unwrap_or(cfg.m);
    cfg.sparsity = sparsity.unwrap_or(cfg.sparsity);
    if data.is_some() {
        cfg.data_path = data;
    }
    cfg.overrides = ParamOverrides {
        step,
        horizon,
        ..Default::default()
    };
    let report = py.detach(|| bench::run_experiment(&cfg)).map_err(py_err)?;
    report.to_json().map_err(py_err)
}

#[pymodule]
fn l0flow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(correct_point, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
