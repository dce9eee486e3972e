//! Experiment generators, the prostate loader, metrics and the seeded batch
//! runner.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::correct;
use crate::dynamics::{rk4_stable_step, solve_with, support_of, Certificate, SolveOptions, SolveReport};
use crate::error::{check_len, Error, Result};
use crate::model::{BoxSet, DynamicsParams, ProblemSpec, ScheduleKind};
use crate::splitting::{halves, recombine_clean, split, TwoSidedSpec};

/// Known minimizer of [`test_example_spec`]: `(0, 23/38)`.
pub const TEST_EXAMPLE_OPTIMUM: [f64; 2] = [0.0, 23.0 / 38.0];

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "L0FLOW_THREADS";

/// `A = [[1, 3], [3, 2], [1, 5]]`, `b = (2, 1, 3)`, `λ = 1`, box `[0, 5]²`.
pub fn test_example_spec() -> ProblemSpec {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 3.0, 3.0, 2.0, 1.0, 5.0]);
    let b = DVector::from_vec(vec![2.0, 1.0, 3.0]);
    ProblemSpec::quadratic(a, b, BoxSet::uniform(2, 5.0).expect("valid box"), 1.0).expect("valid test example")
}

/// `m × n` matrix with orthonormal rows: the transposed Q factor of an
/// `n × m` standard-normal draw.
pub fn sensing_matrix<R: Rng>(n: usize, m: usize, rng: &mut R) -> DMatrix<f64> {
    let k = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    k.qr().q().transpose()
}

fn check_sizes(n: usize, m: usize, sparsity: usize) -> Result<()> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!("need 0 < m < n, got m = {m}, n = {n}")));
    }
    if sparsity > n {
        return Err(Error::Config(format!("sparsity {sparsity} exceeds n = {n}")));
    }
    Ok(())
}

fn sparse_signal<R: Rng>(n: usize, sparsity: usize, rng: &mut R, mut value: impl FnMut(&mut R) -> f64) -> DVector<f64> {
    let mut s = DVector::zeros(n);
    let mut idx = sample(rng, n, sparsity).into_vec();
    idx.sort_unstable();
    for i in idx {
        let mut v = value(rng);
        // a zero draw would break the sparsity count
        while v == 0.0 {
            v = value(rng);
        }
        s[i] = v;
    }
    s
}

/// Noiseless compressed sensing over `[−5, 5]ⁿ` with `λ = 0.1`.
pub fn gen_compressed_sensing(n: usize, m: usize, sparsity: usize, seed: u64) -> Result<(TwoSidedSpec, DVector<f64>)> {
    gen_compressed_sensing_with(n, m, sparsity, seed, 5.0, 0.1)
}

pub fn gen_compressed_sensing_with(
    n: usize,
    m: usize,
    sparsity: usize,
    seed: u64,
    bound: f64,
    lambda: f64,
) -> Result<(TwoSidedSpec, DVector<f64>)> {
    check_sizes(n, m, sparsity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sensing_matrix(n, m, &mut rng);
    let s = sparse_signal(n, sparsity, &mut rng, |r| StandardNormal.sample(r));
    let b = &a * &s;
    let spec = TwoSidedSpec::quadratic(a, b, DVector::from_element(n, bound), DVector::from_element(n, bound), lambda)?;
    Ok((spec, s))
}

/// Variable selection over `[0, 10]ⁿ` with `λ = 1`: signal values uniform on
/// `[1, 10]`, `b = As + noise_scale·ε`.
pub fn gen_variable_selection(
    n: usize,
    m: usize,
    sparsity: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<(ProblemSpec, DVector<f64>)> {
    gen_variable_selection_with(n, m, sparsity, noise_scale, seed, 10.0, 1.0)
}

pub fn gen_variable_selection_with(
    n: usize,
    m: usize,
    sparsity: usize,
    noise_scale: f64,
    seed: u64,
    bound: f64,
    lambda: f64,
) -> Result<(ProblemSpec, DVector<f64>)> {
    check_sizes(n, m, sparsity)?;
    if !(noise_scale >= 0.0) {
        return Err(Error::Config(format!("noise scale must be nonnegative, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sensing_matrix(n, m, &mut rng);
    let amp = Uniform::new_inclusive(1.0, 10.0).map_err(|e| Error::Config(e.to_string()))?;
    let s = sparse_signal(n, sparsity, &mut rng, |r| amp.sample(r));
    let noise = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    let b = &a * &s + noise * noise_scale;
    let spec = ProblemSpec::quadratic(a, b, BoxSet::uniform(n, bound)?, lambda)?;
    Ok((spec, s))
}

/// `‖x − s‖² / n`.
pub fn mse(x: &DVector<f64>, s: &DVector<f64>) -> Result<f64> {
    check_len("mse reference", x.len(), s.len())?;
    if x.is_empty() {
        return Err(Error::Config("mse of empty vectors".into()));
    }
    Ok((x - s).norm_squared() / x.len() as f64)
}

pub const PROSTATE_FEATURES: [&str; 8] = ["lcavol", "lweight", "age", "lbph", "svi", "lcp", "gleason", "pgg45"];

/// Standardized prostate data. Predictors are scaled with training-set
/// mean and sample standard deviation; responses are centered on the
/// training mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ProstateData {
    pub train_a: DMatrix<f64>,
    pub train_b: DVector<f64>,
    pub test_a: DMatrix<f64>,
    pub test_b: DVector<f64>,
    pub feature_names: Vec<String>,
    pub response_mean: f64,
}

impl ProstateData {
    /// Mean squared test error of coefficients `x` (centered responses).
    pub fn test_error(&self, x: &DVector<f64>) -> Result<f64> {
        check_len("coefficients", self.train_a.ncols(), x.len())?;
        Ok((&self.test_a * x - &self.test_b).norm_squared() / self.test_b.len() as f64)
    }
}

pub fn load_prostate(path: &Path) -> Result<ProstateData> {
    parse_prostate(&std::fs::read_to_string(path)?)
}

/// Parses the prostate table: a header row naming at least the eight
/// predictors, `lpsa` and `train` (`T`/`F`). Comma- or tab/space-separated;
/// other columns (such as a row index) are ignored.
pub fn parse_prostate(text: &str) -> Result<ProstateData> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Data { row: 1, msg: "empty file".into() })?;
    let comma = header.contains(',');
    let fields = |line: &str| -> Vec<String> {
        if comma {
            line.split(',').map(|f| f.trim().trim_matches('"').to_string()).collect()
        } else {
            line.split_whitespace().map(|f| f.trim_matches('"').to_string()).collect()
        }
    };
    let names = fields(header);
    let column = |name: &str| {
        names
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data { row: 1, msg: format!("missing column \"{name}\"") })
    };
    let feature_cols = PROSTATE_FEATURES.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;
    let y_col = column("lpsa")?;
    let train_col = column("train")?;
    // whitespace-separated files usually have an unnamed index column
    let shift = usize::from(!comma && header.starts_with(char::is_whitespace));

    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let row = lineno + 1;
        let f = fields(line);
        if f.len() != names.len() + shift {
            return Err(Error::Data {
                row,
                msg: format!("expected {} fields, found {}", names.len() + shift, f.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            f[c + shift].parse::<f64>().map_err(|_| Error::Data {
                row,
                msg: format!("column \"{}\": cannot parse \"{}\"", names[c], f[c + shift]),
            })
        };
        let x = feature_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let y = num(y_col)?;
        let train = match f[train_col + shift].as_str() {
            "T" | "TRUE" | "true" | "1" => true,
            "F" | "FALSE" | "false" | "0" => false,
            other => {
                return Err(Error::Data {
                    row,
                    msg: format!("column \"train\": expected T or F, found \"{other}\""),
                })
            }
        };
        rows.push((x, y, train));
    }

    let (train, test): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.2);
    if train.len() < 2 {
        return Err(Error::Data { row: 0, msg: "fewer than two training rows".into() });
    }
    let p = PROSTATE_FEATURES.len();
    let nt = train.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| train.iter().map(|r| r.0[j]).sum::<f64>() / nt).collect();
    let sd: Vec<f64> = (0..p)
        .map(|j| (train.iter().map(|r| (r.0[j] - mean[j]).powi(2)).sum::<f64>() / (nt - 1.0)).sqrt())
        .collect();
    if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Data {
            row: 0,
            msg: format!("predictor \"{}\" is constant on the training set", PROSTATE_FEATURES[j]),
        });
    }
    let y_mean = train.iter().map(|r| r.1).sum::<f64>() / nt;
    let build = |set: &[(Vec<f64>, f64, bool)]| {
        (
            DMatrix::from_fn(set.len(), p, |i, j| (set[i].0[j] - mean[j]) / sd[j]),
            DVector::from_iterator(set.len(), set.iter().map(|r| r.1 - y_mean)),
        )
    };
    let (train_a, train_b) = build(&train);
    let (test_a, test_b) = build(&test);
    Ok(ProstateData {
        train_a,
        train_b,
        test_a,
        test_b,
        feature_names: PROSTATE_FEATURES.iter().map(|s| s.to_string()).collect(),
        response_mean: y_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TestExample,
    CompressedSensing,
    VariableSelection,
    Prostate,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test-example" | "test_example" => Ok(Self::TestExample),
            "cs" | "compressed-sensing" | "compressed_sensing" => Ok(Self::CompressedSensing),
            "vs" | "variable-selection" | "variable_selection" => Ok(Self::VariableSelection),
            "prostate" => Ok(Self::Prostate),
            _ => Err(Error::Config(format!(
                "unknown experiment \"{s}\" (expected test-example, cs, vs or prostate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

/// Starting point of the flow, in original (unsplit) coordinates for
/// `Ones` and in solver coordinates for `Random`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    /// `min(1, upper)` in every solver coordinate.
    Ones,
    /// Uniform on `[0, min(upper_i, scale)]`, seeded by the run seed.
    Random { scale: f64 },
}

/// Optional overrides of the per-experiment dynamics defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut DynamicsParams) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.gamma, self.gamma);
        set(&mut p.alpha0, self.alpha0);
        set(&mut p.beta, self.beta);
        set(&mut p.mu_star, self.mu_star);
        set(&mut p.step, self.step);
        set(&mut p.horizon, self.horizon);
        set(&mut p.residual_tol, self.residual_tol);
        if let Some(s) = self.schedule {
            p.schedule = s;
        }
    }
}

/// Schedule defaults of one experiment (`mu_star` comes from the instance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDefaults {
    pub gamma: f64,
    pub alpha0: f64,
    pub beta: f64,
    pub step: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub scale: Scale,
    pub n: usize,
    pub m: usize,
    pub sparsity: usize,
    pub seeds: Vec<u64>,
    /// When set, every run uses this instance and the run seed only drives
    /// the random start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    pub noise_scale: f64,
    pub lambda: f64,
    pub bound: f64,
    pub start: StartPoint,
    pub schedule: ScheduleDefaults,
    #[serde(default)]
    pub overrides: ParamOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
}

pub const DEFAULT_PROSTATE_PATH: &str = "data/prostate.csv";

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind, scale: Scale) -> Self {
        // The penalty drift that empties the off-support coordinates runs at
        // about λ·3/(2μ(t)) per unit time independently of n, so the desk
        // runs keep the full horizon.
        let sensing = ScheduleDefaults {
            gamma: 1.0,
            alpha0: 700.0,
            beta: 0.1,
            step: 0.25,
            horizon: 2500.0,
        };
        let base = Self {
            kind,
            scale,
            n: 2,
            m: 3,
            sparsity: 1,
            seeds: vec![0],
            instance_seed: None,
            noise_scale: 0.0,
            lambda: 1.0,
            bound: 5.0,
            start: StartPoint::Ones,
            schedule: sensing,
            overrides: ParamOverrides::default(),
            data_path: None,
        };
        match (kind, scale) {
            (ExperimentKind::TestExample, _) => Self {
                start: StartPoint::Random { scale: 5.0 },
                seeds: (0..6).collect(),
                schedule: ScheduleDefaults {
                    gamma: 1.0,
                    alpha0: 1.0,
                    beta: 1.0,
                    step: 0.01,
                    horizon: 10.0,
                },
                ..base
            },
            (ExperimentKind::CompressedSensing, s) => {
                let (n, m, sparsity) = if s == Scale::Desk { (256, 80, 8) } else { (1000, 200, 10) };
                Self {
                    n,
                    m,
                    sparsity,
                    lambda: 0.1,
                    bound: 5.0,
                    seeds: (0..10).collect(),
                    ..base
                }
            }
            (ExperimentKind::VariableSelection, s) => {
                let (n, m, sparsity) = if s == Scale::Desk { (384, 160, 16) } else { (1500, 600, 50) };
                Self {
                    n,
                    m,
                    sparsity,
                    noise_scale: 0.01,
                    lambda: 1.0,
                    bound: 10.0,
                    seeds: (0..10).collect(),
                    ..base
                }
            }
            (ExperimentKind::Prostate, _) => Self {
                n: 8,
                m: 67,
                sparsity: 3,
                lambda: 2.0,
                bound: 10.0,
                schedule: ScheduleDefaults {
                    gamma: 1.0,
                    alpha0: 20.0,
                    beta: 2.0,
                    step: 0.01,
                    horizon: 25.0,
                },
                data_path: Some(PathBuf::from(DEFAULT_PROSTATE_PATH)),
                ..base
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if matches!(self.kind, ExperimentKind::CompressedSensing | ExperimentKind::VariableSelection) {
            check_sizes(self.n, self.m, self.sparsity)?;
        }
        Ok(())
    }

    /// Dynamics parameters for a (solver-coordinate) problem. Unless the step
    /// is overridden, the default step is capped at the RK4 stability limit.
    pub fn params_for(&self, spec: &ProblemSpec) -> DynamicsParams {
        let mut p = DynamicsParams::for_problem(spec);
        let s = self.schedule;
        p.gamma = s.gamma;
        p.alpha0 = s.alpha0;
        p.beta = s.beta;
        p.step = s.step;
        p.horizon = s.horizon;
        self.overrides.apply(&mut p);
        if self.overrides.step.is_none() {
            if let Some(limit) = rk4_stable_step(spec, p.gamma) {
                p.step = p.step.min(limit);
            }
        }
        p
    }
}

/// A generated or loaded instance in solver coordinates.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: ProblemSpec,
    /// Reference signal in original coordinates (the known optimum for the
    /// test example); `None` for the prostate data.
    pub truth: Option<DVector<f64>>,
    /// Whether `spec` is a split two-sided problem.
    pub split: bool,
    pub prostate: Option<ProstateData>,
}

pub fn build_instance(config: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let seed = config.instance_seed.unwrap_or(seed);
    match config.kind {
        ExperimentKind::TestExample => Ok(Instance {
            spec: test_example_spec(),
            truth: Some(DVector::from_row_slice(&TEST_EXAMPLE_OPTIMUM)),
            split: false,
            prostate: None,
        }),
        ExperimentKind::CompressedSensing => {
            let (two, s) =
                gen_compressed_sensing_with(config.n, config.m, config.sparsity, seed, config.bound, config.lambda)?;
            Ok(Instance {
                spec: split(&two)?,
                truth: Some(s),
                split: true,
                prostate: None,
            })
        }
        ExperimentKind::VariableSelection => {
            let (spec, s) = gen_variable_selection_with(
                config.n,
                config.m,
                config.sparsity,
                config.noise_scale,
                seed,
                config.bound,
                config.lambda,
            )?;
            Ok(Instance {
                spec,
                truth: Some(s),
                split: false,
                prostate: None,
            })
        }
        ExperimentKind::Prostate => {
            let path = config.data_path.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_PROSTATE_PATH));
            let data = load_prostate(&path)?;
            let p = data.train_a.ncols();
            let bound = DVector::from_element(p, config.bound);
            let two = TwoSidedSpec::quadratic(
                data.train_a.clone(),
                data.train_b.clone(),
                bound.clone(),
                bound,
                config.lambda,
            )?;
            Ok(Instance {
                spec: split(&two)?,
                truth: None,
                split: true,
                prostate: Some(data),
            })
        }
    }
}

pub fn start_point(spec: &ProblemSpec, start: StartPoint, seed: u64) -> DVector<f64> {
    let upper = spec.bounds.upper();
    match start {
        StartPoint::Ones => upper.map(|u| u.min(1.0)),
        StartPoint::Random { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57a2);
            upper.map(|u| rng.random::<f64>() * u.min(scale))
        }
    }
}

/// Solver output after the correction phase.
#[derive(Debug, Clone)]
pub struct Finished {
    pub report: SolveReport,
    /// Certificate of the raw flow endpoint, before any correction.
    pub flow_certificate: Certificate,
}

/// Runs the flow and then the correction phase whenever the endpoint is not
/// certified, including endpoints cut off by the horizon (the experiment
/// protocol reads the flow output at a fixed time).
pub fn solve_and_finish(spec: &ProblemSpec, params: &DynamicsParams, x0: &DVector<f64>) -> Result<Finished> {
    let mut report = solve_with(spec, params, x0, &SolveOptions { sample_stride: 0 })?;
    let flow_certificate = report.certificate;
    if flow_certificate != Certificate::CertifiedLocalMin {
        let fixed = correct(spec, params, &report.final_x)?;
        let x = fixed.x;
        report.support = support_of(&x, params.num_zero_tol());
        report.objective_true = spec.objective_true(&x);
        report.certificate = crate::correction::certify_local_min(spec, &x, params.mu_star, params.residual_tol);
        report.final_residual = crate::dynamics::stationarity_residual(spec, &x, 0.5 * params.mu_star)?;
        report.final_x = x;
        report.corrected = true;
    }
    Ok(Finished {
        report,
        flow_certificate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// MSE against the reference signal; test prediction error for prostate.
    pub mse: Option<f64>,
    /// Support of the final point in original coordinates.
    pub support: Vec<usize>,
    pub support_recovered: Option<bool>,
    /// `f + λ‖·‖₀` of the final point (solver coordinates).
    pub objective: Option<f64>,
    pub certificate: Option<Certificate>,
    pub flow_certificate: Option<Certificate>,
    /// Final point in original coordinates.
    pub x: Option<Vec<f64>>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_mse: Option<f64>,
    pub max_mse: Option<f64>,
    pub min_mse: Option<f64>,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub min_ms: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let inst = build_instance(config, seed)?;
    let params = config.params_for(&inst.spec);
    let x0 = start_point(&inst.spec, config.start, seed);
    let done = solve_and_finish(&inst.spec, &params, &x0)?;
    let tol = params.num_zero_tol();
    let x = if inst.split {
        let (p, m) = halves(&done.report.final_x)?;
        let r = recombine_clean(&p, &m, tol)?;
        r.x_plus - r.x_minus
    } else {
        done.report.final_x.clone()
    };
    let support = support_of(&x, tol);
    let (mse_value, recovered) = match (&inst.truth, &inst.prostate) {
        (Some(s), _) => {
            let truth_support: Vec<usize> = (0..s.len()).filter(|&i| s[i] != 0.0).collect();
            (Some(mse(&x, s)?), Some(truth_support == support))
        }
        (None, Some(data)) => (Some(data.test_error(&x)?), None),
        (None, None) => (None, None),
    };
    Ok(SeedResult {
        seed,
        mse: mse_value,
        support,
        support_recovered: recovered,
        objective: Some(done.report.objective_true),
        certificate: Some(done.report.certificate),
        flow_certificate: Some(done.flow_certificate),
        x: Some(x.iter().copied().collect()),
        wall_ms: 0.0,
        error: None,
    })
}

fn aggregate(per_seed: &[SeedResult]) -> Aggregate {
    let stats = |v: &[f64]| -> Option<(f64, f64, f64)> {
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        Some((mean, max, min))
    };
    let mses: Vec<f64> = per_seed.iter().filter_map(|r| r.mse).collect();
    let times: Vec<f64> = per_seed.iter().map(|r| r.wall_ms).collect();
    let m = stats(&mses);
    let t = stats(&times).unwrap_or((0.0, 0.0, 0.0));
    Aggregate {
        mean_mse: m.map(|s| s.0),
        max_mse: m.map(|s| s.1),
        min_mse: m.map(|s| s.2),
        mean_ms: t.0,
        max_ms: t.1,
        min_ms: t.2,
        failures: per_seed.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Size of the worker pool: `L0FLOW_THREADS` if set to a positive integer,
/// otherwise rayon's default.
pub fn worker_threads() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            warn!("ignoring {THREADS_ENV}={raw:?}");
            None
        }
    }
}

/// Runs every seed on a worker pool. A failing seed is recorded in its row
/// and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let per_seed: Vec<SeedResult> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let started = Instant::now();
                let mut row = run_seed(config, seed).unwrap_or_else(|e| {
                    warn!("seed {seed} failed: {e}");
                    SeedResult {
                        seed,
                        mse: None,
                        support: Vec::new(),
                        support_recovered: None,
                        objective: None,
                        certificate: None,
                        flow_certificate: None,
                        x: None,
                        wall_ms: 0.0,
                        error: Some(e.to_string()),
                    }
                });
                row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                row
            })
            .collect()
    });
    let aggregate = aggregate(&per_seed);
    info!(
        "{:?}: {} seeds, mean MSE {:?}, mean {:.1} ms",
        config.kind,
        per_seed.len(),
        aggregate.mean_mse,
        aggregate.mean_ms
    );
    Ok(ExperimentReport {
        config: config.clone(),
        per_seed,
        aggregate,
    })
}
