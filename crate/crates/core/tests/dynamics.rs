mod common;

use approx::assert_relative_eq;
use l0flow::*;
use nalgebra::{DMatrix, DVector};

use common::*;

fn example() -> (ProblemSpec, DynamicsParams) {
    let spec = bench::test_example_spec();
    let params = DynamicsParams::for_problem(&spec);
    (spec, params)
}

fn optimum() -> DVector<f64> {
    DVector::from_row_slice(&bench::TEST_EXAMPLE_OPTIMUM)
}

#[test]
fn mu_schedule_examples() {
    let (spec, mut p) = example();
    p.mu_star = 0.01;
    let power = MuSchedule::from_params(&p);
    assert_relative_eq!(mu_at(&power, 9.0).unwrap(), 0.055, epsilon = 1e-15);
    assert_relative_eq!(mu_at(&power, 0.0).unwrap(), 0.505, epsilon = 1e-15);
    assert!((mu_at(&power, 1e9).unwrap() - 0.005).abs() <= 1e-6);

    p.schedule = ScheduleKind::Exponential;
    let exp = MuSchedule::from_params(&p);
    assert_relative_eq!(mu_at(&exp, 0.0).unwrap(), 0.505, epsilon = 1e-15);
    assert!((mu_at(&exp, 1e9).unwrap() - 0.005).abs() <= 1e-6);
    assert!(mu_at(&exp, -1.0).is_err());
    let _ = spec;
}

#[test]
fn rhs_vanishes_at_the_known_minimizer() {
    let (spec, p) = example();
    let v = rhs(&spec, &p, &optimum(), 1e9).unwrap();
    assert!(v.amax() <= 1e-12, "{v}");
}

#[test]
fn rhs_is_linear_in_gamma() {
    let (spec, mut p) = example();
    let x = DVector::from_row_slice(&[0.3, 1.7]);
    let one = rhs(&spec, &p, &x, 0.4).unwrap();
    p.gamma = 2.0;
    let two = rhs(&spec, &p, &x, 0.4).unwrap();
    assert_eq!(two, one * 2.0);
}

#[test]
fn residual_examples() {
    let (spec, p) = example();
    let half = 0.5 * p.mu_star;
    assert!(stationarity_residual(&spec, &optimum(), half).unwrap() <= 1e-8);
    // pinned: both coordinates of the upper corner project back by exactly 5
    let corner = DVector::from_row_slice(&[5.0, 5.0]);
    assert_eq!(stationarity_residual(&spec, &corner, half).unwrap(), 5.0);
}

#[test]
fn equilibrium_state_does_not_move() {
    let (spec, p) = example();
    let state = SolverState {
        t: 1e9,
        x: optimum(),
        mu: 0.5 * p.mu_star,
        residual: 0.0,
    };
    let next = step(&spec, &p, &state).unwrap();
    assert!((&next.x - &state.x).amax() <= 1e-12);
    assert_eq!(next.t, state.t + p.step);
}

#[test]
fn random_starts_reach_the_known_minimizer() {
    let (spec, p) = example();
    for seed in 0..6 {
        let x0 = random_start(&mut rng(seed), spec.bounds.upper());
        let r = solve(&spec, &p, &x0).unwrap();
        assert!((&r.final_x - optimum()).amax() <= 1e-3, "seed {seed}: {}", r.final_x);
        assert_ne!(r.certificate, Certificate::MaxHorizon);
        if r.certificate == Certificate::CertifiedLocalMin {
            assert!(r.final_residual <= p.residual_tol);
        }
        let c = solve_and_correct(&spec, &p, &x0, &SolveOptions::default()).unwrap();
        assert_eq!(c.certificate, Certificate::CertifiedLocalMin);
        assert_eq!(c.support, vec![1]);
        assert!((&c.final_x - optimum()).amax() <= 1e-12);
    }
}

#[test]
fn equilibrium_start_stops_at_once() {
    let (spec, p) = example();
    let r = solve(&spec, &p, &optimum()).unwrap();
    assert_eq!(r.certificate, Certificate::CertifiedLocalMin);
    assert!(r.iterations <= 1, "{} iterations", r.iterations);
    assert_eq!(r.final_x, optimum());
}

#[test]
fn zero_loss_decays_to_the_origin() {
    let n = 3;
    let spec = ProblemSpec::quadratic(
        DMatrix::zeros(2, n),
        DVector::zeros(2),
        BoxSet::uniform(n, 1.0).unwrap(),
        1.0,
    )
    .unwrap();
    let p = DynamicsParams::for_problem(&spec);
    let x0 = DVector::from_element(n, 0.1);
    let raw = solve(&spec, &p, &x0).unwrap();
    assert!(raw.final_x.amax() <= 1e-4, "{}", raw.final_x);
    let r = solve_and_correct(&spec, &p, &x0, &SolveOptions::default()).unwrap();
    assert_eq!(r.final_x, DVector::zeros(n));
    assert_eq!(l0_norm(&r.final_x), 0);
    assert_eq!(r.certificate, Certificate::CertifiedLocalMin);
    assert_eq!(r.objective_true, 0.0);
}

#[test]
fn time_rescaling_reproduces_the_trajectory() {
    // Under the exponential schedule, (γ, β, h) -> (2γ, 2β, h/2) is a pure
    // reparametrization of time.
    let (spec, mut p) = example();
    p.schedule = ScheduleKind::Exponential;
    let mut q = p;
    q.gamma *= 2.0;
    q.beta *= 2.0;
    q.step *= 0.5;
    let x0 = random_start(&mut rng(3), spec.bounds.upper());
    let start = |params: &DynamicsParams| SolverState {
        t: 0.0,
        x: x0.clone(),
        mu: mu_at(&MuSchedule::from_params(params), 0.0).unwrap(),
        residual: f64::INFINITY,
    };
    let (mut a, mut b) = (start(&p), start(&q));
    for _ in 0..1000 {
        a = step(&spec, &p, &a).unwrap();
        b = step(&spec, &q, &b).unwrap();
        assert!((&a.x - &b.x).amax() <= 1e-10);
        assert_relative_eq!(a.mu, b.mu, max_relative = 1e-12);
    }
}

#[test]
fn trajectory_samples_and_csv() {
    let (spec, p) = example();
    let x0 = DVector::from_row_slice(&[4.0, 4.0]);
    let r = solve_with(&spec, &p, &x0, &SolveOptions { sample_stride: 10 }).unwrap();
    assert!(!r.trajectory_samples.is_empty());
    assert!(r.trajectory_samples.windows(2).all(|w| w[0].t < w[1].t && w[0].mu >= w[1].mu));
    let mut buf = Vec::new();
    write_trajectory_csv(&r.trajectory_samples, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("t,objective_smooth,residual,mu"));
    assert_eq!(text.lines().count(), r.trajectory_samples.len() + 1);
}

#[test]
fn horizon_cutoff_is_reported() {
    let (spec, mut p) = example();
    p.horizon = 1e-6;
    let r = solve(&spec, &p, &DVector::from_row_slice(&[4.0, 4.0])).unwrap();
    assert_eq!(r.certificate, Certificate::MaxHorizon);
}

#[test]
fn wrong_length_start_is_rejected() {
    let (spec, p) = example();
    assert!(solve(&spec, &p, &DVector::zeros(3)).is_err());
}

#[test]
fn stable_step_from_the_gradient_lipschitz_constant() {
    let (spec, _) = example();
    // AᵀA = [[11, 14], [14, 38]]
    let lmax = (49.0 + 1513f64.sqrt()) / 2.0;
    assert_relative_eq!(spec.gradient_lipschitz().unwrap(), 2.0 * lmax, max_relative = 1e-12);
    assert_relative_eq!(rk4_stable_step(&spec, 2.0).unwrap(), 2.5 / (4.0 * lmax), max_relative = 1e-12);
}
