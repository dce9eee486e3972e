//! Fast invariant checks behind `l0flow check`. Deterministic grids, no RNG.

use l0flow::bench::test_example_spec;
use l0flow::{
    l0_norm, mu_update_point, partition, project_box, theta, theta_grad_mu, theta_grad_s, BoxSet, Mu,
};
use nalgebra::DVector;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const MUS: [f64; 6] = [1e-4, 3e-3, 0.05, 0.6, 2.0, 25.0];

fn mu(v: f64) -> Mu {
    Mu::new(v).expect("grid values are positive")
}

/// Evenly spaced points on `[0, 2μ]`, skipping a relative neighborhood of the breakpoints.
fn s_grid(m: f64, skip: f64) -> impl Iterator<Item = f64> {
    (0..=400)
        .map(move |k| 2.0 * m * k as f64 / 400.0 + 1e-3 * m)
        .filter(move |&s| (s - m / 3.0).abs() > skip * m && (s - m).abs() > skip * m)
}

fn continuity() -> CheckResult {
    let eps = 1e-10;
    let mut worst = 0.0f64;
    for &m in &MUS {
        let mm = mu(m);
        for s in [m / 3.0, m] {
            for e in [eps, -eps] {
                // scaled by the local Lipschitz constants of θ and ∂θ/∂s
                let dv = (theta(s + e, mm) - theta(s, mm)).abs() / (1.5 / m * eps);
                let dg = (theta_grad_s(s + e, mm) - theta_grad_s(s, mm)).abs() / (9.0 / (4.0 * m * m) * eps);
                worst = worst.max(dv).max(dg);
            }
        }
    }
    CheckResult {
        name: "smoothing continuity at breakpoints",
        passed: worst <= 1.0 + 1e-3,
        detail: format!("largest jump / Lipschitz bound = {worst:.3}"),
    }
}

fn gradients(fault: bool) -> CheckResult {
    let mut worst = 0.0f64;
    let mut count = 0;
    for &m in &MUS {
        let mm = mu(m);
        let h = 1e-6 * m;
        for s in s_grid(m, 1e-4) {
            let fd_s = (theta(s + h, mm) - theta(s - h, mm)) / (2.0 * h);
            let fd_mu = (theta(s, mu(m + h)) - theta(s, mu(m - h))) / (2.0 * h);
            let mut gs = theta_grad_s(s, mm);
            if fault {
                gs *= 1.01;
            }
            for (fd, g) in [(fd_s, gs), (fd_mu, theta_grad_mu(s, mm))] {
                let err = if g == 0.0 { fd.abs() } else { (fd - g).abs() / g.abs() };
                worst = worst.max(err);
            }
            count += 1;
        }
    }
    CheckResult {
        name: "smoothing gradients vs finite differences",
        passed: worst <= 1e-6,
        detail: format!("{count} points, max relative error {worst:.2e}"),
    }
}

fn monotone_and_bounded() -> CheckResult {
    let mut bad = 0;
    for &m in &MUS {
        let mm = mu(m);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=600 {
            let s = 3.0 * m * k as f64 / 600.0;
            let v = theta(s, mm);
            if v < prev || !(0.0..=1.0).contains(&v) || theta_grad_mu(s, mm) > 0.0 {
                bad += 1;
            }
            prev = v;
        }
    }
    CheckResult {
        name: "smoothing monotonicity and bounds",
        passed: bad == 0,
        detail: format!("{bad} violations"),
    }
}

fn lipschitz() -> CheckResult {
    let mut worst = 0.0f64;
    for &m in &MUS {
        let mm = mu(m);
        let pts: Vec<f64> = (0..=120).map(|k| 2.0 * m * k as f64 / 120.0).collect();
        for (i, &a) in pts.iter().enumerate() {
            for &b in &pts[i + 1..] {
                let ratio = (theta_grad_s(a, mm) - theta_grad_s(b, mm)).abs() / ((9.0 / (4.0 * m * m)) * (a - b).abs());
                worst = worst.max(ratio);
            }
        }
    }
    CheckResult {
        name: "Lipschitz bound of the smoothing gradient",
        passed: worst <= 1.0 + 1e-9,
        detail: format!("max ratio to 9/(4mu^2) = {worst:.6}"),
    }
}

fn projection() -> CheckResult {
    let bounds = BoxSet::one_sided(DVector::from_row_slice(&[1.0, 0.0, 2.5])).expect("valid box");
    let pts: Vec<DVector<f64>> = (0..64)
        .map(|k| {
            let t = k as f64;
            DVector::from_row_slice(&[(t * 0.37).sin() * 3.0, (t * 0.11).cos() * 2.0, t / 16.0 - 1.0])
        })
        .collect();
    let mut bad = 0;
    for x in &pts {
        let px = project_box(x, &bounds).expect("dimensions match");
        if !bounds.contains(&px) || project_box(&px, &bounds).expect("dimensions match") != px {
            bad += 1;
        }
        for y in &pts {
            let py = project_box(y, &bounds).expect("dimensions match");
            if (&px - &py).norm() > (x - y).norm() + 1e-12 {
                bad += 1;
            }
        }
    }
    CheckResult {
        name: "projection idempotent and nonexpansive",
        passed: bad == 0,
        detail: format!("{} points, {bad} violations", pts.len()),
    }
}

fn partitions() -> CheckResult {
    let ms = 0.012;
    let bounds = BoxSet::uniform(5, 1.0).expect("valid box");
    let values = [0.0, 0.001, ms / 6.0, 0.003, ms / 2.0, 0.3, 1.0];
    let mut bad = 0;
    let mut count = 0;
    for a in values {
        for b in values {
            let x = DVector::from_row_slice(&[a, b, 0.9, ms / 6.0, ms / 2.0]);
            let p = partition(&x, ms, &bounds).expect("point is in the box");
            let mut all: Vec<usize> = p.near_zero.iter().chain(&p.transition).chain(&p.nonzero).copied().collect();
            all.sort_unstable();
            if all != [0, 1, 2, 3, 4] || !p.transition.contains(&3) || !p.nonzero.contains(&4) {
                bad += 1;
            }
            count += 1;
        }
    }
    CheckResult {
        name: "partition exhaustive, disjoint, half-open",
        passed: bad == 0,
        detail: format!("{count} points, {bad} violations"),
    }
}

fn update_point() -> CheckResult {
    let spec = test_example_spec();
    let ms = l0flow::default_mu_star(&spec);
    let mut bad = 0;
    for i in 0..=40 {
        for j in 0..=40 {
            let x = DVector::from_row_slice(&[ms * i as f64 / 40.0, 5.0 * j as f64 / 40.0]);
            let u = mu_update_point(&x, ms);
            if l0_norm(&u) > l0_norm(&x) || spec.objective_true(&u) > spec.objective_true(&x) + 1e-12 {
                bad += 1;
            }
        }
    }
    CheckResult {
        name: "update point never raises cardinality or objective",
        passed: bad == 0,
        detail: format!("{bad} violations on the test example"),
    }
}

pub fn run_all(inject_fault: bool) -> Vec<CheckResult> {
    vec![
        continuity(),
        gradients(inject_fault),
        monotone_and_bounded(),
        lipschitz(),
        projection(),
        partitions(),
        update_point(),
    ]
}
