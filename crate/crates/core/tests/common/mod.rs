//! Test-only helpers: an enumeration oracle for small box-constrained least
//! squares problems and random instance builders. Nothing here calls the
//! solver code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ls_value(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - b).norm_squared()
}

/// `min ‖Ax − b‖²` over `lo ≤ x ≤ hi` by enumerating, for each coordinate,
/// {at lower, at upper, free} and solving the normal equations of the free
/// block. Exact for full-column-rank `A`; intended for `n ≤ 4`.
pub fn box_ls_min(a: &DMatrix<f64>, b: &DVector<f64>, lo: &[f64], hi: &[f64]) -> (f64, DVector<f64>) {
    let n = a.ncols();
    assert!(n <= 6, "enumeration oracle is exponential in n");
    let mut best = (f64::INFINITY, DVector::zeros(n));
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => x[i] = lo[i],
                1 => x[i] = hi[i],
                _ => free.push(i),
            }
            c /= 3;
        }
        if !free.is_empty() {
            let af = a.select_columns(free.iter());
            let rhs = b - a * &x;
            let Some(ch) = (af.transpose() * &af).cholesky() else { continue };
            let z = ch.solve(&(af.transpose() * rhs));
            let mut ok = true;
            for (k, &i) in free.iter().enumerate() {
                if z[k] < lo[i] - 1e-12 || z[k] > hi[i] + 1e-12 {
                    ok = false;
                }
                x[i] = z[k].clamp(lo[i], hi[i]);
            }
            if !ok {
                continue;
            }
        }
        let v = ls_value(a, b, &x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best
}

/// Local-minimizer verdict for `‖Ax − b‖² + λ‖x‖₀` over `[lo, hi]` (with
/// `lo ≤ 0 ≤ hi`): `x` is a local minimizer iff it minimizes the loss over
/// the face that keeps its zero entries at zero.
pub fn oracle_is_local_min(a: &DMatrix<f64>, b: &DVector<f64>, lo: &[f64], hi: &[f64], x: &DVector<f64>) -> bool {
    let n = x.len();
    let flo: Vec<f64> = (0..n).map(|i| if x[i] == 0.0 { 0.0 } else { lo[i] }).collect();
    let fhi: Vec<f64> = (0..n).map(|i| if x[i] == 0.0 { 0.0 } else { hi[i] }).collect();
    let (best, _) = box_ls_min(a, b, &flo, &fhi);
    let fx = ls_value(a, b, x);
    fx <= best + 1e-9 * (1.0 + best.abs())
}

/// Best objective `‖Ax − b‖² + λ‖x‖₀` over all support patterns.
pub fn global_l0_min(a: &DMatrix<f64>, b: &DVector<f64>, lo: &[f64], hi: &[f64], lambda: f64) -> f64 {
    let n = a.ncols();
    let mut best = f64::INFINITY;
    for mask in 0..(1usize << n) {
        let flo: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { lo[i] } else { 0.0 }).collect();
        let fhi: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { 0.0 }).collect();
        let (v, x) = box_ls_min(a, b, &flo, &fhi);
        let nnz = x.iter().filter(|&&e| e != 0.0).count();
        best = best.min(v + lambda * nnz as f64);
    }
    best
}

pub fn random_matrix<R: Rng>(rng: &mut R, m: usize, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn test_example_data() -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(3, 2, &[1.0, 3.0, 3.0, 2.0, 1.0, 5.0]),
        DVector::from_vec(vec![2.0, 1.0, 3.0]),
    )
}

/// Uniform start in the box `[0, upper]`.
pub fn random_start<R: Rng>(rng: &mut R, upper: &DVector<f64>) -> DVector<f64> {
    upper.map(|u| rng.random::<f64>() * u)
}
