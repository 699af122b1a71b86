//! Reference implementations used as test oracles. Each is written
//! independently of the library code it checks.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draws by Box-Muller, so the oracle data does not depend
/// on the library's sampling code.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gaussian(rng))
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut r = b.clone();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                m.swap([col, k], [piv, k]);
            }
            r.swap(col, piv);
        }
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[[row, k]] * x[k]).sum();
        x[row] = (r[row] - s) / m[[row, row]];
    }
    x
}

/// Least squares through the normal equations `(X^T X) B = X^T Y`.
pub fn normal_equations(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let xtx = x.t().dot(&x);
    let mut out = Array2::zeros((x.ncols(), y.ncols()));
    for j in 0..y.ncols() {
        let rhs = x.t().dot(&y.column(j));
        out.column_mut(j).assign(&solve(&xtx, &rhs));
    }
    out
}

/// Cyclic coordinate descent for `(1/2n)||X b - y||^2 + lambda ||b||_1`,
/// one output column at a time.
pub fn coordinate_descent_lasso(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64, sweeps: usize) -> Array2<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).dot(&x.column(j)) / n).collect();
    let mut out = Array2::zeros((p, y.ncols()));
    for t in 0..y.ncols() {
        let mut b = Array1::<f64>::zeros(p);
        let mut resid = y.column(t).to_owned();
        for _ in 0..sweeps {
            let mut max_change = 0.0f64;
            for j in 0..p {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let rho = x.column(j).dot(&resid) / n + col_sq[j] * b[j];
                let new = soft(rho, lambda) / col_sq[j];
                let delta = new - b[j];
                if delta != 0.0 {
                    resid.scaled_add(-delta, &x.column(j));
                    b[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < 1e-14 {
                break;
            }
        }
        out.column_mut(t).assign(&b);
    }
    out
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Smallest lambda at which the Lasso solution is identically zero.
pub fn lambda_max(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let n = x.nrows() as f64;
    x.t().dot(&y).mapv(|v| v.abs() / n).fold(0.0, |a: f64, &b| a.max(b))
}

/// Central finite differences of `f` at `theta`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            work[i] = theta[i] + h;
            let up = f(&work);
            work[i] = theta[i] - h;
            let down = f(&work);
            work[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Variance-weighted R² computed the long way.
pub fn r2_reference(y: ArrayView2<f64>, yhat: ArrayView2<f64>) -> f64 {
    let (n, d) = y.dim();
    let mut sse = 0.0;
    let mut sst = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| y[[i, j]]).sum::<f64>() / n as f64;
        for i in 0..n {
            sse += (y[[i, j]] - yhat[[i, j]]).powi(2);
            sst += (y[[i, j]] - mean).powi(2);
        }
    }
    1.0 - sse / sst
}
