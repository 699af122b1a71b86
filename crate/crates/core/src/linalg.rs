//! Dense least-squares helpers backed by nalgebra's SVD.

use nalgebra::DMatrix;
use ndarray::Array2;

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Moore-Penrose pseudoinverse with singular values below
/// `rcond * sigma_max` treated as zero. Returns the inverse and the
/// numerical rank.
pub fn pinv(a: &Array2<f64>, rcond: f64) -> (Array2<f64>, usize) {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return (Array2::zeros((c, r)), 0);
    }
    let svd = to_na(a).svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rcond * smax;
    let k = s.len();
    let mut out = DMatrix::<f64>::zeros(c, r);
    let mut rank = 0;
    for idx in 0..k {
        if s[idx] > cutoff && s[idx] > 0.0 {
            rank += 1;
            let inv = 1.0 / s[idx];
            for i in 0..c {
                let vi = v_t[(idx, i)] * inv;
                if vi == 0.0 {
                    continue;
                }
                for j in 0..r {
                    out[(i, j)] += vi * u[(j, idx)];
                }
            }
        }
    }
    (from_na(&out), rank)
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &Array2<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(a).singular_values().iter().cloned().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Least squares `min ||X B - Y||_F` through the normal equations
/// `B = (X^T X)^+ X^T Y`.
pub fn lstsq_normal(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let xtx = x.t().dot(x);
    let xty = x.t().dot(y);
    let (inv, _) = pinv(&xtx, 1e-12);
    inv.dot(&xty)
}

/// Integer matrix power by repeated squaring.
pub fn matrix_power(a: &Array2<f64>, k: u32) -> Array2<f64> {
    let n = a.nrows();
    let mut result = Array2::<f64>::eye(n);
    let mut base = a.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = result.dot(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.dot(&base);
        }
    }
    result
}
