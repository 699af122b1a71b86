use std::f64::consts::{SQRT_2, TAU};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::KoopmanError;
use crate::rng::derive_rng;

/// A finite dictionary of observables `Psi(x) = (psi_1(x), ..., psi_N(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableBasis {
    /// `{1, sqrt2 cos 2 pi k x, sqrt2 sin 2 pi k x : 1 <= k <= m}` on the
    /// circle `x in [0, 1)`, orthonormal under the uniform measure.
    /// Ordered `1, cos 1, sin 1, cos 2, sin 2, ...`.
    FourierTorus { m: usize },
    /// All monomials of `dim` variables with total degree in
    /// `[1, degree]` (plus the constant when `constant` is set), graded order.
    Monomial {
        dim: usize,
        degree: usize,
        constant: bool,
    },
    /// Constant plus `tanh(w_i . phi(x) + b_i)`, where `phi(x)` is
    /// `(cos 2 pi x, sin 2 pi x)` for torus input and `x` otherwise.
    ActivationFeatures {
        torus_input: bool,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
}

impl ObservableBasis {
    pub fn fourier_torus(m: usize) -> Self {
        ObservableBasis::FourierTorus { m }
    }

    pub fn monomial(dim: usize, degree: usize, constant: bool) -> Self {
        ObservableBasis::Monomial { dim, degree, constant }
    }

    /// `n` random tanh features (plus a constant) with weights drawn from
    /// `N(0, scale^2)` and biases from `N(0, 1)`.
    pub fn activation_features(torus_input: bool, input_dim: usize, n: usize, scale: f64, seed: u64) -> Self {
        let in_dim = if torus_input { 2 } else { input_dim };
        let mut rng = derive_rng(seed, "koopman_features", n as u64);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let weights = (0..n).map(|_| (0..in_dim).map(|_| scale * g()).collect()).collect();
        let bias = (0..n).map(|_| g()).collect();
        ObservableBasis::ActivationFeatures {
            torus_input,
            weights,
            bias,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            ObservableBasis::FourierTorus { m } => 2 * m + 1,
            ObservableBasis::Monomial { dim, degree, constant } => {
                monomial_exponents(*dim, *degree).len() + usize::from(*constant)
            }
            ObservableBasis::ActivationFeatures { bias, .. } => bias.len() + 1,
        }
    }

    /// Dimension of the state `x` the basis is evaluated on.
    pub fn state_dim(&self) -> usize {
        match self {
            ObservableBasis::FourierTorus { .. } => 1,
            ObservableBasis::Monomial { dim, .. } => *dim,
            ObservableBasis::ActivationFeatures {
                torus_input, weights, ..
            } => {
                if *torus_input {
                    1
                } else {
                    weights.first().map_or(0, Vec::len)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), KoopmanError> {
        let bad = |m: &str| Err(KoopmanError::InvalidArgument(m.to_string()));
        match self {
            ObservableBasis::Monomial { dim, degree, constant } => {
                if *dim == 0 || (*degree == 0 && !constant) {
                    return bad("monomial basis is empty");
                }
            }
            ObservableBasis::ActivationFeatures {
                torus_input,
                weights,
                bias,
            } => {
                if weights.len() != bias.len() {
                    return bad("activation feature weights and biases differ in count");
                }
                let want = if *torus_input { 2 } else { weights.first().map_or(0, Vec::len) };
                if weights.iter().any(|w| w.len() != want) || want == 0 && !weights.is_empty() {
                    return bad("activation feature weights have inconsistent widths");
                }
            }
            ObservableBasis::FourierTorus { .. } => {}
        }
        Ok(())
    }

    /// `Psi(x)` written into `out` (length `size()`).
    pub fn eval_into(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        match self {
            ObservableBasis::FourierTorus { m } => {
                out[0] = 1.0;
                for k in 1..=*m {
                    let a = TAU * k as f64 * x[0];
                    out[2 * k - 1] = SQRT_2 * a.cos();
                    out[2 * k] = SQRT_2 * a.sin();
                }
            }
            ObservableBasis::Monomial { dim, degree, constant } => {
                let mut i = 0;
                if *constant {
                    out[0] = 1.0;
                    i = 1;
                }
                for exps in monomial_exponents(*dim, *degree) {
                    out[i] = exps.iter().enumerate().map(|(j, &e)| x[j].powi(e as i32)).product();
                    i += 1;
                }
            }
            ObservableBasis::ActivationFeatures {
                torus_input,
                weights,
                bias,
            } => {
                out[0] = 1.0;
                let phi: Vec<f64> = if *torus_input {
                    let a = TAU * x[0];
                    vec![a.cos(), a.sin()]
                } else {
                    x.to_vec()
                };
                for (i, (w, b)) in weights.iter().zip(bias).enumerate() {
                    let z: f64 = w.iter().zip(&phi).map(|(wi, p)| wi * p).sum::<f64>() + b;
                    out[i + 1] = z.tanh();
                }
            }
        }
    }

    /// `Psi(X)` as an `[N x M]` matrix for states given as rows of `xs`.
    pub fn psi_matrix(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let n = self.size();
        let mut out = Array2::zeros((n, xs.nrows()));
        let mut buf = vec![0.0; n];
        for (j, x) in xs.rows().into_iter().enumerate() {
            self.eval_into(x, &mut buf);
            for i in 0..n {
                out[[i, j]] = buf[i];
            }
        }
        out
    }
}

/// Exponent vectors of all monomials in `dim` variables with total degree
/// `1..=degree`, graded then lexicographically descending.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim - 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=total).rev() {
            prefix.push(e);
            rec(dim, total - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    for total in 1..=degree {
        rec(dim, total, &mut Vec::new(), &mut out);
    }
    out
}
