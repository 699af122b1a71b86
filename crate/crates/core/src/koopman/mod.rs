//! Extended dynamic mode decomposition (EDMD) of the Koopman operator
//! `K g = g o F`, K-step propagation, L2 projection onto a finite basis and
//! the three-term error decomposition on systems whose Koopman action is
//! known in closed form.
//!
//! With `Psi(X)` the `[N x M]` matrix of basis values at the samples, the
//! estimate is `A = Psi(Y) Psi(X)^T (Psi(X) Psi(X)^T)^+`, so that
//! `Psi(F(x)) ~ A Psi(x)`. An observable `g = c . Psi` is advanced by
//! `c -> A^T c`.

mod basis;
mod decomposition;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matrix_power, pinv};

pub use basis::{monomial_exponents, ObservableBasis};
pub use decomposition::{
    error_decomposition, koopman_norm, write_sweep_csv, write_sweep_svg, AnalyticSystem, BasisFamily,
    DecompositionRow, NormMeasure, Observable, SweepConfig,
};

/// Relative singular-value cutoff of the Gram pseudoinverse.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("no samples")]
    EmptySamples,
    #[error("state dimension mismatch: basis expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("X has {x} samples but Y has {y}")]
    SampleMismatch { x: usize, y: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no analytic Koopman action for {0}")]
    UnknownSystem(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanEstimate {
    pub basis: ObservableBasis,
    /// `[N x N]`.
    pub a: Array2<f64>,
    /// Number of sample pairs.
    pub m: usize,
    /// Horizon of the pairs the estimate was fitted on.
    pub k: usize,
    /// Numerical rank of the Gram matrix.
    pub rank: usize,
}

fn check_states(basis: &ObservableBasis, x: ArrayView2<f64>) -> Result<(), KoopmanError> {
    if x.nrows() == 0 {
        return Err(KoopmanError::EmptySamples);
    }
    if x.ncols() != basis.state_dim() {
        return Err(KoopmanError::DimensionMismatch {
            expected: basis.state_dim(),
            got: x.ncols(),
        });
    }
    Ok(())
}

/// Least-squares `min_A ||A Psi(X) - Psi(Y)||_F` for pairs `Y_i = F^k(X_i)`
/// (states as rows). A rank-deficient Gram matrix gives the minimum-norm
/// solution and a logged warning.
pub fn edmd_fit(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    basis: &ObservableBasis,
    k: usize,
) -> Result<KoopmanEstimate, KoopmanError> {
    basis.validate()?;
    check_states(basis, x)?;
    check_states(basis, y)?;
    if x.nrows() != y.nrows() {
        return Err(KoopmanError::SampleMismatch { x: x.nrows(), y: y.nrows() });
    }
    let px = basis.psi_matrix(x);
    let py = basis.psi_matrix(y);
    let gram = px.dot(&px.t());
    let cross = py.dot(&px.t());
    let (ginv, rank) = pinv(&gram, RCOND);
    if rank < basis.size() {
        log::warn!(
            "EDMD Gram matrix is rank deficient ({rank} of {}); using the minimum-norm solution",
            basis.size()
        );
    }
    Ok(KoopmanEstimate {
        basis: basis.clone(),
        a: cross.dot(&ginv),
        m: x.nrows(),
        k,
        rank,
    })
}

/// Coefficients of `K^steps g` for `g = coeffs . Psi`, i.e. `(A^T)^steps c`.
pub fn k_step(est: &KoopmanEstimate, coeffs: ArrayView1<f64>, steps: u32) -> Result<Array1<f64>, KoopmanError> {
    if coeffs.len() != est.a.nrows() {
        return Err(KoopmanError::DimensionMismatch {
            expected: est.a.nrows(),
            got: coeffs.len(),
        });
    }
    if steps == 0 {
        return Ok(coeffs.to_owned());
    }
    Ok(matrix_power(&est.a.t().to_owned(), steps).dot(&coeffs))
}

/// Empirical L2 projection of an observable sampled at `samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coeffs: Array1<f64>,
    /// Root-mean-square of `g - Pi g` over the samples.
    pub residual_norm: f64,
}

/// `coeffs = G^+ <Psi, g>` with sample-average Gram `G` and inner products.
pub fn project(
    g: ArrayView1<f64>,
    samples: ArrayView2<f64>,
    basis: &ObservableBasis,
) -> Result<Projection, KoopmanError> {
    basis.validate()?;
    check_states(basis, samples)?;
    if g.len() != samples.nrows() {
        return Err(KoopmanError::SampleMismatch {
            x: samples.nrows(),
            y: g.len(),
        });
    }
    let m = samples.nrows() as f64;
    let psi = basis.psi_matrix(samples);
    let gram = psi.dot(&psi.t()) / m;
    let rhs = psi.dot(&g) / m;
    let (ginv, rank) = pinv(&gram, RCOND);
    if rank < basis.size() {
        log::warn!("projection Gram matrix is rank deficient ({rank} of {})", basis.size());
    }
    let coeffs = ginv.dot(&rhs);
    let fitted = psi.t().dot(&coeffs);
    let residual_norm = ((&g - &fitted).mapv(|v| v * v).sum() / m).sqrt();
    Ok(Projection { coeffs, residual_norm })
}

/// `c . Psi(x)` for every row of `xs`.
pub fn evaluate(basis: &ObservableBasis, coeffs: ArrayView1<f64>, xs: ArrayView2<f64>) -> Array1<f64> {
    basis.psi_matrix(xs).t().dot(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::torus_orbit;
    use ndarray::{array, Array2};
    use std::f64::consts::TAU;

    fn orbit_pairs(alpha: f64, m: usize, steps: usize) -> (Array2<f64>, Array2<f64>) {
        let o = torus_orbit(alpha, 0.1234, m + steps);
        let x = Array2::from_shape_fn((m, 1), |(i, _)| o[i]);
        let y = Array2::from_shape_fn((m, 1), |(i, _)| o[i + steps]);
        (x, y)
    }

    #[test]
    fn identity_map_gives_identity() {
        let basis = ObservableBasis::monomial(1, 3, true);
        let x = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 25.0 - 1.0);
        let est = edmd_fit(x.view(), x.view(), &basis, 1).unwrap();
        let eye = Array2::<f64>::eye(4);
        assert!((&est.a - &eye).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn quarter_turn_rotation_block() {
        let (x, y) = orbit_pairs(0.25, 2000, 1);
        let est = edmd_fit(x.view(), y.view(), &ObservableBasis::fourier_torus(1), 1).unwrap();
        let th = TAU * 0.25;
        let want = array![[1.0, 0.0, 0.0], [0.0, th.cos(), -th.sin()], [0.0, th.sin(), th.cos()]];
        assert!((&est.a - &want).iter().all(|v| v.abs() < 1e-6), "{}", est.a);
    }

    #[test]
    fn contraction_monomial() {
        let x = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 / 10.0 - 1.5);
        let y = x.mapv(|v| 0.7 * v);
        let est = edmd_fit(x.view(), y.view(), &ObservableBasis::monomial(1, 1, false), 1).unwrap();
        assert!((est.a[[0, 0]] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn zero_steps_is_identity_and_four_quarter_turns_are_identity() {
        let (x, y) = orbit_pairs(0.25, 2000, 1);
        let est = edmd_fit(x.view(), y.view(), &ObservableBasis::fourier_torus(1), 1).unwrap();
        let c = array![0.3, -1.0, 2.0];
        assert_eq!(k_step(&est, c.view(), 0).unwrap(), c);
        let four = k_step(&est, c.view(), 4).unwrap();
        assert!((&four - &c).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn rank_deficient_gram_does_not_fail() {
        let x = Array2::from_elem((10, 1), 0.3);
        let est = edmd_fit(x.view(), x.view(), &ObservableBasis::fourier_torus(2), 1).unwrap();
        assert_eq!(est.rank, 1);
        assert!(est.a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn projection_examples() {
        let xs = Array2::from_shape_fn((400, 1), |(i, _)| i as f64 / 400.0);
        let basis = ObservableBasis::fourier_torus(1);
        let g = xs.column(0).mapv(|x| 0.5 + 2.0 * (TAU * x).sin());
        let p = project(g.view(), xs.view(), &basis).unwrap();
        assert!(p.residual_norm < 1e-8);
        assert!((p.coeffs[0] - 0.5).abs() < 1e-10);
        assert!((p.coeffs[2] - 2.0 / std::f64::consts::SQRT_2).abs() < 1e-10);
        let g = xs.column(0).mapv(|x| (2.0 * TAU * x).cos());
        let p = project(g.view(), xs.view(), &basis).unwrap();
        assert!(p.coeffs.iter().all(|c| c.abs() < 1e-10));
        let g = Array1::from_elem(400, 3.0);
        let p = project(g.view(), xs.view(), &basis).unwrap();
        assert!((p.coeffs[0] - 3.0).abs() < 1e-12 && p.coeffs[1].abs() < 1e-12);
    }

    #[test]
    fn bad_shapes_are_errors() {
        let basis = ObservableBasis::fourier_torus(1);
        let x = Array2::zeros((3, 2));
        assert!(matches!(
            edmd_fit(x.view(), x.view(), &basis, 1),
            Err(KoopmanError::DimensionMismatch { .. })
        ));
        let e = Array2::zeros((0, 1));
        assert!(matches!(edmd_fit(e.view(), e.view(), &basis, 1), Err(KoopmanError::EmptySamples)));
    }
}
