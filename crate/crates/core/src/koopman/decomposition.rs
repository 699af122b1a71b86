//! Three-term error decomposition of K-step EDMD predictions on systems
//! whose Koopman action is known.
//!
//! For an observable `g` with projection `Pi g` onto the span of the basis,
//! the estimator `K_hat` fitted on `M` one-step pairs and the Galerkin
//! operator `K_N` (the infinite-data limit, computed under the measure),
//!
//! ```text
//! K_hat^K Pi g - K^K g = (K_hat^K - K_N^K) Pi g      term1, estimation
//!                      + (K_N^K Pi g - K^K Pi g)     term2, projection of the operator
//!                      + K^K (Pi g - g)              term3, truncation of g
//! ```
//!
//! so `total <= term1 + term2 + term3`. The reported `term3` is the bound
//! `||K||^K ||(I - Pi) g||`; `term3_realized` is the norm of the last line
//! itself. Norms are L2 over the invariant (torus) or reference (contraction)
//! measure, evaluated by quadrature or by a held-out sample.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{edmd_fit, k_step, KoopmanError, ObservableBasis, RCOND};
use crate::linalg::{matrix_power, pinv};
use crate::plot::{LinePlot, Series};
use crate::rng::derive_rng;
use crate::synth::{torus_orbit, SynthSystemSpec, SystemKind};

/// Scalar systems with a closed-form flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSystem {
    /// `x -> (x + alpha) mod 1`, measure uniform on `[0, 1)`.
    TorusRotation { alpha: f64 },
    /// `x -> rho x`, measure uniform on `[-1, 1]`.
    LinearContraction { rho: f64 },
}

impl AnalyticSystem {
    pub fn from_spec(spec: &SynthSystemSpec) -> Result<Self, KoopmanError> {
        // The contraction acts coordinate-wise, so one coordinate carries it.
        match spec.kind {
            SystemKind::TorusRotation => Ok(AnalyticSystem::TorusRotation {
                alpha: spec.alpha_or_default(),
            }),
            SystemKind::LinearContraction => Ok(AnalyticSystem::LinearContraction {
                rho: spec.rho_or_default(),
            }),
            other => Err(KoopmanError::UnknownSystem(format!("{other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), KoopmanError> {
        match *self {
            AnalyticSystem::TorusRotation { alpha } if !alpha.is_finite() => {
                Err(KoopmanError::InvalidArgument(format!("alpha must be finite, got {alpha}")))
            }
            AnalyticSystem::LinearContraction { rho } if !(rho > 0.0 && rho < 1.0) => {
                Err(KoopmanError::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")))
            }
            _ => Ok(()),
        }
    }

    /// `F^k(x)`.
    pub fn flow(&self, x: f64, k: u32) -> f64 {
        match *self {
            AnalyticSystem::TorusRotation { alpha } => (x + k as f64 * alpha).rem_euclid(1.0),
            AnalyticSystem::LinearContraction { rho } => rho.powi(k as i32) * x,
        }
    }

    fn is_torus(&self) -> bool {
        matches!(self, AnalyticSystem::TorusRotation { .. })
    }
}

/// Operator norm of `K` on L2 of the system's measure: 1 for the rotation
/// (measure preserving), `rho^{-1/2}` for the contraction on `U[-1, 1]`.
pub fn koopman_norm(system: &AnalyticSystem) -> f64 {
    match *system {
        AnalyticSystem::TorusRotation { .. } => 1.0,
        AnalyticSystem::LinearContraction { rho } => rho.powf(-0.5),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `cos(2 pi freq x)`.
    Cos { freq: u32 },
    /// `sin(2 pi freq x)`.
    Sin { freq: u32 },
    /// `x^exponent`.
    Power { exponent: u32 },
}

impl Observable {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Observable::Cos { freq } => (TAU * freq as f64 * x).cos(),
            Observable::Sin { freq } => (TAU * freq as f64 * x).sin(),
            Observable::Power { exponent } => x.powi(exponent as i32),
        }
    }
}

/// Basis family indexed by an order parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFamily {
    /// Order = highest frequency `m`; size `2m + 1`.
    Fourier,
    /// Order = degree; constant included.
    Monomial,
    /// Order = number of random tanh features.
    Activation { scale: f64, seed: u64 },
}

impl BasisFamily {
    pub fn build(&self, system: &AnalyticSystem, order: usize) -> Result<ObservableBasis, KoopmanError> {
        let basis = match self {
            BasisFamily::Fourier => {
                if !system.is_torus() {
                    return Err(KoopmanError::InvalidArgument(
                        "the Fourier basis is defined on the torus only".into(),
                    ));
                }
                ObservableBasis::fourier_torus(order)
            }
            BasisFamily::Monomial => ObservableBasis::monomial(1, order, true),
            BasisFamily::Activation { scale, seed } => {
                ObservableBasis::activation_features(system.is_torus(), 1, order, *scale, *seed)
            }
        };
        basis.validate()?;
        Ok(basis)
    }
}

/// How the L2 norms and the truth operators are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormMeasure {
    /// Uniform grid on the torus, midpoint rule on `[-1, 1]`.
    Quadrature { points: usize },
    /// A held-out sample of fixed size: a trajectory from a seeded start on
    /// the torus, i.i.d. uniform draws for the contraction.
    HeldOut { points: usize },
}

impl Default for NormMeasure {
    fn default() -> Self {
        NormMeasure::Quadrature { points: 8192 }
    }
}

impl NormMeasure {
    fn points(&self, system: &AnalyticSystem, seed: u64) -> Vec<f64> {
        match (*self, *system) {
            (NormMeasure::Quadrature { points }, AnalyticSystem::TorusRotation { .. }) => {
                (0..points).map(|j| j as f64 / points as f64).collect()
            }
            (NormMeasure::Quadrature { points }, AnalyticSystem::LinearContraction { .. }) => {
                (0..points).map(|j| -1.0 + (2 * j + 1) as f64 / points as f64).collect()
            }
            (NormMeasure::HeldOut { points }, AnalyticSystem::TorusRotation { alpha }) => {
                let x0: f64 = derive_rng(seed, "koopman_heldout", 0).random();
                torus_orbit(alpha, x0, points)
            }
            (NormMeasure::HeldOut { points }, AnalyticSystem::LinearContraction { .. }) => {
                let mut rng = derive_rng(seed, "koopman_heldout", 0);
                (0..points).map(|_| rng.random_range(-1.0..1.0)).collect()
            }
        }
    }

    fn size(&self) -> usize {
        match *self {
            NormMeasure::Quadrature { points } | NormMeasure::HeldOut { points } => points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub system: AnalyticSystem,
    pub family: BasisFamily,
    /// Basis orders (see `BasisFamily`).
    pub orders: Vec<usize>,
    /// Numbers of one-step training pairs.
    pub sample_sizes: Vec<usize>,
    pub observable: Observable,
    pub k: u32,
    #[serde(default)]
    pub measure: NormMeasure,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    /// Basis size.
    pub n: usize,
    pub order: usize,
    pub m: usize,
    pub k: u32,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub total: f64,
    pub term3_realized: f64,
    pub rank: usize,
}

impl DecompositionRow {
    /// `total <= term1 + term2 + term3 + tol`.
    pub fn triangle_holds(&self, tol: f64) -> bool {
        self.total <= self.term1 + self.term2 + self.term3 + tol
            && self.total <= self.term1 + self.term2 + self.term3_realized + tol
    }
}

fn rms(v: &Array1<f64>) -> f64 {
    (v.mapv(|a| a * a).sum() / v.len() as f64).sqrt()
}

fn column(xs: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("length matches")
}

/// Training pairs `(x, F(x))`: one trajectory on the torus, i.i.d.
/// `U[-1, 1]` starts for the contraction (whose orbits collapse).
fn training_pairs(system: &AnalyticSystem, m: usize, seed: u64, order: usize) -> (Array2<f64>, Array2<f64>) {
    let mut rng = derive_rng(seed, &format!("koopman_{order}"), m as u64);
    let xs: Vec<f64> = match *system {
        AnalyticSystem::TorusRotation { alpha } => torus_orbit(alpha, rng.random(), m + 1),
        AnalyticSystem::LinearContraction { .. } => (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let x: Vec<f64> = xs.iter().take(m).copied().collect();
    let y: Vec<f64> = if system.is_torus() {
        xs[1..].to_vec()
    } else {
        x.iter().map(|&v| system.flow(v, 1)).collect()
    };
    (column(&x), column(&y))
}

struct Truth {
    basis: ObservableBasis,
    c_pi: Array1<f64>,
    /// `(A_N^T)^K c_Pi`.
    galerkin_coeffs: Array1<f64>,
    psi_pts: Array2<f64>,
    /// `g(F^K x)`, `(Pi g)(F^K x)` over the measure points.
    g_pushed: Array1<f64>,
    pi_g_pushed: Array1<f64>,
    trunc_norm: f64,
}

fn truth(config: &SweepConfig, order: usize, pts: &[f64]) -> Result<Truth, KoopmanError> {
    let sys = config.system;
    let basis = config.family.build(&sys, order)?;
    let x = column(pts);
    let fx = column(&pts.iter().map(|&p| sys.flow(p, 1)).collect::<Vec<_>>());
    let fkx = column(&pts.iter().map(|&p| sys.flow(p, config.k)).collect::<Vec<_>>());
    let q = pts.len() as f64;
    let psi = basis.psi_matrix(x.view());
    let psi_f = basis.psi_matrix(fx.view());
    let psi_fk = basis.psi_matrix(fkx.view());
    let (ginv, _) = pinv(&(psi.dot(&psi.t()) / q), RCOND);
    let g = Array1::from_iter(pts.iter().map(|&p| config.observable.eval(p)));
    let c_pi = ginv.dot(&(psi.dot(&g) / q));
    let a_n = (psi_f.dot(&psi.t()) / q).dot(&ginv);
    let galerkin_coeffs = matrix_power(&a_n.t().to_owned(), config.k).dot(&c_pi);
    let pi_g = psi.t().dot(&c_pi);
    let trunc_norm = rms(&(&g - &pi_g));
    let g_pushed = Array1::from_iter(pts.iter().map(|&p| config.observable.eval(sys.flow(p, config.k))));
    let pi_g_pushed = psi_fk.t().dot(&c_pi);
    Ok(Truth {
        basis,
        c_pi,
        galerkin_coeffs,
        psi_pts: psi,
        g_pushed,
        pi_g_pushed,
        trunc_norm,
    })
}

fn cell(
    config: &SweepConfig,
    truth: &Truth,
    order: usize,
    m: usize,
) -> Result<DecompositionRow, KoopmanError> {
    let (x, y) = training_pairs(&config.system, m, config.seed, order);
    let est = edmd_fit(x.view(), y.view(), &truth.basis, 1)?;
    let est_coeffs = k_step(&est, truth.c_pi.view(), config.k)?;
    let est_vals = truth.psi_pts.t().dot(&est_coeffs);
    let gal_vals = truth.psi_pts.t().dot(&truth.galerkin_coeffs);
    Ok(DecompositionRow {
        n: truth.basis.size(),
        order,
        m,
        k: config.k,
        term1: rms(&(&est_vals - &gal_vals)),
        term2: rms(&(&gal_vals - &truth.pi_g_pushed)),
        term3: koopman_norm(&config.system).powi(config.k as i32) * truth.trunc_norm,
        total: rms(&(&est_vals - &truth.g_pushed)),
        term3_realized: rms(&(&truth.pi_g_pushed - &truth.g_pushed)),
        rank: est.rank,
    })
}

/// One row per `(order, m)` in `orders x sample_sizes` order. Cells run in
/// parallel; each draws its samples from its own seeded stream.
pub fn error_decomposition(config: &SweepConfig) -> Result<Vec<DecompositionRow>, KoopmanError> {
    config.system.validate()?;
    if config.orders.is_empty() || config.sample_sizes.is_empty() {
        return Err(KoopmanError::InvalidArgument("empty sweep".into()));
    }
    if config.sample_sizes.contains(&0) {
        return Err(KoopmanError::EmptySamples);
    }
    if config.measure.size() == 0 {
        return Err(KoopmanError::InvalidArgument("measure needs at least one point".into()));
    }
    let pts = config.measure.points(&config.system, config.seed);
    let truths = config
        .orders
        .par_iter()
        .map(|&order| truth(config, order, &pts))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> = (0..config.orders.len())
        .flat_map(|i| config.sample_sizes.iter().map(move |&m| (i, m)))
        .collect();
    cells
        .par_iter()
        .map(|&(i, m)| cell(config, &truths[i], config.orders[i], m))
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[DecompositionRow]) -> Result<(), KoopmanError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "M", "K", "term1", "term2", "term3", "total", "term3_realized", "order", "rank"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            r.k.to_string(),
            format!("{:e}", r.term1),
            format!("{:e}", r.term2),
            format!("{:e}", r.term3),
            format!("{:e}", r.total),
            format!("{:e}", r.term3_realized),
            r.order.to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Log-log plot of each term and the total against `M`, one set of curves
/// per basis size.
pub fn write_sweep_svg(path: &Path, rows: &[DecompositionRow], title: &str) -> Result<(), KoopmanError> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut series = Vec::new();
    for n in sizes {
        let sel: Vec<&DecompositionRow> = rows.iter().filter(|r| r.n == n).collect();
        let terms: [(&str, fn(&DecompositionRow) -> f64); 4] = [
            ("term1", |r| r.term1),
            ("term2", |r| r.term2),
            ("term3", |r| r.term3),
            ("total", |r| r.total),
        ];
        for (name, get) in terms {
            series.push(Series::new(
                format!("{name} N={n}"),
                sel.iter().map(|r| (r.m as f64, get(r))).collect(),
            ));
        }
    }
    let plot = LinePlot {
        title: title.to_string(),
        x_label: "M (samples)".into(),
        y_label: "L2 error".into(),
        log_x: true,
        log_y: true,
        series,
    };
    std::fs::write(path, plot.to_svg())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_config(observable: Observable, family: BasisFamily, orders: Vec<usize>) -> SweepConfig {
        SweepConfig {
            system: AnalyticSystem::TorusRotation {
                alpha: std::f64::consts::SQRT_2 - 1.0,
            },
            family,
            orders,
            sample_sizes: vec![100, 1000],
            observable,
            k: 3,
            measure: NormMeasure::default(),
            seed: 0,
        }
    }

    #[test]
    fn in_span_torus_has_only_estimation_error() {
        let rows = error_decomposition(&torus_config(Observable::Cos { freq: 1 }, BasisFamily::Fourier, vec![1])).unwrap();
        for r in rows {
            assert!(r.term2 < 1e-12 && r.term3 < 1e-12, "{r:?}");
            assert!((r.total - r.term1).abs() < 1e-10);
            assert!(r.total < 1e-8);
        }
    }

    #[test]
    fn out_of_span_truncation_is_half_root() {
        let rows = error_decomposition(&torus_config(Observable::Cos { freq: 2 }, BasisFamily::Fourier, vec![1])).unwrap();
        for r in &rows {
            assert!((r.term3 - 0.5f64.sqrt()).abs() < 1e-10);
            assert!(r.triangle_holds(1e-9));
        }
        assert_eq!(rows[0].term3, rows[1].term3);
    }

    #[test]
    fn contraction_monomials_are_invariant() {
        let config = SweepConfig {
            system: AnalyticSystem::LinearContraction { rho: 0.8 },
            family: BasisFamily::Monomial,
            orders: vec![3],
            sample_sizes: vec![50],
            observable: Observable::Power { exponent: 2 },
            k: 4,
            measure: NormMeasure::Quadrature { points: 20000 },
            seed: 1,
        };
        let r = &error_decomposition(&config).unwrap()[0];
        assert!(r.total < 1e-9 && r.term2 < 1e-9 && r.term3 < 1e-9, "{r:?}");
    }

    #[test]
    fn contraction_truncation_uses_operator_norm() {
        let config = SweepConfig {
            system: AnalyticSystem::LinearContraction { rho: 0.5 },
            family: BasisFamily::Monomial,
            orders: vec![1],
            sample_sizes: vec![200],
            observable: Observable::Power { exponent: 3 },
            k: 2,
            measure: NormMeasure::Quadrature { points: 20000 },
            seed: 2,
        };
        let r = &error_decomposition(&config).unwrap()[0];
        assert!(r.term3_realized <= r.term3);
        assert!(r.triangle_holds(1e-9));
    }

    #[test]
    fn held_out_measure_is_supported() {
        let mut c = torus_config(Observable::Sin { freq: 2 }, BasisFamily::Fourier, vec![1, 2]);
        c.measure = NormMeasure::HeldOut { points: 5000 };
        let rows = error_decomposition(&c).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.triangle_holds(1e-9)));
        assert!(rows[2].term3 < 1e-10);
    }

    #[test]
    fn noisy_drift_is_refused() {
        let spec = SynthSystemSpec::noisy_drift(4, 8, 0);
        assert!(matches!(AnalyticSystem::from_spec(&spec), Err(KoopmanError::UnknownSystem(_))));
        let spec = SynthSystemSpec::torus(0.3, 0);
        assert_eq!(
            AnalyticSystem::from_spec(&spec).unwrap(),
            AnalyticSystem::TorusRotation { alpha: 0.3 }
        );
    }

    #[test]
    fn sweep_is_deterministic_and_csv_has_header() {
        let c = torus_config(
            Observable::Cos { freq: 1 },
            BasisFamily::Activation { scale: 1.0, seed: 3 },
            vec![6],
        );
        let a = error_decomposition(&c).unwrap();
        assert_eq!(a, error_decomposition(&c).unwrap());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,M,K,term1,term2,term3,total"));
        assert_eq!(text.lines().count(), 3);
    }
}
