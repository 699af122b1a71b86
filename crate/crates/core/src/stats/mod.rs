//! R², moving-block bootstrap, permutation tests and the comparison and
//! aggregation rules built on top of them.

mod bootstrap;
mod combine;
mod compare;
mod permutation;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::probes::ProbeError;

pub use bootstrap::{block_bootstrap, block_length, bootstrap_indices, bootstrap_replicates, BootstrapConfig};
pub use combine::{aggregate_overall_p, CombinedP};
pub use compare::{compare_one_way, compare_two_sided, LevelOutcome, OneWayComparison, TwoSidedComparison, WinTally, Winner};
pub use permutation::{permutation_p_value, permutation_test, PermutationOutcome};

/// Confidence levels reported by default.
pub const DEFAULT_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("shape mismatch: targets {targets:?} vs predictions {predictions:?}")]
    ShapeMismatch {
        targets: (usize, usize),
        predictions: (usize, usize),
    },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("R² undefined: targets have zero total variance")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// How per-dimension R² values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Aggregation {
    /// `1 - SSE_total / SST_total` over all cells.
    #[default]
    VarianceWeighted,
    /// Plain mean of per-dimension R² (dimensions with zero variance skipped).
    UniformAverage,
}

/// Variance-weighted multi-output R².
pub fn r2_score(y: ArrayView2<f64>, yhat: ArrayView2<f64>) -> Result<f64, StatsError> {
    r2_score_with(y, yhat, R2Aggregation::VarianceWeighted)
}

pub fn r2_score_with(y: ArrayView2<f64>, yhat: ArrayView2<f64>, agg: R2Aggregation) -> Result<f64, StatsError> {
    if y.dim() != yhat.dim() {
        return Err(StatsError::ShapeMismatch {
            targets: y.dim(),
            predictions: yhat.dim(),
        });
    }
    if y.nrows() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: y.nrows() });
    }
    let mean = y.mean_axis(Axis(0)).expect("non-empty");
    let mut sse = vec![0.0; y.ncols()];
    let mut sst = vec![0.0; y.ncols()];
    for (yr, pr) in y.rows().into_iter().zip(yhat.rows()) {
        for j in 0..y.ncols() {
            let e = yr[j] - pr[j];
            let c = yr[j] - mean[j];
            sse[j] += e * e;
            sst[j] += c * c;
        }
    }
    match agg {
        R2Aggregation::VarianceWeighted => {
            let total: f64 = sst.iter().sum();
            if !(total > 0.0) {
                return Err(StatsError::ZeroVariance);
            }
            Ok(1.0 - sse.iter().sum::<f64>() / total)
        }
        R2Aggregation::UniformAverage => {
            let per: Vec<f64> = sse
                .iter()
                .zip(&sst)
                .filter(|(_, &t)| t > 0.0)
                .map(|(e, t)| 1.0 - e / t)
                .collect();
            if per.is_empty() {
                return Err(StatsError::ZeroVariance);
            }
            Ok(per.iter().sum::<f64>() / per.len() as f64)
        }
    }
}

/// Two-sided standard-normal critical value for a confidence level in (0, 1).
pub fn z_for_level(level: f64) -> f64 {
    standard_normal().inverse_cdf(0.5 + level / 2.0)
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub(crate) fn check_levels(levels: &[f64]) -> Result<(), StatsError> {
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(StatsError::InvalidArgument(format!(
            "confidence levels must lie in (0, 1), got {levels:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Point R² with its bootstrap spread and optional permutation p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub r2: f64,
    pub se: f64,
    pub intervals: Vec<ConfidenceInterval>,
    pub n: usize,
    pub n_reps: usize,
    pub block_length: usize,
    pub p_value: Option<f64>,
    pub n_permutations: Option<usize>,
}

impl StatReport {
    /// Report with symmetric normal intervals `r2 +- z * se`.
    pub fn from_point_se(r2: f64, se: f64, levels: &[f64], n: usize, n_reps: usize, block_length: usize) -> Self {
        let intervals = levels
            .iter()
            .map(|&level| {
                let z = z_for_level(level);
                ConfidenceInterval {
                    level,
                    lower: r2 - z * se,
                    upper: r2 + z * se,
                }
            })
            .collect();
        StatReport {
            r2,
            se,
            intervals,
            n,
            n_reps,
            block_length,
            p_value: None,
            n_permutations: None,
        }
    }

    pub fn interval(&self, level: f64) -> Option<ConfidenceInterval> {
        self.intervals.iter().copied().find(|c| (c.level - level).abs() < 1e-9)
    }

    /// Interval at `level`, derived from the SE when not stored.
    pub(crate) fn interval_or_derive(&self, level: f64) -> ConfidenceInterval {
        self.interval(level).unwrap_or_else(|| {
            let z = z_for_level(level);
            ConfidenceInterval {
                level,
                lower: self.r2 - z * self.se,
                upper: self.r2 + z * self.se,
            }
        })
    }
}
