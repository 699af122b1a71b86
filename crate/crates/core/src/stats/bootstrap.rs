use ndarray::{ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_levels, r2_score, StatReport, StatsError, DEFAULT_LEVELS};
use crate::rng::derive_rng;

/// `max(2, floor(n^(1/3)))`.
pub fn block_length(n: usize) -> usize {
    // The guard keeps exact cubes such as 1000 from flooring to 9.
    let c = ((n as f64).cbrt() + 1e-9).floor() as usize;
    c.max(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_reps: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_reps: 400,
            levels: DEFAULT_LEVELS.to_vec(),
            seed: 0,
        }
    }
}

/// Row indices of one moving-block resample: `ceil(n/b)` block starts drawn
/// uniformly from the `n - b + 1` overlapping blocks, truncated to `n`.
pub fn bootstrap_indices(n: usize, b: usize, rng: &mut impl Rng) -> Vec<usize> {
    let starts = n - b + 1;
    let mut idx = Vec::with_capacity(n.div_ceil(b) * b);
    while idx.len() < n {
        let s = rng.random_range(0..starts);
        idx.extend(s..s + b);
    }
    idx.truncate(n);
    idx
}

/// Replicate R² values; replicates whose resample has zero target variance
/// come back as NaN.
pub fn bootstrap_replicates(
    y: ArrayView2<f64>,
    yhat: ArrayView2<f64>,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<f64>, StatsError> {
    let n = y.nrows();
    let b = block_length(n);
    if n < b {
        return Err(StatsError::TooFewSamples { need: b, got: n });
    }
    Ok((0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derive_rng(seed, "bootstrap", rep as u64);
            let idx = bootstrap_indices(n, b, &mut rng);
            let ys = y.select(Axis(0), &idx);
            let ps = yhat.select(Axis(0), &idx);
            r2_score(ys.view(), ps.view()).unwrap_or(f64::NAN)
        })
        .collect())
}

/// Moving-block bootstrap of R² with normal intervals around the point
/// estimate; SE uses Bessel's correction over the finite replicates.
pub fn block_bootstrap(
    y: ArrayView2<f64>,
    yhat: ArrayView2<f64>,
    config: &BootstrapConfig,
) -> Result<StatReport, StatsError> {
    check_levels(&config.levels)?;
    if config.n_reps < 2 {
        return Err(StatsError::InvalidArgument("n_reps must be at least 2".into()));
    }
    let n = y.nrows();
    if n < 4 {
        return Err(StatsError::TooFewSamples { need: 4, got: n });
    }
    let point = r2_score(y, yhat)?;
    let reps = bootstrap_replicates(y, yhat, config.n_reps, config.seed)?;
    let finite: Vec<f64> = reps.into_iter().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(StatsError::InvalidArgument(
            "fewer than two bootstrap replicates had defined R²".into(),
        ));
    }
    let m = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / m;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(StatReport::from_point_se(
        point,
        var.sqrt(),
        &config.levels,
        n,
        config.n_reps,
        block_length(n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn block_lengths() {
        assert_eq!(block_length(8), 2);
        assert_eq!(block_length(27), 3);
        assert_eq!(block_length(1000), 10);
        assert_eq!(block_length(1), 2);
        assert_eq!(block_length(63), 3);
        assert_eq!(block_length(64), 4);
    }

    #[test]
    fn indices_are_contiguous_blocks() {
        let mut rng = derive_rng(0, "t", 0);
        let idx = bootstrap_indices(10, 3, &mut rng);
        assert_eq!(idx.len(), 10);
        for chunk in idx.chunks(3) {
            for w in chunk.windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
            assert!(chunk[0] <= 7);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let y = Array2::from_shape_fn((50, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let p = y.mapv(|v| v + 0.5 * (v * 1.3).sin());
        let cfg = BootstrapConfig::default();
        let a = block_bootstrap(y.view(), p.view(), &cfg).unwrap();
        let b = block_bootstrap(y.view(), p.view(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.block_length, 3);
        assert!(a.se > 0.0);
    }

    #[test]
    fn too_short_series_fails() {
        let y = Array2::from_shape_fn((3, 1), |(i, _)| i as f64);
        assert!(block_bootstrap(y.view(), y.view(), &BootstrapConfig::default()).is_err());
    }
}
