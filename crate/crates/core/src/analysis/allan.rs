use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataset::{compute_transitions, FeatureMode, TrajectoryDataset};
use crate::plot::{LinePlot, Series};

/// Powers of two `1, 2, 4, ...` not exceeding `n / 4`.
pub fn default_taus(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut tau = 1;
    while tau <= n / 4 {
        out.push(tau);
        tau *= 2;
    }
    out
}

fn check_taus(n: usize, taus: &[usize]) -> Result<(), AnalysisError> {
    let Some(&min) = taus.iter().min() else {
        return Err(AnalysisError::InvalidArgument("no cluster sizes".into()));
    };
    if min == 0 {
        return Err(AnalysisError::InvalidArgument("cluster size must be >= 1".into()));
    }
    if n < 4 * min {
        return Err(AnalysisError::InvalidArgument(format!(
            "series of length {n} is shorter than 4 x {min}"
        )));
    }
    if let Some(&t) = taus.iter().find(|&&t| 2 * t > n) {
        return Err(AnalysisError::InvalidArgument(format!("cluster size {t} exceeds n/2 = {}", n / 2)));
    }
    Ok(())
}

/// Sum of squared second differences of the phase and their count.
fn avar_sums(series: &[f64], tau: usize) -> (f64, usize) {
    let n = series.len();
    if 2 * tau > n {
        return (0.0, 0);
    }
    let mut phase = Vec::with_capacity(n + 1);
    phase.push(0.0);
    let mut acc = 0.0;
    for &y in series {
        acc += y;
        phase.push(acc);
    }
    let terms = n - 2 * tau + 1;
    let sum = (0..terms)
        .map(|i| {
            let d = phase[i + 2 * tau] - 2.0 * phase[i + tau] + phase[i];
            d * d
        })
        .sum();
    (sum, terms)
}

fn avar_from_sums(sum: f64, terms: usize, tau: usize) -> f64 {
    sum / (2.0 * (tau * tau) as f64 * terms as f64)
}

/// Overlapping Allan variance of a rate series at each cluster size `tau`:
///
/// ```text
/// AVAR(tau) = sum_i (x_{i+2tau} - 2 x_{i+tau} + x_i)^2 / (2 tau^2 (n - 2tau + 1))
/// ```
///
/// with `x` the running sum of the series.
pub fn allan_variance(series: &[f64], taus: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    check_taus(series.len(), taus)?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let (s, c) = avar_sums(series, tau);
            avar_from_sums(s, c, tau)
        })
        .collect())
}

pub fn allan_deviation(series: &[f64], taus: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    Ok(allan_variance(series, taus)?.into_iter().map(f64::sqrt).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanReport {
    pub k: usize,
    pub taus: Vec<usize>,
    /// `[dim][tau]`.
    pub adev: Vec<Vec<f64>>,
    /// RMS over dimensions of the per-dimension deviation, per `tau`.
    pub rms_adev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub dataset: String,
    pub k: usize,
    /// RMS of all transition components.
    pub rms_total: f64,
    /// White-noise floor `ADEV(1)`, capped at `rms_total`.
    pub rms_noise: f64,
    /// `1 - rms_noise / rms_total`.
    pub signal_fraction: f64,
    pub allan: AllanReport,
}

/// Allan analysis of every transition component, per horizon. Each
/// episode contributes its own overlapping terms; terms are pooled across
/// episodes before normalising.
pub fn transition_noise_profile(ds: &TrajectoryDataset, ks: &[usize]) -> Result<Vec<NoiseProfile>, AnalysisError> {
    if ks.is_empty() {
        return Err(AnalysisError::InvalidArgument("empty K list".into()));
    }
    ks.iter().map(|&k| noise_profile_one(ds, k)).collect()
}

fn noise_profile_one(ds: &TrajectoryDataset, k: usize) -> Result<NoiseProfile, AnalysisError> {
    let set = compute_transitions(ds, k, None, FeatureMode::Embeddings)?;
    if set.is_empty() {
        return Err(AnalysisError::Empty(format!("no transitions at K = {k}")));
    }
    let d = set.target_dim();
    let rms_total = (set.targets.mapv(|v| v * v).sum() / set.targets.len() as f64).sqrt();
    if rms_total == 0.0 {
        return Err(AnalysisError::Degenerate(format!("all transitions are zero at K = {k}")));
    }
    // Episode boundaries in the stacked sample order.
    let mut bounds = vec![0];
    for i in 1..set.len() {
        if set.origins[i].episode != set.origins[i - 1].episode {
            bounds.push(i);
        }
    }
    bounds.push(set.len());
    let longest = bounds.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0);
    let taus = default_taus(longest);
    if taus.is_empty() {
        return Err(AnalysisError::InvalidArgument(format!(
            "episodes too short for Allan analysis at K = {k} (longest series {longest})"
        )));
    }
    let adev: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let col = set.targets.column(j);
            taus.iter()
                .map(|&tau| {
                    let (mut sum, mut terms) = (0.0, 0);
                    for w in bounds.windows(2) {
                        let series: Vec<f64> = col.slice(ndarray::s![w[0]..w[1]]).to_vec();
                        let (s, c) = avar_sums(&series, tau);
                        sum += s;
                        terms += c;
                    }
                    avar_from_sums(sum, terms, tau).sqrt()
                })
                .collect()
        })
        .collect();
    let rms_adev: Vec<f64> = (0..taus.len())
        .map(|i| (adev.iter().map(|a| a[i] * a[i]).sum::<f64>() / d as f64).sqrt())
        .collect();
    let rms_noise = rms_adev[0].min(rms_total);
    Ok(NoiseProfile {
        dataset: ds.name.clone(),
        k,
        rms_total,
        rms_noise,
        signal_fraction: 1.0 - rms_noise / rms_total,
        allan: AllanReport {
            k,
            taus,
            adev,
            rms_adev,
        },
    })
}

/// One row per `(K, tau)` plus the per-K summary columns.
pub fn write_noise_csv<W: Write>(out: W, profiles: &[NoiseProfile]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "K", "tau", "rms_adev", "rms_total", "rms_noise", "signal_fraction"])?;
    for p in profiles {
        for (tau, a) in p.allan.taus.iter().zip(&p.allan.rms_adev) {
            w.write_record([
                p.dataset.clone(),
                p.k.to_string(),
                tau.to_string(),
                format!("{a:.6e}"),
                format!("{:.6e}", p.rms_total),
                format!("{:.6e}", p.rms_noise),
                format!("{:.6}", p.signal_fraction),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_noise_svg(path: &Path, profiles: &[NoiseProfile]) -> Result<(), AnalysisError> {
    let plot = LinePlot {
        title: "Allan deviation of transition components".into(),
        x_label: "cluster size tau".into(),
        y_label: "RMS Allan deviation".into(),
        log_x: true,
        log_y: true,
        series: profiles
            .iter()
            .map(|p| {
                Series::new(
                    format!("K={}", p.k),
                    p.allan.taus.iter().zip(&p.allan.rms_adev).map(|(&t, &a)| (t as f64, a)).collect(),
                )
            })
            .collect(),
    };
    std::fs::write(path, plot.to_svg())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn slope(taus: &[usize], adev: &[f64]) -> f64 {
        let xs: Vec<f64> = taus.iter().map(|&t| (t as f64).ln()).collect();
        let ys: Vec<f64> = adev.iter().map(|a| a.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = derive_rng(seed, "test_white", 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_series_has_zero_deviation() {
        let adev = allan_deviation(&[3.0; 64], &default_taus(64)).unwrap();
        assert!(adev.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn white_noise_variance_at_unit_cluster() {
        let y = white(1, 20000);
        let avar = allan_variance(&y, &[1]).unwrap()[0];
        assert!((avar - 1.0).abs() < 0.05, "{avar}");
    }

    fn walk(y: &[f64]) -> Vec<f64> {
        y.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    // For unit-step random walk rates the discrete expectation is
    // AVAR(tau) = (2 tau^2 + 1) / (6 tau), which only approaches slope 1/2
    // for tau >> 1; the slope window therefore starts at tau = 2.
    #[test]
    fn random_walk_matches_discrete_expectation() {
        let taus = [1, 2, 4, 8];
        let mut mean = [0.0; 4];
        for seed in 0..20 {
            let a = allan_variance(&walk(&white(seed, 20000)), &taus).unwrap();
            for i in 0..4 {
                mean[i] += a[i] / 20.0;
            }
        }
        for (i, &tau) in taus.iter().enumerate() {
            let t = tau as f64;
            let want = (2.0 * t * t + 1.0) / (6.0 * t);
            assert!((mean[i] / want - 1.0).abs() < 0.1, "tau {tau}: {} vs {want}", mean[i]);
        }
    }

    #[test]
    fn white_and_random_walk_slopes() {
        let taus = [2, 4, 8, 16];
        for seed in 0..10 {
            let y = white(seed, 4096);
            let s = slope(&taus, &allan_deviation(&y, &taus).unwrap());
            assert!((s + 0.5).abs() < 0.1, "white slope {s}");
            let s = slope(&taus, &allan_deviation(&walk(&y), &taus).unwrap());
            assert!((s - 0.5).abs() < 0.1, "walk slope {s}");
        }
    }

    #[test]
    fn cluster_limits() {
        assert!(allan_variance(&[1.0; 10], &[6]).is_err());
        assert!(allan_variance(&[1.0; 7], &[2]).is_err());
        assert!(allan_variance(&[1.0; 8], &[2, 4]).is_ok());
        assert!(allan_variance(&[1.0; 8], &[0]).is_err());
        assert_eq!(default_taus(64), vec![1, 2, 4, 8, 16]);
        assert!(default_taus(3).is_empty());
    }
}
