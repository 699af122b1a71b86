use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedP {
    /// Fisher's combined p-value.
    pub fisher_p: f64,
    /// `-2 * sum ln p_i`.
    pub statistic: f64,
    pub dof: usize,
    /// `(max p)^k`: the chance, under independent nulls, that every test
    /// comes in at or below the largest observed p.
    pub simple_bound: f64,
    pub k: usize,
}

/// Fisher's method. The chi-square survival with `2k` degrees of freedom is
/// `exp(-x/2) * sum_{i<k} (x/2)^i / i!`, summed in log space.
pub fn aggregate_overall_p(p_values: &[f64]) -> Result<CombinedP, StatsError> {
    if p_values.is_empty() {
        return Err(StatsError::InvalidArgument("no p-values to combine".into()));
    }
    if let Some(p) = p_values.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(StatsError::InvalidArgument(format!("p-value {p} outside (0, 1]")));
    }
    let k = p_values.len();
    let statistic = -2.0 * p_values.iter().map(|p| p.ln()).sum::<f64>();
    let fisher_p = chi2_even_sf(statistic, k);
    let max_p = p_values.iter().copied().fold(0.0, f64::max);
    Ok(CombinedP {
        fisher_p,
        statistic,
        dof: 2 * k,
        simple_bound: max_p.powi(k as i32),
        k,
    })
}

/// Survival function of chi-square with `2k` degrees of freedom.
fn chi2_even_sf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let h = x / 2.0;
    let ln_h = h.ln();
    let mut terms = Vec::with_capacity(k);
    let mut ln_fact = 0.0;
    for i in 0..k {
        if i > 0 {
            ln_fact += (i as f64).ln();
        }
        terms.push(i as f64 * ln_h - ln_fact);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (lse - h).exp().min(1.0)
}
