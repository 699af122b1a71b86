use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use super::{check_levels, standard_normal, StatReport, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneWayComparison {
    pub z: f64,
    /// Upper-tail normal p-value of `z`.
    pub p_one_sided: f64,
    /// Per level: whether the two intervals overlap.
    pub ci_overlap: Vec<(f64, bool)>,
}

impl OneWayComparison {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_one_sided < alpha
    }

    pub fn overlaps_at(&self, level: f64) -> Option<bool> {
        self.ci_overlap
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-9)
            .map(|&(_, o)| o)
    }
}

/// z-test of `R²_adv > R²_base` on bootstrap SEs, plus interval overlap at
/// each level stored in `adv`.
pub fn compare_one_way(adv: &StatReport, base: &StatReport) -> Result<OneWayComparison, StatsError> {
    let denom = (adv.se * adv.se + base.se * base.se).sqrt();
    if !(denom > 0.0) {
        return Err(StatsError::InvalidArgument("both standard errors are zero".into()));
    }
    let z = (adv.r2 - base.r2) / denom;
    let p_one_sided = standard_normal().sf(z);
    let ci_overlap = adv
        .intervals
        .iter()
        .map(|a| (a.level, a.overlaps(&base.interval_or_derive(a.level))))
        .collect();
    Ok(OneWayComparison { z, p_one_sided, ci_overlap })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    MlpWins,
    Tie,
    LinearWins,
}

impl Winner {
    pub fn swapped(self) -> Winner {
        match self {
            Winner::MlpWins => Winner::LinearWins,
            Winner::Tie => Winner::Tie,
            Winner::LinearWins => Winner::MlpWins,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub level: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedComparison {
    pub per_level: Vec<LevelOutcome>,
    /// By raw R², regardless of intervals.
    pub absolute: Winner,
}

impl TwoSidedComparison {
    pub fn at(&self, level: f64) -> Option<Winner> {
        self.per_level
            .iter()
            .find(|o| (o.level - level).abs() < 1e-9)
            .map(|o| o.winner)
    }
}

/// A side wins at a level only when the intervals are disjoint.
pub fn compare_two_sided(
    linear: &StatReport,
    mlp: &StatReport,
    levels: &[f64],
) -> Result<TwoSidedComparison, StatsError> {
    check_levels(levels)?;
    let per_level = levels
        .iter()
        .map(|&level| {
            let l = linear.interval_or_derive(level);
            let m = mlp.interval_or_derive(level);
            let winner = if m.lower > l.upper {
                Winner::MlpWins
            } else if l.lower > m.upper {
                Winner::LinearWins
            } else {
                Winner::Tie
            };
            LevelOutcome { level, winner }
        })
        .collect();
    let absolute = if mlp.r2 > linear.r2 {
        Winner::MlpWins
    } else if linear.r2 > mlp.r2 {
        Winner::LinearWins
    } else {
        Winner::Tie
    };
    Ok(TwoSidedComparison { per_level, absolute })
}

/// Win/tie/loss counts, as in an MLP-vs-linear table row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinTally {
    pub mlp_wins: usize,
    pub ties: usize,
    pub linear_wins: usize,
}

impl WinTally {
    pub fn add(&mut self, w: Winner) {
        match w {
            Winner::MlpWins => self.mlp_wins += 1,
            Winner::Tie => self.ties += 1,
            Winner::LinearWins => self.linear_wins += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.mlp_wins + self.ties + self.linear_wins
    }
}
