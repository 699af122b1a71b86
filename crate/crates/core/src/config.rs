//! Run configuration: one JSON file that, together with the datasets,
//! reproduces every output of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMode, LayerId, SplitSpec};
use crate::koopman::{AnalyticSystem, BasisFamily, NormMeasure, Observable, SweepConfig};
use crate::probes::{ProbeKind, TrainConfig};
use crate::stats::DEFAULT_LEVELS;

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV: &str = "WORLDPROBE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub n_reps: usize,
    pub n_perm: usize,
    pub levels: Vec<f64>,
    /// Significance threshold for permutation tallies and one-way tests.
    pub alpha: f64,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings {
            n_reps: 400,
            n_perm: 100,
            levels: DEFAULT_LEVELS.to_vec(),
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<PathBuf>,
    pub ks: Vec<usize>,
    /// Layers to probe; empty means every layer a dataset provides.
    pub layers: Vec<LayerId>,
    pub kinds: Vec<ProbeKind>,
    pub modes: Vec<FeatureMode>,
    /// `train.seed` is ignored: each probe cell derives its own from `seed`.
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub stats: StatsSettings,
    pub output: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Convergence sweeps run by the koopman command; the two standard
    /// torus sweeps when empty.
    pub koopman: Vec<SweepConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            datasets: Vec::new(),
            ks: vec![1, 3, 10, 30],
            layers: Vec::new(),
            kinds: vec![ProbeKind::Linear, ProbeKind::Mlp],
            modes: vec![FeatureMode::Activations, FeatureMode::Embeddings, FeatureMode::Joint],
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            stats: StatsSettings::default(),
            output: PathBuf::from("run"),
            seed: 0,
            threads: None,
            koopman: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    BadSeedEnv(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// `g = cos 2 pi x` on a random-feature basis (estimation trend) and
/// `g = cos 4 pi x` on the m = 1 Fourier basis (truncation floor), both on
/// the irrational rotation `alpha = sqrt 2 - 1`.
pub fn default_koopman_sweeps(seed: u64) -> Vec<SweepConfig> {
    let system = AnalyticSystem::TorusRotation {
        alpha: std::f64::consts::SQRT_2 - 1.0,
    };
    let sample_sizes = vec![100, 1_000, 10_000, 100_000];
    vec![
        SweepConfig {
            system,
            family: BasisFamily::Activation { scale: 1.0, seed },
            orders: vec![6, 10],
            sample_sizes: sample_sizes.clone(),
            observable: Observable::Cos { freq: 1 },
            k: 1,
            measure: NormMeasure::default(),
            seed,
        },
        SweepConfig {
            system,
            family: BasisFamily::Fourier,
            orders: vec![1],
            sample_sizes,
            observable: Observable::Cos { freq: 2 },
            k: 1,
            measure: NormMeasure::default(),
            seed,
        },
    ]
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Apply `WORLDPROBE_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_seed_var(std::env::var(SEED_ENV).ok())
    }

    fn apply_seed_var(&mut self, value: Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| ConfigError::BadSeedEnv(v.clone()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive horizons");
        }
        if self.kinds.is_empty() || self.modes.is_empty() {
            return bad("kinds and modes must be non-empty");
        }
        if self.stats.n_reps < 2 {
            return bad("stats.n_reps must be at least 2");
        }
        if self.stats.n_perm < 1 {
            return bad("stats.n_perm must be at least 1");
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return bad("stats.alpha must lie in (0, 1)");
        }
        if self.stats.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("confidence levels must lie in (0, 1)");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn koopman_sweeps(&self) -> Vec<SweepConfig> {
        if self.koopman.is_empty() {
            default_koopman_sweeps(self.seed)
        } else {
            self.koopman.clone()
        }
    }
}
