//! Descriptive analyses of trajectory datasets and probe results: temporal
//! coherence of pooled embeddings, Allan variance of transition components,
//! layer x K grids of the best probe and the mean-pooling linearity check.

mod allan;
mod coherence;
mod grid;
mod linearity;

use thiserror::Error;

use crate::dataset::DatasetError;

pub use allan::{
    allan_deviation, allan_variance, default_taus, transition_noise_profile, write_noise_csv, write_noise_svg,
    AllanReport, NoiseProfile,
};
pub use coherence::{temporal_coherence, write_coherence_csv, write_coherence_svg, CoherenceCurve};
pub use grid::{layer_k_grid, write_grid_csv, write_grid_svg, GridCell, LayerKGrid};
pub use linearity::{patch_linearity_check, LinearityOutcome};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
