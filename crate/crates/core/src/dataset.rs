//! Trajectory datasets: on-disk format, validation, pooling, transition
//! pairing and chronological splitting.
//!
//! A dataset directory holds a `manifest.json` plus one sub-directory per
//! episode containing little-endian `f32` streams:
//!
//! ```text
//! manifest.json
//! <episode id>/patches.f32      row-major [T, N, d]
//! <episode id>/act_<layer>.f32  row-major [T, A_layer]
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type LayerId = i64;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCHES_FILE: &str = "patches.f32";

pub fn activation_file(layer: LayerId) -> String {
    format!("act_{layer}.f32")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse manifest {path}: {source}")]
    ManifestParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("shape mismatch in {path}: manifest implies {expected} bytes, file has {actual}")]
    ShapeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("non-finite value in episode {episode}, step {step}, stream {stream} (component {component})")]
    NonFinite {
        episode: String,
        step: usize,
        stream: String,
        component: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("chronological split needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEpisode {
    pub id: String,
    pub length: usize,
}

/// The JSON manifest, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub embed_dim: usize,
    pub patch_count: usize,
    pub layers: Vec<LayerId>,
    pub activation_dims: BTreeMap<String, usize>,
    pub episodes: Vec<ManifestEpisode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub length: usize,
    /// Row-major `[T, N, d]`.
    pub patches: Vec<f32>,
    /// Row-major `[T, A_layer]` per layer.
    pub activations: BTreeMap<LayerId, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub name: String,
    pub embed_dim: usize,
    pub patch_count: usize,
    pub layers: Vec<LayerId>,
    pub activation_dims: BTreeMap<LayerId, usize>,
    pub episodes: Vec<Episode>,
}

impl TrajectoryDataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.name.clone(),
            embed_dim: self.embed_dim,
            patch_count: self.patch_count,
            layers: self.layers.clone(),
            activation_dims: self
                .activation_dims
                .iter()
                .map(|(l, a)| (l.to_string(), *a))
                .collect(),
            episodes: self
                .episodes
                .iter()
                .map(|e| ManifestEpisode {
                    id: e.id.clone(),
                    length: e.length,
                })
                .collect(),
        }
    }

    pub fn max_episode_length(&self) -> usize {
        self.episodes.iter().map(|e| e.length).max().unwrap_or(0)
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.length).sum()
    }

    /// Check shapes and finiteness of everything held in memory.
    pub fn validate(&self) -> Result<(), DatasetError> {
        validate_header(
            self.embed_dim,
            self.patch_count,
            &self.layers,
            &self.activation_dims,
        )?;
        let mut seen = HashSet::new();
        for ep in &self.episodes {
            validate_episode_id(&ep.id)?;
            if !seen.insert(ep.id.as_str()) {
                return Err(DatasetError::InvalidManifest(format!(
                    "duplicate episode id {:?}",
                    ep.id
                )));
            }
            if ep.length == 0 {
                return Err(DatasetError::InvalidManifest(format!(
                    "episode {:?} has length 0",
                    ep.id
                )));
            }
            let row = self.patch_count * self.embed_dim;
            if ep.patches.len() != ep.length * row {
                return Err(DatasetError::InvalidArgument(format!(
                    "episode {:?}: patches hold {} values, expected {}",
                    ep.id,
                    ep.patches.len(),
                    ep.length * row
                )));
            }
            check_finite(&ep.id, "patches", &ep.patches, row)?;
            for layer in &self.layers {
                let dim = self.activation_dims[layer];
                let acts = ep.activations.get(layer).ok_or_else(|| {
                    DatasetError::InvalidArgument(format!(
                        "episode {:?} has no activations for layer {layer}",
                        ep.id
                    ))
                })?;
                if acts.len() != ep.length * dim {
                    return Err(DatasetError::InvalidArgument(format!(
                        "episode {:?}: layer {layer} holds {} values, expected {}",
                        ep.id,
                        acts.len(),
                        ep.length * dim
                    )));
                }
                check_finite(&ep.id, &format!("act_{layer}"), acts, dim)?;
            }
        }
        Ok(())
    }

    /// Mean-pooled embeddings of one episode, `[T, d]`.
    pub fn pooled_embeddings(&self, episode: usize) -> Array2<f64> {
        let ep = &self.episodes[episode];
        let (n, d) = (self.patch_count, self.embed_dim);
        let mut out = Array2::<f64>::zeros((ep.length, d));
        for t in 0..ep.length {
            let frame = patch_frame(ep, t, n, d);
            let pooled = mean_pool(frame.view()).expect("patch_count validated > 0");
            out.row_mut(t).assign(&pooled);
        }
        out
    }

    /// Patch matrix `[N, d]` for step `t` of an episode.
    pub fn patches_at(&self, episode: usize, t: usize) -> Array2<f64> {
        patch_frame(
            &self.episodes[episode],
            t,
            self.patch_count,
            self.embed_dim,
        )
    }

    /// Activations of one layer for one episode, `[T, A]`.
    pub fn activations(&self, episode: usize, layer: LayerId) -> Option<Array2<f64>> {
        let ep = &self.episodes[episode];
        let dim = *self.activation_dims.get(&layer)?;
        let raw = ep.activations.get(&layer)?;
        Some(Array2::from_shape_fn((ep.length, dim), |(t, j)| {
            f64::from(raw[t * dim + j])
        }))
    }
}

fn patch_frame(ep: &Episode, t: usize, n: usize, d: usize) -> Array2<f64> {
    let start = t * n * d;
    Array2::from_shape_fn((n, d), |(i, j)| f64::from(ep.patches[start + i * d + j]))
}

fn check_finite(episode: &str, stream: &str, values: &[f32], row: usize) -> Result<(), DatasetError> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(DatasetError::NonFinite {
            episode: episode.to_string(),
            step: pos / row.max(1),
            stream: stream.to_string(),
            component: pos % row.max(1),
        });
    }
    Ok(())
}

fn validate_episode_id(id: &str) -> Result<(), DatasetError> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']) {
        return Err(DatasetError::InvalidManifest(format!(
            "episode id {id:?} is not a valid directory name"
        )));
    }
    Ok(())
}

fn validate_header(
    embed_dim: usize,
    patch_count: usize,
    layers: &[LayerId],
    activation_dims: &BTreeMap<LayerId, usize>,
) -> Result<(), DatasetError> {
    if embed_dim == 0 {
        return Err(DatasetError::InvalidManifest("embed_dim must be positive".into()));
    }
    if patch_count == 0 {
        return Err(DatasetError::InvalidManifest("patch_count must be positive".into()));
    }
    let mut seen = HashSet::new();
    for layer in layers {
        if !seen.insert(*layer) {
            return Err(DatasetError::InvalidManifest(format!("layer {layer} listed twice")));
        }
        match activation_dims.get(layer) {
            Some(0) => {
                return Err(DatasetError::InvalidManifest(format!(
                    "layer {layer} has activation dim 0"
                )))
            }
            None => {
                return Err(DatasetError::InvalidManifest(format!(
                    "layer {layer} missing from activation_dims"
                )))
            }
            Some(_) => {}
        }
    }
    if activation_dims.len() != layers.len() {
        return Err(DatasetError::InvalidManifest(
            "activation_dims has entries for undeclared layers".into(),
        ));
    }
    Ok(())
}

fn read_f32_stream(path: &Path, expected_len: usize) -> Result<Vec<f32>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = 4 * expected_len as u64;
    if bytes.len() as u64 != expected {
        return Err(DatasetError::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_stream(path: &Path, values: &[f32]) -> Result<(), DatasetError> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Parse and sanity-check a manifest without touching the binary streams.
pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(DatasetError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| DatasetError::ManifestParse { path, source })
}

/// Load and fully validate a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TrajectoryDataset, DatasetError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut activation_dims = BTreeMap::new();
    for (key, dim) in &manifest.activation_dims {
        let layer: LayerId = key.parse().map_err(|_| {
            DatasetError::InvalidManifest(format!("activation_dims key {key:?} is not an integer"))
        })?;
        activation_dims.insert(layer, *dim);
    }
    validate_header(
        manifest.embed_dim,
        manifest.patch_count,
        &manifest.layers,
        &activation_dims,
    )?;
    if manifest.episodes.is_empty() {
        return Err(DatasetError::InvalidManifest("no episodes".into()));
    }

    let row = manifest.patch_count * manifest.embed_dim;
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for me in &manifest.episodes {
        validate_episode_id(&me.id)?;
        if me.length == 0 {
            return Err(DatasetError::InvalidManifest(format!(
                "episode {:?} has length 0",
                me.id
            )));
        }
        let ep_dir = dir.join(&me.id);
        let patches = read_f32_stream(&ep_dir.join(PATCHES_FILE), me.length * row)?;
        let mut activations = BTreeMap::new();
        for layer in &manifest.layers {
            let dim = activation_dims[layer];
            let acts = read_f32_stream(&ep_dir.join(activation_file(*layer)), me.length * dim)?;
            activations.insert(*layer, acts);
        }
        episodes.push(Episode {
            id: me.id.clone(),
            length: me.length,
            patches,
            activations,
        });
    }

    let ds = TrajectoryDataset {
        name: manifest.name,
        embed_dim: manifest.embed_dim,
        patch_count: manifest.patch_count,
        layers: manifest.layers,
        activation_dims,
        episodes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset in the directory format read by [`load_dataset`].
pub fn write_dataset(ds: &TrajectoryDataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    ds.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&ds.manifest()).expect("manifest serializes");
    text.push('\n');
    let mut f = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    f.write_all(text.as_bytes()).map_err(io_err(&manifest_path))?;
    for ep in &ds.episodes {
        let ep_dir = dir.join(&ep.id);
        fs::create_dir_all(&ep_dir).map_err(io_err(&ep_dir))?;
        write_f32_stream(&ep_dir.join(PATCHES_FILE), &ep.patches)?;
        for (layer, acts) in &ep.activations {
            write_f32_stream(&ep_dir.join(activation_file(*layer)), acts)?;
        }
    }
    Ok(())
}

/// Component-wise mean over the rows of an `[N, d]` patch matrix.
pub fn mean_pool(patches: ArrayView2<f64>) -> Result<Array1<f64>, DatasetError> {
    let n = patches.nrows();
    if n == 0 {
        return Err(DatasetError::InvalidArgument("mean_pool needs at least one patch".into()));
    }
    Ok(patches.sum_axis(Axis(0)) / n as f64)
}

/// Which stream the probe reads at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Layer activations `a_t` (reported as "Regular").
    Activations,
    /// Pooled embedding `e_t`.
    Embeddings,
    /// `[a_t, e_t]` concatenated.
    Joint,
}

impl FeatureMode {
    pub fn needs_activations(self) -> bool {
        !matches!(self, FeatureMode::Embeddings)
    }

    /// Label used in probe-type strings.
    pub fn label(self) -> &'static str {
        match self {
            FeatureMode::Activations => "Regular",
            FeatureMode::Embeddings => "Embedding",
            FeatureMode::Joint => "Joint",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "Regular" => Some(FeatureMode::Activations),
            "Embedding" => Some(FeatureMode::Embeddings),
            "Joint" => Some(FeatureMode::Joint),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Activations => "activations",
            FeatureMode::Embeddings => "embeddings",
            FeatureMode::Joint => "joint",
        })
    }
}

/// One supervised pair, materialized from a [`TransitionSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub episode_id: String,
    pub t: usize,
    pub k: usize,
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOrigin {
    pub episode: usize,
    pub t: usize,
}

/// Column-stacked transition samples in (episode, t) order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub k: usize,
    pub mode: FeatureMode,
    pub layer: Option<LayerId>,
    /// `[n, p]`
    pub features: Array2<f64>,
    /// `[n, d]`, `e_{t+K} - e_t`.
    pub targets: Array2<f64>,
    /// `[n, d]`, pooled `e_t`.
    pub base_embeddings: Array2<f64>,
    pub origins: Vec<SampleOrigin>,
    pub episode_ids: Arc<[String]>,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn sample(&self, i: usize) -> TransitionSample {
        let o = self.origins[i];
        TransitionSample {
            episode_id: self.episode_ids[o.episode].clone(),
            t: o.t,
            k: self.k,
            features: self.features.row(i).to_vec(),
            target: self.targets.row(i).to_vec(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = TransitionSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Contiguous index range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TransitionSet {
        TransitionSet {
            k: self.k,
            mode: self.mode,
            layer: self.layer,
            features: self.features.slice(s![start..end, ..]).to_owned(),
            targets: self.targets.slice(s![start..end, ..]).to_owned(),
            base_embeddings: self.base_embeddings.slice(s![start..end, ..]).to_owned(),
            origins: self.origins[start..end].to_vec(),
            episode_ids: Arc::clone(&self.episode_ids),
        }
    }

    /// Same samples with the target rows replaced.
    pub fn with_targets(&self, targets: Array2<f64>) -> TransitionSet {
        assert_eq!(targets.dim(), self.targets.dim());
        TransitionSet {
            targets,
            ..self.clone()
        }
    }
}

/// Pair every `(episode, t)` with `t + K < T` into a supervised sample.
///
/// `layer` is required for the activation-reading modes. A horizon at or
/// beyond every episode length yields an empty set and a warning.
pub fn compute_transitions(
    ds: &TrajectoryDataset,
    k: usize,
    layer: Option<LayerId>,
    mode: FeatureMode,
) -> Result<TransitionSet, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidArgument("horizon K must be >= 1".into()));
    }
    let act_dim = if mode.needs_activations() {
        let layer = layer.ok_or_else(|| {
            DatasetError::InvalidArgument(format!("mode {mode} needs a layer"))
        })?;
        *ds.activation_dims.get(&layer).ok_or_else(|| {
            DatasetError::InvalidArgument(format!("layer {layer} not present in dataset"))
        })?
    } else {
        0
    };
    let d = ds.embed_dim;
    let p = match mode {
        FeatureMode::Activations => act_dim,
        FeatureMode::Embeddings => d,
        FeatureMode::Joint => act_dim + d,
    };
    let n: usize = ds.episodes.iter().map(|e| e.length.saturating_sub(k)).sum();
    if n == 0 {
        log::warn!(
            "K = {k} is not below any episode length (max {}); no transitions produced",
            ds.max_episode_length()
        );
    }

    let mut features = Array2::<f64>::zeros((n, p));
    let mut targets = Array2::<f64>::zeros((n, d));
    let mut base = Array2::<f64>::zeros((n, d));
    let mut origins = Vec::with_capacity(n);
    let mut row = 0;
    for (ei, ep) in ds.episodes.iter().enumerate() {
        if ep.length <= k {
            continue;
        }
        let pooled = ds.pooled_embeddings(ei);
        let acts = if mode.needs_activations() {
            ds.activations(ei, layer.expect("checked above"))
        } else {
            None
        };
        for t in 0..ep.length - k {
            let et = pooled.row(t);
            targets.row_mut(row).assign(&(&pooled.row(t + k) - &et));
            base.row_mut(row).assign(&et);
            let mut frow = features.row_mut(row);
            match mode {
                FeatureMode::Activations => {
                    frow.assign(&acts.as_ref().expect("activations").row(t));
                }
                FeatureMode::Embeddings => frow.assign(&et),
                FeatureMode::Joint => {
                    frow.slice_mut(s![..act_dim])
                        .assign(&acts.as_ref().expect("activations").row(t));
                    frow.slice_mut(s![act_dim..]).assign(&et);
                }
            }
            origins.push(SampleOrigin { episode: ei, t });
            row += 1;
        }
    }
    Ok(TransitionSet {
        k,
        mode,
        layer: if mode.needs_activations() { layer } else { None },
        features,
        targets,
        base_embeddings: base,
        origins,
        episode_ids: ds.episodes.iter().map(|e| e.id.clone()).collect(),
    })
}

/// Train / validation / test fractions. The split is always chronological.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    /// `(n_train, n_val, n_test)`: floor for train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.7 * 100 = 69.999...
        let floor = |frac: f64| ((n as f64) * frac + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidArgument(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Contiguous prefix / middle / suffix split by sample index.
pub fn chronological_split(
    samples: &TransitionSet,
    spec: &SplitSpec,
) -> Result<(TransitionSet, TransitionSet, TransitionSet), DatasetError> {
    spec.validate()?;
    let n = samples.len();
    if n < 3 {
        return Err(DatasetError::TooFewSamples(n));
    }
    let (tr, va, _) = spec.sizes(n);
    Ok((
        samples.slice(0, tr),
        samples.slice(tr, tr + va),
        samples.slice(tr + va, n),
    ))
}
