//! The subcommands behind the `worldprobe` binary. Each `cmd_*` reads its
//! inputs, writes its artifacts under the run's output directory and
//! returns what it wrote so tests can inspect it without re-reading files.
//!
//! Output layout:
//!
//! ```text
//! <output>/probe/results.csv      one row per probe (dataset, K, R², SEs, hyperparameters, probe type)
//! <output>/probe/results.json
//! <output>/probe/cells.json       grid outcomes and bootstrap reports per probe
//! <output>/permtest/pvalues.csv   one row per tested probe
//! <output>/permtest/tally.csv     successes / tested by probe type and K
//! <output>/coherence/*            coherence.csv, coherence.json, coherence.svg
//! <output>/allan/*                allan.csv, allan.json, allan.svg
//! <output>/koopman/*              sweep_<i>.csv, sweep_<i>.svg, sweeps.json
//! <output>/report/*               report.json, one_way.csv, mlp_vs_linear.csv, grid_<dataset>.{csv,svg}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    layer_k_grid, patch_linearity_check, temporal_coherence, transition_noise_profile, write_coherence_csv,
    write_coherence_svg, write_grid_csv, write_grid_svg, write_noise_csv, write_noise_svg, AnalysisError,
    CoherenceCurve, LayerKGrid, LinearityOutcome, NoiseProfile,
};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    chronological_split, compute_transitions, load_dataset, DatasetError, FeatureMode, LayerId, TrajectoryDataset,
    TransitionSet,
};
use crate::koopman::{error_decomposition, write_sweep_csv, write_sweep_svg, DecompositionRow, KoopmanError, SweepConfig};
use crate::probes::{
    grid_search, read_results_csv, write_results_csv, CellOutcome, GridSpec, Hyperparams, ProbeError, ProbeKind,
    ProbeResult, ProbeType, ResultsIoError, TrainConfig,
};
use crate::rng::derive_seed;
use crate::stats::{
    aggregate_overall_p, block_bootstrap, compare_one_way, compare_two_sided, permutation_test, BootstrapConfig,
    CombinedP, OneWayComparison, StatReport, StatsError, Winner, WinTally,
};
use crate::synth::{generate, SynthError, SynthSystemSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    Results(#[from] ResultsIoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl PipelineError {
    /// 2 for anything the caller supplied wrongly, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Invalid(_)
            | PipelineError::Config(_)
            | PipelineError::Dataset(_)
            | PipelineError::Json { .. }
            | PipelineError::Results(_) => EXIT_INVALID,
            PipelineError::Synth(SynthError::InvalidSpec(_) | SynthError::Json { .. }) => EXIT_INVALID,
            PipelineError::Koopman(KoopmanError::UnknownSystem(_) | KoopmanError::InvalidArgument(_)) => EXIT_INVALID,
            _ => EXIT_PARTIAL,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(io_err(path))
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Failures collected while a command kept going.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Failures(pub Vec<String>);

impl Failures {
    pub fn push(&mut self, what: impl fmt::Display, err: impl fmt::Display) {
        let line = format!("{what}: {err}");
        log::error!("{line}");
        self.0.push(line);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.0.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

// ---------------------------------------------------------------- synth

/// Contents of a synth spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthJob {
    pub system: SynthSystemSpec,
    pub episodes: usize,
    pub length: usize,
}

pub fn cmd_synth(spec_file: &Path, out_dir: &Path, seed: Option<u64>) -> Result<TrajectoryDataset> {
    let mut job: SynthJob = read_json(spec_file)?;
    if let Some(s) = seed {
        job.system.seed = s;
    }
    Ok(generate(&job.system, job.episodes, job.length, out_dir)?)
}

// ---------------------------------------------------------------- ingest-check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub name: String,
    pub episodes: usize,
    pub total_steps: usize,
    pub embed_dim: usize,
    pub patch_count: usize,
    pub layers: Vec<LayerId>,
    pub activation_dims: BTreeMap<LayerId, usize>,
    /// Patch-linearity discrepancy per K.
    pub linearity: Vec<(usize, LinearityOutcome)>,
}

pub fn cmd_ingest_check(dir: &Path, ks: &[usize]) -> Result<IngestSummary> {
    let ds = load_dataset(dir)?;
    let mut linearity = Vec::new();
    for &k in ks {
        linearity.push((k, patch_linearity_check(&ds, k, None)?));
    }
    Ok(IngestSummary {
        name: ds.name.clone(),
        episodes: ds.episodes.len(),
        total_steps: ds.total_steps(),
        embed_dim: ds.embed_dim,
        patch_count: ds.patch_count,
        layers: ds.layers.clone(),
        activation_dims: ds.activation_dims.clone(),
        linearity,
    })
}

// ---------------------------------------------------------------- probe

pub fn load_datasets(config: &RunConfig) -> Result<Vec<TrajectoryDataset>> {
    if config.datasets.is_empty() {
        return Err(PipelineError::Invalid("no datasets configured".into()));
    }
    let mut out: Vec<TrajectoryDataset> = Vec::new();
    for path in &config.datasets {
        let ds = load_dataset(path)?;
        if out.iter().any(|d| d.name == ds.name) {
            return Err(PipelineError::Invalid(format!("duplicate dataset name {:?}", ds.name)));
        }
        out.push(ds);
    }
    Ok(out)
}

fn layers_for(config: &RunConfig, ds: &TrajectoryDataset) -> Result<Vec<LayerId>> {
    if config.layers.is_empty() {
        return Ok(ds.layers.clone());
    }
    if let Some(l) = config.layers.iter().find(|l| !ds.layers.contains(l)) {
        return Err(PipelineError::Invalid(format!("dataset {:?} has no layer {l}", ds.name)));
    }
    Ok(config.layers.clone())
}

/// Every `(mode, layer)` a dataset is probed with, in output order.
fn feature_streams(config: &RunConfig, ds: &TrajectoryDataset) -> Result<Vec<(FeatureMode, Option<LayerId>)>> {
    let layers = layers_for(config, ds)?;
    let mut out = Vec::new();
    for &mode in &config.modes {
        if mode.needs_activations() {
            out.extend(layers.iter().map(|&l| (mode, Some(l))));
        } else {
            out.push((mode, None));
        }
    }
    Ok(out)
}

fn cell_key(dataset: &str, k: usize, probe: &ProbeType) -> String {
    format!("{dataset}/{k}/{probe}")
}

/// Training configuration of one probe cell: the configured one with a seed
/// derived from the master seed and the cell's identity.
pub fn cell_train_config(config: &RunConfig, key: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(config.seed, &format!("train/{key}"), 0),
        ..config.train.clone()
    }
}

fn bootstrap_config(config: &RunConfig, part: &str, key: &str) -> BootstrapConfig {
    BootstrapConfig {
        n_reps: config.stats.n_reps,
        levels: config.stats.levels.clone(),
        seed: derive_seed(config.seed, &format!("bootstrap/{part}/{key}"), 0),
    }
}

/// Everything recorded about one fitted probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub k: usize,
    pub probe_type: ProbeType,
    pub hp: Hyperparams,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub val_r2: f64,
    pub train: StatReport,
    pub test: StatReport,
    pub grid: Vec<CellOutcome>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeRun {
    pub results: Vec<ProbeResult>,
    pub cells: Vec<CellRecord>,
    pub failures: Failures,
}

fn split_for(
    config: &RunConfig,
    ds: &TrajectoryDataset,
    k: usize,
    mode: FeatureMode,
    layer: Option<LayerId>,
) -> Result<(TransitionSet, TransitionSet, TransitionSet)> {
    let set = compute_transitions(ds, k, layer, mode)?;
    Ok(chronological_split(&set, &config.split)?)
}

fn probe_one(
    config: &RunConfig,
    ds_name: &str,
    kind: ProbeKind,
    parts: &(TransitionSet, TransitionSet, TransitionSet),
    probe_type: ProbeType,
    k: usize,
) -> Result<CellRecord> {
    let (train, val, test) = parts;
    if test.len() < 4 || train.len() < 4 {
        return Err(PipelineError::Invalid(format!(
            "too few samples (train {}, test {})",
            train.len(),
            test.len()
        )));
    }
    let key = cell_key(ds_name, k, &probe_type);
    let train_cfg = cell_train_config(config, &key);
    let out = grid_search(kind, train, val, Some(test), &GridSpec::from_config(&train_cfg), &train_cfg)?;
    let test_pred = out.test_predictions.as_ref().expect("test set supplied");
    let train_report = block_bootstrap(
        train.targets.view(),
        out.train_predictions.view(),
        &bootstrap_config(config, "train", &key),
    )?;
    let test_report = block_bootstrap(test.targets.view(), test_pred.view(), &bootstrap_config(config, "test", &key))?;
    Ok(CellRecord {
        dataset: ds_name.to_string(),
        k,
        probe_type,
        hp: out.best,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        val_r2: out.val_r2,
        train: train_report,
        test: test_report,
        grid: out.cells,
    })
}

fn result_of(cell: &CellRecord) -> ProbeResult {
    ProbeResult {
        dataset: cell.dataset.clone(),
        k: cell.k,
        train_r2: cell.train.r2,
        train_std: cell.train.se,
        test_r2: cell.test.r2,
        test_std: cell.test.se,
        lr: cell.hp.lr,
        lambda: cell.hp.lambda,
        dropout: cell.hp.dropout,
        probe_type: cell.probe_type,
    }
}

/// Fit every `(dataset, K, mode, layer, kind)` cell, bootstrap its train
/// and test R² and write the results table. A failing cell is logged and
/// skipped.
pub fn cmd_probe(config: &RunConfig) -> Result<ProbeRun> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let mut run = ProbeRun::default();
    for ds in &datasets {
        let streams = feature_streams(config, ds)?;
        for &k in &config.ks {
            for &(mode, layer) in &streams {
                let what = |kind: Option<ProbeKind>| {
                    let kind = kind.map_or(String::new(), |k| format!(" {k}"));
                    format!("{} K={k} {mode}{}{kind}", ds.name, layer.map_or(String::new(), |l| format!(" L{l}")))
                };
                let parts = match split_for(config, ds, k, mode, layer) {
                    Ok(p) => p,
                    Err(e) => {
                        run.failures.push(what(None), e);
                        continue;
                    }
                };
                for &kind in &config.kinds {
                    let probe_type = ProbeType::new(kind, mode, layer);
                    log::info!("probing {}", what(Some(kind)));
                    match probe_one(config, &ds.name, kind, &parts, probe_type, k) {
                        Ok(cell) => {
                            run.results.push(result_of(&cell));
                            run.cells.push(cell);
                        }
                        Err(e) => run.failures.push(what(Some(kind)), e),
                    }
                }
            }
        }
    }
    let dir = config.output.join("probe");
    ensure_dir(&dir)?;
    let path = dir.join("results.csv");
    write_results_csv(create_file(&path)?, &run.results)?;
    write_json(&dir.join("results.json"), &run.results)?;
    write_json(&dir.join("cells.json"), &run.cells)?;
    write_json(&dir.join("failures.json"), &run.failures)?;
    Ok(run)
}

// ---------------------------------------------------------------- permtest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRow {
    pub dataset: String,
    pub k: usize,
    pub probe_type: ProbeType,
    pub test_r2: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub successes: usize,
    pub tested: usize,
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.tested)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    /// `L<layer> <kind>`, or `Embedding <kind>` for baselines.
    pub label: String,
    /// Aligned with `TallyTable::ks`.
    pub per_k: Vec<Count>,
    pub overall: Count,
}

/// Successes (`p < alpha`) over tested probes, by probe type and K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyTable {
    pub alpha: f64,
    pub ks: Vec<usize>,
    pub rows: Vec<TallyRow>,
    pub total_per_k: Vec<Count>,
    pub total: Count,
}

pub fn tally(rows: &[PermutationRow], alpha: f64) -> TallyTable {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut groups: BTreeMap<(Option<LayerId>, ProbeKind), Vec<Count>> = BTreeMap::new();
    for r in rows {
        let counts = groups
            .entry((r.probe_type.layer, r.probe_type.kind))
            .or_insert_with(|| vec![Count::default(); ks.len()]);
        let c = &mut counts[ks.iter().position(|&k| k == r.k).expect("k collected")];
        c.tested += 1;
        if r.p_value < alpha {
            c.successes += 1;
        }
    }
    let sum = |cs: &mut dyn Iterator<Item = Count>| {
        cs.fold(Count::default(), |a, c| Count {
            successes: a.successes + c.successes,
            tested: a.tested + c.tested,
        })
    };
    let table_rows: Vec<TallyRow> = groups
        .into_iter()
        .map(|((layer, kind), per_k)| TallyRow {
            label: match layer {
                Some(l) => format!("L{l} {kind}"),
                None => format!("Embedding {kind}"),
            },
            overall: sum(&mut per_k.iter().copied()),
            per_k,
        })
        .collect();
    let total_per_k: Vec<Count> = (0..ks.len())
        .map(|i| sum(&mut table_rows.iter().map(|r| r.per_k[i])))
        .collect();
    let total = sum(&mut total_per_k.iter().copied());
    TallyTable {
        alpha,
        ks,
        rows: table_rows,
        total_per_k,
        total,
    }
}

pub fn write_tally_csv<W: std::io::Write>(out: W, t: &TallyTable) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["probe_type".to_string()];
    header.extend(t.ks.iter().map(|k| format!("K={k}")));
    header.push("overall".into());
    w.write_record(&header)?;
    for r in &t.rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.per_k.iter().map(Count::to_string));
        rec.push(r.overall.to_string());
        w.write_record(&rec)?;
    }
    let mut rec = vec!["Total".to_string()];
    rec.extend(t.total_per_k.iter().map(Count::to_string));
    rec.push(t.total.to_string());
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub rows: Vec<PermutationRow>,
    /// Probes with test R² <= 0, which are not tested.
    pub excluded: usize,
    pub tally: TallyTable,
    /// Fisher's method over every tested probe (a toolkit choice).
    pub combined: Option<CombinedP>,
    pub failures: Failures,
}

fn read_probe_results(output: &Path) -> Result<Vec<ProbeResult>> {
    let path = output.join("probe").join("results.csv");
    if !path.is_file() {
        return Err(PipelineError::Invalid(format!(
            "missing prior probe results at {}",
            path.display()
        )));
    }
    Ok(read_results_csv(fs::File::open(&path).map_err(io_err(&path))?)?)
}

/// Permutation test of every probe in the run's results table with
/// positive test R², using its selected hyperparameters.
pub fn cmd_permtest(config: &RunConfig) -> Result<PermutationSummary> {
    config.validate()?;
    let results = read_probe_results(&config.output)?;
    let datasets = load_datasets(config)?;
    let mut failures = Failures::default();
    let mut rows = Vec::new();
    let mut excluded = 0;
    for r in &results {
        if !(r.test_r2 > 0.0) {
            excluded += 1;
            continue;
        }
        let what = cell_key(&r.dataset, r.k, &r.probe_type);
        let Some(ds) = datasets.iter().find(|d| d.name == r.dataset) else {
            failures.push(&what, "dataset not in configuration");
            continue;
        };
        let hp = Hyperparams {
            lr: r.lr,
            lambda: r.lambda,
            dropout: r.dropout,
        };
        let outcome = split_for(config, ds, r.k, r.probe_type.mode, r.probe_type.layer).and_then(|(tr, va, te)| {
            permutation_test(
                r.probe_type.kind,
                &tr,
                &va,
                &te,
                &hp,
                &cell_train_config(config, &what),
                config.stats.n_perm,
                derive_seed(config.seed, &format!("permutation/{what}"), 0),
                Some(r.test_r2),
            )
            .map_err(PipelineError::from)
        });
        match outcome {
            Ok(o) => rows.push(PermutationRow {
                dataset: r.dataset.clone(),
                k: r.k,
                probe_type: r.probe_type,
                test_r2: r.test_r2,
                p_value: o.p_value,
                n_perm: o.n_perm,
            }),
            Err(e) => failures.push(&what, e),
        }
    }
    let ps: Vec<f64> = rows.iter().map(|r| r.p_value).collect();
    let combined = if ps.is_empty() { None } else { Some(aggregate_overall_p(&ps)?) };
    let summary = PermutationSummary {
        tally: tally(&rows, config.stats.alpha),
        rows,
        excluded,
        combined,
        failures,
    };
    let dir = config.output.join("permtest");
    ensure_dir(&dir)?;
    let path = dir.join("pvalues.csv");
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Csv { path, source }
    };
    {
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record(["dataset", "K", "probe_type", "test_r2", "p_value", "n_perm"])
            .map_err(csv_err(&path))?;
        for r in &summary.rows {
            w.write_record([
                r.dataset.clone(),
                r.k.to_string(),
                r.probe_type.to_string(),
                r.test_r2.to_string(),
                format!("{:e}", r.p_value),
                r.n_perm.to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let tpath = dir.join("tally.csv");
    write_tally_csv(create_file(&tpath)?, &summary.tally).map_err(csv_err(&tpath))?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- bootstrap

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| PipelineError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| PipelineError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            // A non-numeric first line is a header.
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(PipelineError::Invalid(format!(
                    "{}: non-numeric value on line {}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
        return Err(PipelineError::Invalid(format!("{}: empty or ragged matrix", path.display())));
    }
    Ok(Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]))
}

/// Block bootstrap of R² for a pair of CSV matrices (rows in time order).
pub fn cmd_bootstrap(truth: &Path, pred: &Path, config: &BootstrapConfig) -> Result<StatReport> {
    let y = read_matrix_csv(truth)?;
    let yhat = read_matrix_csv(pred)?;
    if y.dim() != yhat.dim() {
        return Err(PipelineError::Invalid(format!(
            "truth is {:?} but predictions are {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    Ok(block_bootstrap(y.view(), yhat.view(), config)?)
}

// ---------------------------------------------------------------- coherence / allan

pub fn cmd_coherence(config: &RunConfig) -> Result<Vec<CoherenceCurve>> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let curves = datasets
        .iter()
        .map(|ds| temporal_coherence(ds, &config.ks))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let dir = config.output.join("coherence");
    ensure_dir(&dir)?;
    let path = dir.join("coherence.csv");
    let mut buf = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let mut part = Vec::new();
        write_coherence_csv(&mut part, c)?;
        let text = String::from_utf8(part).expect("csv is utf-8");
        // One header for the concatenated table.
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        buf.extend_from_slice(body.as_bytes());
    }
    fs::write(&path, buf).map_err(io_err(&path))?;
    write_json(&dir.join("coherence.json"), &curves)?;
    write_coherence_svg(&dir.join("coherence.svg"), &curves)?;
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllanRun {
    pub profiles: Vec<NoiseProfile>,
    pub failures: Failures,
}

pub fn cmd_allan(config: &RunConfig) -> Result<AllanRun> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let mut run = AllanRun::default();
    for ds in &datasets {
        match transition_noise_profile(ds, &config.ks) {
            Ok(p) => run.profiles.extend(p),
            Err(e) => run.failures.push(&ds.name, e),
        }
    }
    let dir = config.output.join("allan");
    ensure_dir(&dir)?;
    let path = dir.join("allan.csv");
    write_noise_csv(create_file(&path)?, &run.profiles)?;
    write_json(&dir.join("allan.json"), &run.profiles)?;
    write_noise_svg(&dir.join("allan.svg"), &run.profiles)?;
    Ok(run)
}

// ---------------------------------------------------------------- koopman

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub config: SweepConfig,
    pub rows: Vec<DecompositionRow>,
}

pub fn cmd_koopman(config: &RunConfig) -> Result<Vec<SweepOutput>> {
    let dir = config.output.join("koopman");
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for (i, sweep) in config.koopman_sweeps().into_iter().enumerate() {
        let rows = error_decomposition(&sweep)?;
        let path = dir.join(format!("sweep_{i}.csv"));
        write_sweep_csv(create_file(&path)?, &rows)?;
        let title = format!("EDMD error terms, {:?}, K={}", sweep.observable, sweep.k);
        write_sweep_svg(&dir.join(format!("sweep_{i}.svg")), &rows, &title)?;
        out.push(SweepOutput { config: sweep, rows });
    }
    write_json(&dir.join("sweeps.json"), &out)?;
    Ok(out)
}

// ---------------------------------------------------------------- report

/// Best activation-mode probe against the best embedding probe at one K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneWayRow {
    pub dataset: String,
    pub k: usize,
    pub activation_probe: ProbeType,
    pub activation_r2: f64,
    pub embedding_probe: ProbeType,
    pub embedding_r2: f64,
    pub comparison: OneWayComparison,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub dataset: String,
    pub k: usize,
    pub mode: FeatureMode,
    pub layer: Option<LayerId>,
    pub linear_r2: f64,
    pub mlp_r2: f64,
    /// Winner per confidence level, aligned with `MlpVsLinear::levels`.
    pub winners: Vec<Winner>,
    pub absolute: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpVsLinear {
    pub levels: Vec<f64>,
    pub rows: Vec<PairRow>,
    /// Per level.
    pub tallies: Vec<WinTally>,
    pub absolute: WinTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub dataset: String,
    pub grid: LayerKGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Set when any of the five core sections is missing.
    pub incomplete: bool,
    pub missing: Vec<String>,
    pub probes: Option<Vec<ProbeResult>>,
    pub one_way: Option<Vec<OneWayRow>>,
    pub mlp_vs_linear: Option<MlpVsLinear>,
    pub grids: Option<Vec<GridSection>>,
    pub coherence: Option<Vec<CoherenceCurve>>,
    pub allan: Option<Vec<NoiseProfile>>,
    pub permutation: Option<PermutationSummary>,
    pub koopman: Option<Vec<SweepOutput>>,
    /// Statistical choices behind the tables.
    pub methods: BTreeMap<String, String>,
}

fn report_from_results(r: &ProbeResult, levels: &[f64]) -> StatReport {
    StatReport::from_point_se(r.test_r2, r.test_std, levels, 0, 0, 0)
}

fn best<'a>(rows: impl Iterator<Item = &'a ProbeResult>) -> Option<&'a ProbeResult> {
    rows.fold(None, |acc: Option<&ProbeResult>, r| match acc {
        Some(a) if a.test_r2 >= r.test_r2 => Some(a),
        _ if r.test_r2.is_finite() => Some(r),
        _ => acc,
    })
}

fn datasets_in(results: &[ProbeResult]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in results {
        if !names.contains(&r.dataset) {
            names.push(r.dataset.clone());
        }
    }
    names
}

/// One-way test at every `(dataset, K)` holding both an activation-mode and
/// an embedding probe. Intervals come from the reported test SEs.
pub fn one_way_table(results: &[ProbeResult], levels: &[f64], alpha: f64) -> Vec<OneWayRow> {
    let mut out = Vec::new();
    for name in datasets_in(results) {
        let mut ks: Vec<usize> = results.iter().filter(|r| r.dataset == name).map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let cell = || results.iter().filter(|r| r.dataset == name && r.k == k);
            let adv = best(cell().filter(|r| r.probe_type.mode == FeatureMode::Activations));
            let base = best(cell().filter(|r| r.probe_type.mode == FeatureMode::Embeddings));
            let (Some(adv), Some(base)) = (adv, base) else { continue };
            match compare_one_way(&report_from_results(adv, levels), &report_from_results(base, levels)) {
                Ok(comparison) => out.push(OneWayRow {
                    dataset: name.clone(),
                    k,
                    activation_probe: adv.probe_type,
                    activation_r2: adv.test_r2,
                    embedding_probe: base.probe_type,
                    embedding_r2: base.test_r2,
                    significant: comparison.significant(alpha),
                    comparison,
                }),
                Err(e) => log::warn!("one-way test skipped for {name} K={k}: {e}"),
            }
        }
    }
    out
}

/// Two-sided CI comparison of every linear/MLP pair sharing dataset, K,
/// mode and layer.
pub fn mlp_vs_linear_table(results: &[ProbeResult], levels: &[f64]) -> std::result::Result<MlpVsLinear, StatsError> {
    let mut rows = Vec::new();
    let mut tallies = vec![WinTally::default(); levels.len()];
    let mut absolute = WinTally::default();
    for lin in results.iter().filter(|r| r.probe_type.kind == ProbeKind::Linear) {
        let Some(mlp) = results.iter().find(|r| {
            r.probe_type.kind == ProbeKind::Mlp
                && r.dataset == lin.dataset
                && r.k == lin.k
                && r.probe_type.mode == lin.probe_type.mode
                && r.probe_type.layer == lin.probe_type.layer
        }) else {
            continue;
        };
        let cmp = compare_two_sided(
            &report_from_results(lin, levels),
            &report_from_results(mlp, levels),
            levels,
        )?;
        let winners: Vec<Winner> = cmp.per_level.iter().map(|o| o.winner).collect();
        for (t, w) in tallies.iter_mut().zip(&winners) {
            t.add(*w);
        }
        absolute.add(cmp.absolute);
        rows.push(PairRow {
            dataset: lin.dataset.clone(),
            k: lin.k,
            mode: lin.probe_type.mode,
            layer: lin.probe_type.layer,
            linear_r2: lin.test_r2,
            mlp_r2: mlp.test_r2,
            winners,
            absolute: cmp.absolute,
        });
    }
    Ok(MlpVsLinear {
        levels: levels.to_vec(),
        rows,
        tallies,
        absolute,
    })
}

fn winner_label(w: Winner) -> &'static str {
    match w {
        Winner::MlpWins => "mlp",
        Winner::Tie => "tie",
        Winner::LinearWins => "linear",
    }
}

fn methods() -> BTreeMap<String, String> {
    [
        ("r2", "variance-weighted multi-output R²"),
        ("intervals", "moving-block bootstrap SE with Bessel's correction; CI = R² ± z·SE"),
        ("one_way_test", "normal z-test on bootstrap SEs plus CI overlap (toolkit choice)"),
        ("two_sided", "winner only when the two CIs are disjoint"),
        ("overall_p", "Fisher's method over tested probes (toolkit choice); (max p)^k bound alongside"),
        ("permutation", "training targets shuffled, hyperparameters fixed, p = (1 + #null >= obs)/(1 + n)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn optional_json<T: for<'de> Deserialize<'de>>(path: &Path, missing: &mut Vec<String>, section: &str) -> Option<T> {
    if !path.is_file() {
        missing.push(section.to_string());
        return None;
    }
    match read_json(path) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{section}: {e}");
            missing.push(section.to_string());
            None
        }
    }
}

/// Merge whatever a run directory holds into `report/`. Missing core
/// sections (probes, stats, grid, coherence, allan) flag the report as
/// incomplete; the command still succeeds.
pub fn cmd_report(run_dir: &Path, levels: &[f64], alpha: f64) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(PipelineError::Invalid(format!("{} is not a directory", run_dir.display())));
    }
    let mut missing = Vec::new();
    let results_path = run_dir.join("probe").join("results.csv");
    let probes = if results_path.is_file() {
        Some(read_results_csv(fs::File::open(&results_path).map_err(io_err(&results_path))?)?)
    } else {
        missing.push("probes".to_string());
        None
    };
    let (one_way, mlp_vs_linear, grids) = match &probes {
        Some(results) => {
            let grids: Vec<GridSection> = datasets_in(results)
                .into_iter()
                .filter_map(|name| {
                    let subset: Vec<ProbeResult> = results.iter().filter(|r| r.dataset == name).cloned().collect();
                    layer_k_grid(&subset).ok().map(|grid| GridSection { dataset: name, grid })
                })
                .collect();
            if grids.is_empty() {
                missing.push("grid".to_string());
            }
            (
                Some(one_way_table(results, levels, alpha)),
                Some(mlp_vs_linear_table(results, levels)?),
                (!grids.is_empty()).then_some(grids),
            )
        }
        None => {
            missing.push("stats".to_string());
            missing.push("grid".to_string());
            (None, None, None)
        }
    };
    let coherence = optional_json(&run_dir.join("coherence").join("coherence.json"), &mut missing, "coherence");
    let allan = optional_json(&run_dir.join("allan").join("allan.json"), &mut missing, "allan");
    let mut extra_missing = Vec::new();
    let permutation = optional_json(
        &run_dir.join("permtest").join("summary.json"),
        &mut extra_missing,
        "permutation",
    );
    let koopman = optional_json(&run_dir.join("koopman").join("sweeps.json"), &mut extra_missing, "koopman");

    let report = Report {
        incomplete: !missing.is_empty(),
        missing,
        probes,
        one_way,
        mlp_vs_linear,
        grids,
        coherence,
        allan,
        permutation,
        koopman,
        methods: methods(),
    };
    write_report(run_dir, &report)?;
    Ok(report)
}

fn write_report(run_dir: &Path, report: &Report) -> Result<()> {
    let dir = run_dir.join("report");
    ensure_dir(&dir)?;
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Csv { path, source }
    };
    if let Some(rows) = &report.one_way {
        let path = dir.join("one_way.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        let mut header = vec![
            "dataset", "K", "activation_probe", "activation_r2", "embedding_probe", "embedding_r2", "z", "p_one_sided",
            "significant",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        if let Some(first) = rows.first() {
            header.extend(first.comparison.ci_overlap.iter().map(|(l, _)| format!("overlap_{}", (l * 100.0).round())));
        }
        w.write_record(&header).map_err(csv_err(&path))?;
        for r in rows {
            let mut rec = vec![
                r.dataset.clone(),
                r.k.to_string(),
                r.activation_probe.to_string(),
                r.activation_r2.to_string(),
                r.embedding_probe.to_string(),
                r.embedding_r2.to_string(),
                r.comparison.z.to_string(),
                format!("{:e}", r.comparison.p_one_sided),
                r.significant.to_string(),
            ];
            rec.extend(r.comparison.ci_overlap.iter().map(|(_, o)| o.to_string()));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    if let Some(t) = &report.mlp_vs_linear {
        let path = dir.join("mlp_vs_linear.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record(["comparison", "mlp_wins", "tie", "linear_wins", "total"])
            .map_err(csv_err(&path))?;
        let rows = t
            .levels
            .iter()
            .zip(&t.tallies)
            .map(|(l, c)| (format!("{}% two-sided CI", (l * 100.0).round()), *c))
            .chain(std::iter::once(("absolute".to_string(), t.absolute)));
        for (label, c) in rows {
            let n = c.total();
            let cell = |v: usize| {
                let pct = if n > 0 { 100.0 * v as f64 / n as f64 } else { 0.0 };
                format!("{v}/{n} ({pct:.1}%)")
            };
            w.write_record([label, cell(c.mlp_wins), cell(c.ties), cell(c.linear_wins), n.to_string()])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        let path = dir.join("mlp_vs_linear_pairs.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        let mut header: Vec<String> = ["dataset", "K", "mode", "layer", "linear_r2", "mlp_r2"]
            .into_iter()
            .map(String::from)
            .collect();
        header.extend(t.levels.iter().map(|l| format!("winner_{}", (l * 100.0).round())));
        header.push("absolute".into());
        w.write_record(&header).map_err(csv_err(&path))?;
        for r in &t.rows {
            let mut rec = vec![
                r.dataset.clone(),
                r.k.to_string(),
                r.mode.to_string(),
                r.layer.map(|l| l.to_string()).unwrap_or_default(),
                r.linear_r2.to_string(),
                r.mlp_r2.to_string(),
            ];
            rec.extend(r.winners.iter().map(|w| winner_label(*w).to_string()));
            rec.push(winner_label(r.absolute).to_string());
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    for g in report.grids.iter().flatten() {
        let base = format!("grid_{}", slug(&g.dataset));
        let path = dir.join(format!("{base}.csv"));
        write_grid_csv(create_file(&path)?, &g.grid)?;
        write_grid_svg(
            &dir.join(format!("{base}.svg")),
            &g.grid,
            &format!("Best test R² by layer and K: {}", g.dataset),
        )?;
    }
    write_json(&dir.join("report.json"), report)
}
