use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use worldprobe::config::{RunConfig, SEED_ENV};
use worldprobe::dataset::{FeatureMode, LayerId};
use worldprobe::pipeline::{self, PipelineError, EXIT_INVALID, EXIT_OK};
use worldprobe::probes::ProbeKind;
use worldprobe::stats::{BootstrapConfig, DEFAULT_LEVELS};

#[derive(Parser)]
#[command(name = "worldprobe", version, about = "Probe agent activations for latent world-model structure")]
struct Cli {
    /// Master seed. Overrides WORLDPROBE_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON job file.
    Synth {
        /// `{"system": {...}, "episodes": N, "length": T}`
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Validate a dataset directory and print a summary.
    IngestCheck {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,10,30")]
        ks: Vec<usize>,
    },
    /// Fit and bootstrap every configured probe.
    Probe(RunArgs),
    /// Permutation tests for the probes of a previous `probe` run.
    Permtest(RunArgs),
    /// Block bootstrap of R² for two CSV matrices.
    Bootstrap {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 400)]
        n_reps: usize,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cosine similarity of transitions against K.
    Coherence(RunArgs),
    /// Allan-variance noise profile of transitions.
    Allan(RunArgs),
    /// EDMD error-decomposition sweeps.
    Koopman(RunArgs),
    /// Merge a run directory into one report.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
}

/// Overrides for [`RunConfig`] keys.
#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<LayerId>>,
    /// linear, mlp
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// activations, embeddings, joint
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sweep_epochs: Option<usize>,
    #[arg(long)]
    final_epochs: Option<usize>,
}

fn parse_names<T: DeserializeOwned>(names: &[String]) -> Result<Vec<T>, PipelineError> {
    names
        .iter()
        .map(|n| {
            serde_json::from_value(serde_json::Value::String(n.to_lowercase()))
                .map_err(|_| PipelineError::Invalid(format!("unknown value {n:?}")))
        })
        .collect()
}

fn seed_from_env(flag: Option<u64>) -> Result<Option<u64>, PipelineError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| PipelineError::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn build_config(args: RunArgs, cli_seed: Option<u64>, cli_threads: Option<usize>) -> Result<RunConfig, PipelineError> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.apply_env()?;
    if let Some(s) = cli_seed {
        c.seed = s;
    }
    if cli_threads.is_some() {
        c.threads = cli_threads;
    }
    if !args.datasets.is_empty() {
        c.datasets = args.datasets;
    }
    if let Some(v) = args.ks {
        c.ks = v;
    }
    if let Some(v) = args.layers {
        c.layers = v;
    }
    if let Some(v) = args.kinds {
        c.kinds = parse_names::<ProbeKind>(&v)?;
    }
    if let Some(v) = args.modes {
        c.modes = parse_names::<FeatureMode>(&v)?;
    }
    if let Some(v) = args.output {
        c.output = v;
    }
    if let Some(v) = args.n_reps {
        c.stats.n_reps = v;
    }
    if let Some(v) = args.n_perm {
        c.stats.n_perm = v;
    }
    if let Some(v) = args.levels {
        c.stats.levels = v;
    }
    if let Some(v) = args.alpha {
        c.stats.alpha = v;
    }
    if let Some(v) = args.sweep_epochs {
        c.train.sweep_epochs = v;
    }
    if let Some(v) = args.final_epochs {
        c.train.final_epochs = v;
    }
    c.validate()?;
    Ok(c)
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn save_config(c: &RunConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&c.output).map_err(|source| PipelineError::Io {
        path: c.output.clone(),
        source,
    })?;
    let path = c.output.join("config.json");
    let text = serde_json::to_string_pretty(c).expect("serializable") + "\n";
    std::fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
}

fn run_config(args: RunArgs, seed: Option<u64>, threads: Option<usize>) -> Result<RunConfig, PipelineError> {
    let c = build_config(args, seed, threads)?;
    init_threads(c.threads);
    save_config(&c)?;
    Ok(c)
}

fn write_or_print<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), PipelineError> {
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
            std::fs::write(path, text).map_err(|source| PipelineError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        None => {
            print_json(value);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let Cli {
        seed, threads, command, ..
    } = cli;
    match command {
        Command::Synth { spec, out } => {
            init_threads(threads);
            let seed = seed_from_env(seed)?;
            let ds = pipeline::cmd_synth(&spec, &out, seed)?;
            println!(
                "wrote {} ({} episodes, {} steps) to {}",
                ds.name,
                ds.episodes.len(),
                ds.total_steps(),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::IngestCheck { dir, ks } => {
            print_json(&pipeline::cmd_ingest_check(&dir, &ks)?);
            Ok(EXIT_OK)
        }
        Command::Probe(args) => {
            let c = run_config(args, seed, threads)?;
            let run = pipeline::cmd_probe(&c)?;
            println!("{} probes fitted, {} failed", run.results.len(), run.failures.0.len());
            Ok(run.failures.exit_code())
        }
        Command::Permtest(args) => {
            let c = run_config(args, seed, threads)?;
            let s = pipeline::cmd_permtest(&c)?;
            println!(
                "{} probes tested, {} excluded, {} significant at p < {}",
                s.tally.total.tested, s.excluded, s.tally.total.successes, s.tally.alpha
            );
            Ok(s.failures.exit_code())
        }
        Command::Bootstrap {
            truth,
            pred,
            n_reps,
            levels,
            out,
        } => {
            init_threads(threads);
            let config = BootstrapConfig {
                n_reps,
                levels: levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec()),
                seed: seed_from_env(seed)?.unwrap_or(0),
            };
            let report = pipeline::cmd_bootstrap(&truth, &pred, &config)?;
            write_or_print(&report, out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Coherence(args) => {
            let c = run_config(args, seed, threads)?;
            for curve in pipeline::cmd_coherence(&c)? {
                println!("{}: {:?}", curve.dataset, curve.mean);
            }
            Ok(EXIT_OK)
        }
        Command::Allan(args) => {
            let c = run_config(args, seed, threads)?;
            let run = pipeline::cmd_allan(&c)?;
            for p in &run.profiles {
                println!("{} K={}: signal fraction {:.3}", p.dataset, p.k, p.signal_fraction);
            }
            Ok(run.failures.exit_code())
        }
        Command::Koopman(args) => {
            let c = run_config(args, seed, threads)?;
            let sweeps = pipeline::cmd_koopman(&c)?;
            println!(
                "{} sweeps written to {}",
                sweeps.len(),
                c.output.join("koopman").display()
            );
            Ok(EXIT_OK)
        }
        Command::Report { run_dir, levels, alpha } => {
            let levels = levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
            let r = pipeline::cmd_report(&run_dir, &levels, alpha)?;
            if r.incomplete {
                println!("report written (incomplete; missing: {})", r.missing.join(", "));
            } else {
                println!("report written to {}", run_dir.join("report").display());
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
