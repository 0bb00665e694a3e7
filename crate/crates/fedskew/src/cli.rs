//! Command-line front end. Each subcommand is a thin composition of library calls.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fedskew_core::evaluation::{evaluate, TrialSeeds};
use fedskew_core::federation::run_protocol;
use fedskew_core::{BatchSize, InstitutionShard, Method, Mitigations, ProtocolConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{parse_config, ArchSpec};
use crate::data::{load_data_dir, write_data_dir, SynthData};
use crate::error::{invalid, Error, Result};
use crate::experiment::run_experiment;
use crate::manifest::{Manifest, PlanSpec};
use crate::report::{emit_report, regenerate};

#[derive(Debug, Parser)]
#[command(
    name = "fedskew",
    version,
    about = "Simulate federated training under data heterogeneity",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic task and write train/val/test IDX files.
    Synth {
        /// JSON file: {"spec": {...}, "split": {...}, "split_seed": n}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a data directory into institutions and write a manifest.
    Partition {
        #[arg(long)]
        data: PathBuf,
        /// JSON file: {"regime": {...}, "seed": n, "scale_to_train": bool}.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one protocol and write its result as JSON.
    Train(TrainArgs),
    /// Run a full experiment configuration and write its report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Maximum worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Regenerate CSV and SVG outputs from a results directory's results.json.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Partition manifest; without one the whole directory is a single institution.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON file with any of the settings below; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub wp: bool,
    #[arg(long)]
    pub wl: bool,
    #[arg(long = "bn-avg")]
    pub bn_avg: bool,
    /// Batch size, or "full".
    #[arg(long = "B")]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture preset.
    #[arg(long)]
    pub arch: Option<String>,
    /// Uniform instead of size-proportional FedAVG aggregation.
    #[arg(long = "fedavg-uniform")]
    pub fedavg_uniform: bool,
    /// Record the global parameters after every update.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// File form of the `train` flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub mitigations: Mitigations,
    #[serde(default)]
    pub batch_size: Option<BatchSize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub arch: Option<ArchSpec>,
    #[serde(default)]
    pub fedavg_uniform: bool,
    #[serde(default)]
    pub trace: bool,
}

pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_LR: f64 = 0.02;
pub const DEFAULT_EPOCHS: usize = 40;

impl TrainArgs {
    /// Merges the flags over the settings file.
    pub fn settings(&self) -> Result<TrainSettings> {
        let mut s: TrainSettings = match &self.config {
            Some(path) => read_json(path)?,
            None => TrainSettings::default(),
        };
        if let Some(m) = &self.method {
            s.method = Some(Method::parse(m)?);
        }
        s.mitigations.wp |= self.wp;
        s.mitigations.wl |= self.wl;
        s.mitigations.bn_avg |= self.bn_avg;
        if let Some(b) = &self.batch_size {
            s.batch_size = Some(BatchSize::parse(b)?);
        }
        s.lr = self.lr.or(s.lr);
        s.epochs = self.epochs.or(s.epochs);
        s.seed = self.seed.or(s.seed);
        if let Some(a) = &self.arch {
            s.arch = Some(ArchSpec::Preset(a.clone()));
        }
        s.fedavg_uniform |= self.fedavg_uniform;
        s.trace |= self.trace;
        Ok(s)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| invalid!("{}: {}", path.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Runtime(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))
}

pub fn synth(spec: &Path, out: &Path) -> Result<()> {
    let data: SynthData = read_json(spec)?;
    let splits = data.generate()?;
    write_data_dir(out, &splits)?;
    println!(
        "wrote {} / {} / {} samples to {}",
        splits[0].len(),
        splits[1].len(),
        splits[2].len(),
        out.display()
    );
    Ok(())
}

pub fn partition(data: &Path, plan: &Path, out: &Path) -> Result<Manifest> {
    let spec: PlanSpec = read_json(plan)?;
    let splits = load_data_dir(data)?;
    let (manifest, _) = Manifest::build(spec.resolve(splits[0].len())?, &splits)?;
    write_json(out, &manifest)?;
    println!("institutions {}", manifest.institutions.len());
    println!("sizes {:?}", manifest.skew.sizes);
    println!("quantity STD {:.1}", manifest.skew.quantity_std);
    println!("mean pairwise KS {:.3}", manifest.skew.mean_pairwise_ks);
    Ok(manifest)
}

/// Loads the shards a `train` invocation runs on.
pub fn train_shards(data: &Path, manifest: Option<&Path>) -> Result<Vec<InstitutionShard>> {
    let splits = load_data_dir(data)?;
    match manifest {
        Some(path) => read_json::<Manifest>(path)?.materialize(&splits),
        None => {
            let [train, val, test] = splits;
            Ok(vec![InstitutionShard {
                institution_id: 0,
                train,
                val,
                test,
                degradation: None,
                degradation_seeds: [0; 3],
            }])
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<fedskew_core::RunResult> {
    let s = args.settings()?;
    let method = s
        .method
        .ok_or_else(|| invalid!("--method is required (fedsgd, fedavg, cwt, centralized)"))?;
    let shards = train_shards(&args.data, args.manifest.as_deref())?;
    let first = &shards[0].train;
    let arch = s
        .arch
        .clone()
        .unwrap_or_default()
        .resolve(first.image_extent(), first.num_categories())?;
    let seed = s.seed.unwrap_or(0);
    let cfg = ProtocolConfig {
        method,
        mitigations: s.mitigations,
        batch_size: s.batch_size.unwrap_or(BatchSize::Fixed(DEFAULT_BATCH)),
        lr: s.lr.unwrap_or(DEFAULT_LR),
        epochs: s.epochs.unwrap_or(DEFAULT_EPOCHS),
        model_seed: seed,
        data_seed: seed,
        arch,
        fedavg_uniform: s.fedavg_uniform,
        trace: s.trace,
    };
    cfg.validate()?;
    let outcome = run_protocol(&shards, &cfg)?;
    let seeds = TrialSeeds {
        model: seed,
        data_order: seed,
        partition: 0,
    };
    let result = evaluate(&outcome, &shards, method, s.mitigations, seeds)?;
    write_json(&args.out, &result)?;
    println!(
        "{} ({}): test accuracy {:.4}",
        method.name(),
        s.mitigations,
        result.test_accuracy
    );
    Ok(result)
}

pub fn experiment(config: &Path, out: Option<&Path>, threads: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(config).map_err(Error::io(config))?;
    let cfg = parse_config(&text).map_err(|e| invalid!("{}: {}", config.display(), e))?;
    let report = run_experiment(&cfg, threads)?;
    let dir = out.unwrap_or(&cfg.output_dir);
    for path in emit_report(&report, dir)? {
        println!("wrote {}", path.display());
    }
    for cell in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "cell {}/{} failed: {}",
            cell.partition_id,
            cell.protocol_id,
            cell.error.as_deref().unwrap_or("")
        );
    }
    match report.failed_cells() {
        0 => Ok(()),
        n => Err(Error::Runtime(format!(
            "{} of {} cells failed",
            n,
            report.cells.len()
        ))),
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, out } => synth(spec, out),
        Command::Partition { data, plan, out } => partition(data, plan, out).map(|_| ()),
        Command::Train(args) => train(args).map(|_| ()),
        Command::Experiment {
            config,
            out,
            threads,
        } => experiment(config, out.as_deref(), *threads),
        Command::Report { results } => {
            for path in regenerate(results)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
