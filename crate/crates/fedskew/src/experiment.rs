//! Seeded repeated trials over (partition, protocol) cells.
//!
//! Every trial of every cell is an independent job; jobs run on a rayon pool
//! and are reassembled in configuration order, so the report is the same for
//! any thread count.

use fedskew_core::evaluation::{drop_rate, evaluate, TrialSeeds};
use fedskew_core::federation::run_protocol;
use fedskew_core::rng::{derive, stream};
use fedskew_core::skew::score_partition;
use fedskew_core::{
    InstitutionShard, LabeledDataset, Method, Mitigations, PartitionPlan, Regime, RunResult,
    SkewReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{regime_name, ExperimentConfig, ReferenceSpec};
use crate::error::{Error, Result};
use crate::manifest::resolve_regime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial: usize,
    /// Unique per (partition, protocol, trial).
    pub seed: u64,
    pub ks: f64,
    pub quantity_std: f64,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellReport {
    pub partition_id: String,
    pub protocol_id: String,
    pub figure: String,
    pub method: Method,
    pub mitigations: Mitigations,
    pub trials: Vec<TrialRecord>,
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation over trials; absent with a single trial.
    pub std_accuracy: Option<f64>,
    /// `partition/protocol` of the reference cell.
    pub reference: Option<String>,
    /// Relative drop of the mean accuracy against the reference mean, in percent.
    pub drop_rate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionReport {
    pub id: String,
    pub figure: String,
    pub regime: String,
    /// The plan after scaling to the training set.
    pub plan: Option<Regime>,
    /// Skew of each trial's partition.
    pub skew: Vec<SkewReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub name: String,
    pub repeats: usize,
    pub seed: u64,
    pub reference: Option<ReferenceSpec>,
    pub partitions: Vec<PartitionReport>,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Figure names in order of first appearance.
    pub fn figures(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.partitions {
            if !out.contains(&p.figure) {
                out.push(p.figure.clone());
            }
        }
        out
    }
}

/// Recorded seed of one (partition, protocol, trial) job.
pub fn trial_seed(base: u64, partition: usize, protocol: usize, trial: usize) -> u64 {
    derive(
        base,
        &[
            stream::TRIAL,
            partition as u64,
            protocol as u64,
            trial as u64,
        ],
    )
}

/// Seeds a job actually uses. Model initialisation and data order depend on
/// the trial only, and the partition seed on (partition, trial), so protocols
/// within a trial are compared on the same shards from the same start.
pub fn component_seeds(base: u64, partition: usize, trial: usize) -> TrialSeeds {
    TrialSeeds {
        model: derive(base, &[stream::MODEL_INIT, trial as u64]),
        data_order: derive(base, &[stream::DATA_ORDER, trial as u64]),
        partition: derive(base, &[stream::PARTITION, partition as u64, trial as u64]),
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

struct Partitioned {
    plan: Regime,
    shards: Vec<InstitutionShard>,
    skew: SkewReport,
}

fn build_partition(
    cfg: &ExperimentConfig,
    splits: &[LabeledDataset; 3],
    p: usize,
    r: usize,
) -> Result<Partitioned> {
    let spec = &cfg.partitions[p];
    let regime = resolve_regime(&spec.regime, spec.scale_to_train, splits[0].len())?;
    let plan = PartitionPlan {
        regime,
        seed: component_seeds(cfg.seed, p, r).partition,
    };
    let shards = plan.apply(&splits[0], &splits[1], &splits[2])?;
    let skew = score_partition(&shards)?;
    Ok(Partitioned {
        plan: plan.regime,
        shards,
        skew,
    })
}

fn run_job(
    cfg: &ExperimentConfig,
    part: &Partitioned,
    arch: &fedskew_core::Arch,
    p: usize,
    q: usize,
    r: usize,
) -> Result<TrialRecord> {
    let spec = &cfg.protocols[q];
    let seeds = component_seeds(cfg.seed, p, r);
    let pc = cfg.protocol_config(spec, arch.clone(), seeds.model, seeds.data_order);
    let outcome = run_protocol(&part.shards, &pc)?;
    let mut result = evaluate(&outcome, &part.shards, spec.method, spec.mitigations, seeds)?;
    if !cfg.cross_matrix {
        result.cross_matrix.clear();
    }
    Ok(TrialRecord {
        trial: r,
        seed: trial_seed(cfg.seed, p, q, r),
        ks: part.skew.mean_pairwise_ks,
        quantity_std: part.skew.quantity_std,
        result,
    })
}

/// Runs every cell of the configuration. `threads` caps the worker pool
/// (`None` uses all cores). A failing cell records its error and the
/// remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let splits = cfg.data.load()?;
    run_experiment_on(cfg, &splits, threads)
}

/// [`run_experiment`] on already loaded train/val/test splits.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    splits: &[LabeledDataset; 3],
    threads: Option<usize>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let arch = cfg
        .training
        .arch
        .resolve(splits[0].image_extent(), splits[0].num_categories())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    let (np, nq, nr) = (cfg.partitions.len(), cfg.protocols.len(), cfg.repeats);

    let parts: Vec<Result<Partitioned>> = pool.install(|| {
        (0..np * nr)
            .into_par_iter()
            .map(|k| build_partition(cfg, splits, k / nr, k % nr))
            .collect()
    });
    let jobs: Vec<Option<Result<TrialRecord>>> = pool.install(|| {
        (0..np * nq * nr)
            .into_par_iter()
            .map(|k| {
                let (p, q, r) = (k / (nq * nr), (k / nr) % nq, k % nr);
                parts[p * nr + r]
                    .as_ref()
                    .ok()
                    .map(|part| run_job(cfg, part, &arch, p, q, r))
            })
            .collect()
    });

    let mut report = ExperimentReport {
        name: cfg.name.clone(),
        repeats: nr,
        seed: cfg.seed,
        reference: cfg.reference.clone(),
        partitions: Vec::with_capacity(np),
        cells: Vec::with_capacity(np * nq),
    };
    let mut jobs = jobs.into_iter();
    for (p, spec) in cfg.partitions.iter().enumerate() {
        let built = &parts[p * nr..(p + 1) * nr];
        let part_error = built
            .iter()
            .enumerate()
            .find_map(|(r, b)| b.as_ref().err().map(|e| format!("trial {r}: {e}")));
        report.partitions.push(PartitionReport {
            id: spec.id.clone(),
            figure: spec.figure(),
            regime: regime_name(&spec.regime).to_string(),
            plan: built
                .iter()
                .find_map(|b| b.as_ref().ok().map(|b| b.plan.clone())),
            skew: built
                .iter()
                .filter_map(|b| b.as_ref().ok().map(|b| b.skew.clone()))
                .collect(),
            error: part_error.clone(),
        });
        for proto in &cfg.protocols {
            let mut trials = Vec::with_capacity(nr);
            let mut error = part_error
                .as_ref()
                .map(|e| format!("partition {}: {}", spec.id, e));
            for r in 0..nr {
                match jobs.next().unwrap() {
                    Some(Ok(t)) => trials.push(t),
                    Some(Err(e)) if error.is_none() => error = Some(format!("trial {r}: {e}")),
                    _ => {}
                }
            }
            if error.is_some() {
                trials.clear();
            }
            let accs: Vec<f64> = trials.iter().map(|t| t.result.test_accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            report.cells.push(CellReport {
                partition_id: spec.id.clone(),
                protocol_id: proto.id.clone(),
                figure: spec.figure(),
                method: proto.method,
                mitigations: proto.mitigations,
                trials,
                mean_accuracy,
                std_accuracy,
                reference: None,
                drop_rate: None,
                error,
            });
        }
    }
    if let Some(reference) = &cfg.reference {
        apply_reference(&mut report.cells, reference)?;
    }
    Ok(report)
}

fn apply_reference(cells: &mut [CellReport], reference: &ReferenceSpec) -> Result<()> {
    let means: Vec<((String, String), Option<f64>)> = cells
        .iter()
        .map(|c| {
            (
                (c.partition_id.clone(), c.protocol_id.clone()),
                c.mean_accuracy,
            )
        })
        .collect();
    for cell in cells.iter_mut() {
        let (rp, rq) = reference.cell(&cell.partition_id, &cell.protocol_id);
        let ref_mean = means
            .iter()
            .find(|((p, q), _)| p == rp && q == rq)
            .and_then(|(_, m)| *m);
        let (Some(ref_mean), Some(mean)) = (ref_mean, cell.mean_accuracy) else {
            continue;
        };
        if ref_mean <= 0.0 {
            continue;
        }
        let name = format!("{rp}/{rq}");
        cell.drop_rate = Some(drop_rate(mean, ref_mean)?);
        for t in &mut cell.trials {
            t.result = t.result.clone().with_reference(name.clone(), ref_mean)?;
        }
        cell.reference = Some(name);
    }
    Ok(())
}
