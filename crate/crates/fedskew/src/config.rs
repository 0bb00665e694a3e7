//! Declarative experiment configuration.

use std::collections::BTreeSet;
use std::path::PathBuf;

use fedskew_core::{Arch, BatchSize, Method, Mitigations, PartitionPlan, ProtocolConfig, Regime};
use serde::{Deserialize, Serialize};

use crate::data::DataSource;
use crate::error::{invalid, Result};

pub const DEFAULT_REPEATS: usize = 4;

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// A preset name ("tiny-conv", ...) or a full layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Preset(String),
    Custom(Arch),
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::Preset("tiny-conv".into())
    }
}

impl ArchSpec {
    pub fn resolve(&self, input: [usize; 3], num_classes: usize) -> Result<Arch> {
        match self {
            ArchSpec::Preset(name) => Ok(Arch::preset(name, input, num_classes)?),
            ArchSpec::Custom(arch) => {
                if arch.input != input || arch.num_classes != num_classes {
                    return Err(invalid!(
                        "architecture expects {:?} with {} classes, data is {:?} with {}",
                        arch.input,
                        arch.num_classes,
                        input,
                        num_classes
                    ));
                }
                Ok(arch.clone())
            }
        }
    }
}

/// Optimisation settings shared by every protocol unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub batch_size: BatchSize,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default)]
    pub arch: ArchSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub id: String,
    /// Chart the partition belongs to; defaults to its regime name.
    #[serde(default)]
    pub figure: Option<String>,
    pub regime: Regime,
    #[serde(default)]
    pub scale_to_train: bool,
}

impl PartitionSpec {
    pub fn figure(&self) -> String {
        self.figure
            .clone()
            .unwrap_or_else(|| regime_name(&self.regime).to_string())
    }
}

pub fn regime_name(regime: &Regime) -> &'static str {
    PartitionPlan {
        regime: regime.clone(),
        seed: 0,
    }
    .regime_name()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub id: String,
    pub method: Method,
    #[serde(default)]
    pub mitigations: Mitigations,
    #[serde(default)]
    pub fedavg_uniform: bool,
    #[serde(default)]
    pub batch_size: Option<BatchSize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

/// The cell that drop rates are measured against. A missing key means
/// "the same as the cell being scored", so `{"partition": "split1"}`
/// compares every protocol with itself on Split 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default)]
    pub partition: Option<String>,
    #[serde(default)]
    pub protocol: Option<String>,
}

impl ReferenceSpec {
    pub fn cell<'a>(&'a self, partition: &'a str, protocol: &'a str) -> (&'a str, &'a str) {
        (
            self.partition.as_deref().unwrap_or(partition),
            self.protocol.as_deref().unwrap_or(protocol),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub data: DataSource,
    pub partitions: Vec<PartitionSpec>,
    pub protocols: Vec<ProtocolSpec>,
    pub training: TrainingSpec,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    /// Keep the per-trial cross-institution accuracy matrices.
    #[serde(default)]
    pub cross_matrix: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn check_id(field: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.+".contains(c));
    if ok {
        Ok(())
    } else {
        Err(invalid!(
            "{}: {:?} must be non-empty and use only letters, digits, '-', '_', '.', '+'",
            field,
            id
        ))
    }
}

impl ExperimentConfig {
    pub fn protocol_config(
        &self,
        p: &ProtocolSpec,
        arch: Arch,
        model_seed: u64,
        data_seed: u64,
    ) -> ProtocolConfig {
        ProtocolConfig {
            method: p.method,
            mitigations: p.mitigations,
            batch_size: p.batch_size.unwrap_or(self.training.batch_size),
            lr: p.lr.unwrap_or(self.training.lr),
            epochs: p.epochs.unwrap_or(self.training.epochs),
            model_seed,
            data_seed,
            arch,
            fedavg_uniform: p.fedavg_uniform,
            trace: false,
        }
    }

    /// Semantic checks; each message names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(invalid!("repeats: must be at least 1"));
        }
        if let DataSource::Synth(s) = &self.data {
            s.spec
                .validate()
                .map_err(|e| invalid!("data.synth.spec: {}", e))?;
            s.split
                .validate()
                .map_err(|e| invalid!("data.synth.split: {}", e))?;
        }
        let mut seen = BTreeSet::new();
        for (i, p) in self.partitions.iter().enumerate() {
            check_id(&format!("partitions[{i}].id"), &p.id)?;
            if let Some(f) = &p.figure {
                check_id(&format!("partitions[{i}].figure"), f)?;
            }
            if !seen.insert(p.id.as_str()) {
                return Err(invalid!("partitions[{}].id: duplicate id {:?}", i, p.id));
            }
            PartitionPlan {
                regime: p.regime.clone(),
                seed: 0,
            }
            .validate()
            .map_err(|e| invalid!("partitions[{}].regime: {}", i, e))?;
            if p.scale_to_train && !matches!(p.regime, Regime::Quantity { .. }) {
                return Err(invalid!(
                    "partitions[{}].scale_to_train: applies to quantity regimes only",
                    i
                ));
            }
        }
        let arch = match &self.training.arch {
            ArchSpec::Preset(name) => {
                Arch::preset(name, [1, 16, 16], 2).map_err(|e| invalid!("training.arch: {}", e))?
            }
            ArchSpec::Custom(arch) => arch.clone(),
        };
        let mut seen = BTreeSet::new();
        for (i, p) in self.protocols.iter().enumerate() {
            check_id(&format!("protocols[{i}].id"), &p.id)?;
            if !seen.insert(p.id.as_str()) {
                return Err(invalid!("protocols[{}].id: duplicate id {:?}", i, p.id));
            }
            self.protocol_config(p, arch.clone(), 0, 0)
                .validate()
                .map_err(|e| invalid!("protocols[{}]: {}", i, e))?;
        }
        if let Some(r) = &self.reference {
            if let Some(p) = &r.partition {
                if !self.partitions.iter().any(|x| &x.id == p) {
                    return Err(invalid!("reference.partition: no partition named {:?}", p));
                }
            }
            if let Some(p) = &r.protocol {
                if !self.protocols.iter().any(|x| &x.id == p) {
                    return Err(invalid!("reference.protocol: no protocol named {:?}", p));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a configuration. Syntax errors carry the line and
/// column; unknown keys are rejected by name.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| invalid!("invalid configuration: {}", e))?;
    cfg.validate()?;
    Ok(cfg)
}
