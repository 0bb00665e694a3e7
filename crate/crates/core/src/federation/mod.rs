//! Simulated parameter server running FedSGD, FedAVG, cyclical weight
//! transfer and the centrally hosted baseline.
//!
//! All protocols are barrier-synchronized and single-threaded; every random
//! choice is keyed by (data-order seed, institution, local epoch), so a run
//! is a pure function of its shards and configuration.

mod aggregate;
mod protocols;
mod schedule;

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_bn_buffers, aggregate_gradients, aggregate_weights, proportional_weights,
    uniform_weights,
};
pub use protocols::{run_centralized, run_cwt, run_fedavg, run_fedsgd, run_protocol, TrainOutcome};
pub use schedule::{cwt_visit_budgets, fedavg_local_steps, fedsgd_iterations, BatchStream};

use crate::error::{invalid, Result};
use crate::nn::Arch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedsgd,
    Fedavg,
    Cwt,
    Centralized,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fedsgd => "fedsgd",
            Method::Fedavg => "fedavg",
            Method::Cwt => "cwt",
            Method::Centralized => "centralized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedsgd" => Ok(Method::Fedsgd),
            "fedavg" => Ok(Method::Fedavg),
            "cwt" => Ok(Method::Cwt),
            "centralized" => Ok(Method::Centralized),
            other => Err(invalid!(
                "unknown method {:?} (fedsgd, fedavg, cwt, centralized)",
                other
            )),
        }
    }
}

/// Mitigation switches: proportional weighting (WP), class-weighted loss
/// (WL) and averaging of BN running statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mitigations {
    #[serde(default)]
    pub wp: bool,
    #[serde(default)]
    pub wl: bool,
    #[serde(default)]
    pub bn_avg: bool,
}

impl fmt::Display for Mitigations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.wp {
            parts.push("wp");
        }
        if self.wl {
            parts.push("wl");
        }
        if self.bn_avg {
            parts.push("bn");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

/// Minibatch size, or the whole local dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    Fixed(usize),
    Full(FullBatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullBatch {
    Full,
}

impl BatchSize {
    pub const FULL: BatchSize = BatchSize::Full(FullBatch::Full);

    pub fn parse(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Self::FULL);
        }
        s.parse::<usize>()
            .map(BatchSize::Fixed)
            .map_err(|_| invalid!("batch size must be an integer or \"full\", got {:?}", s))
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Fixed(b) => write!(f, "{}", b),
            BatchSize::Full(_) => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub method: Method,
    #[serde(default)]
    pub mitigations: Mitigations,
    pub batch_size: BatchSize,
    pub lr: f64,
    /// Rounds (epochs for the baseline, cycles for CWT).
    pub epochs: usize,
    pub model_seed: u64,
    pub data_seed: u64,
    pub arch: Arch,
    /// Weight FedAVG aggregation uniformly instead of by `Q_i / Q`.
    #[serde(default)]
    pub fedavg_uniform: bool,
    /// Record global parameters after every update.
    #[serde(default)]
    pub trace: bool,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mitigations.bn_avg && !matches!(self.method, Method::Fedsgd | Method::Fedavg) {
            return Err(invalid!(
                "BN averaging applies to fedsgd and fedavg only, not {}",
                self.method.name()
            ));
        }
        if let BatchSize::Fixed(b) = self.batch_size {
            if b < 2 && self.arch.has_batch_norm() {
                return Err(invalid!(
                    "batch size must be at least 2 with batch normalization, got {}",
                    b
                ));
            }
            if b == 0 {
                return Err(invalid!("batch size must be positive"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid!(
                "learning rate must be positive and finite, got {}",
                self.lr
            ));
        }
        self.arch.extents()?;
        Ok(())
    }
}

/// One global synchronization cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean training loss per institution over the round.
    pub train_loss: Vec<f64>,
    /// Validation selection metric of the global model after the round.
    pub val_metric: f64,
    /// Gradient or weight transfers during the round.
    pub communication: usize,
}

#[allow(dead_code)]
fn assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<ProtocolConfig>();
    check::<crate::nn::ModelState>();
}
