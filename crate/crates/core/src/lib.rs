//! Deterministic simulation of federated training under data heterogeneity.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! computation: a closed-set neural network with exact reverse-mode
//! gradients, dataset generation and splitting, skew generators and metrics,
//! the FedSGD / FedAVG / cyclical-weight-transfer protocols, and evaluation.
//! File formats, experiment orchestration and the command line live in the
//! `fedskew` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod nn;
pub mod rng;
pub mod skew;
pub mod tensor;

pub use data::{LabeledDataset, SplitFractions, SynthSpec};
pub use error::{Error, Result};
pub use evaluation::RunResult;
pub use federation::{BatchSize, Method, Mitigations, ProtocolConfig, RoundLog};
pub use nn::{Arch, CategoryWeights, Layer, Mode, ModelState};
pub use skew::{Degradation, InstitutionShard, PartitionPlan, Regime, SkewReport};
pub use tensor::Tensor;
