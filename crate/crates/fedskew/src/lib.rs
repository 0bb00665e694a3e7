//! File formats, the experiment runner, reports and the command line for
//! [`fedskew_core`].
//!
//! A typical pipeline: generate or load IDX data ([`data`]), partition it into
//! institutions ([`manifest`]), run protocols over repeated seeded trials
//! ([`experiment`]) and write JSON, CSV and SVG outputs ([`report`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod manifest;
pub mod report;
pub mod svg;

pub use config::{parse_config, ExperimentConfig};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentReport};
pub use report::emit_report;
