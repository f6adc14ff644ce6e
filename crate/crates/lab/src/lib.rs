//! Experiment driver: configs, dataset generators, runners and plots.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod output;
pub mod svg;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use experiments::{run_experiment, Summary};
