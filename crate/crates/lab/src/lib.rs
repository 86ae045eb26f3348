//! Experiment runners, file formats and the `primelab` command-line tool
//! built on `primelab-core`.

pub mod cli;
pub mod error;
pub mod format;
pub mod runners;
pub mod spec;
pub mod svg;

pub use error::{LabError, LabResult};
pub use spec::{Check, ExperimentSpec, RunReport, RunnerKind};
