//! Experiment runner for `mdflow-core`: INI configuration, CSV artifacts,
//! file-based audits and the certification suite behind the `mdflow`
//! binary.

pub mod certify;
pub mod config;
pub mod csvio;
pub mod error;
pub mod run;

pub use certify::{certify_file, certify_suite, CertificateRow};
pub use config::{Experiment, RunConfig};
pub use error::{CliError, Result};
pub use run::{run, run_file, RunSummary};
