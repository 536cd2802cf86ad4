//! Config ingestion and run-directory persistence.

pub mod config;
pub mod qvif;
pub mod run;

pub use config::Config;
pub use run::{load_run, save_run, GridSpec, Run, RunManifest};
