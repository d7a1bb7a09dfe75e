//! Batch driver: config parsing, single runs, sweeps, grid refinement and
//! the 1D demo, with JSON, CSV and legacy VTK outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod vtk;

pub use config::ExperimentConfig;
pub use error::CliError;
