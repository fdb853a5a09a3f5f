//! Configuration-driven experiments for the `manifold-dd` solvers: offline
//! dictionary builds, online and classical Schwarz runs, references, and the
//! benchmark tables (CSV) with their run reports (JSON).

pub mod commands;
pub mod config;
pub mod error;
pub mod setup;

pub use config::ExperimentConfig;
pub use error::CliError;
