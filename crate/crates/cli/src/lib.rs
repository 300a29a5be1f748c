//! Scenario loading and command pipelines for the `wmlab` binary.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{Channel, Context, Outcome, Variant};
pub use error::CliError;
pub use scenario::Scenario;
