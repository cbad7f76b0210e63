//! Pipeline runner and prediction server for the OOD-gated defense.

pub mod config;
pub mod error;
pub mod log;
pub mod pipeline;
pub mod serve;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::Run;
