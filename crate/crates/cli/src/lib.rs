//! Command-line orchestration of the two training stages, evaluation,
//! manifest filtering and Label Studio ingest.

pub mod app;
pub mod config;
mod error;
pub mod eval;
pub mod filter;
pub mod ingest;
pub mod toy;
pub mod train;

pub use error::{CliError, Result};
