//! File formats, run configuration and the command pipeline around
//! [`sdgd_core`].

pub mod config;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A user-facing input problem: bad config, flag or selector. Maps to exit code 1.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);
