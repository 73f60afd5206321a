//! Configuration, staged pipeline and file emission behind the `waveforce` binary.

pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{ConfigError, RunConfig};
pub use pipeline::{run_pipeline, run_sweep, RunManifest, StageStatus};
