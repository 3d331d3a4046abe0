//! Pipeline driver behind the `leadalloc` command.

pub mod config;
pub mod pipeline;

pub use config::{FileConfig, RunConfig};
pub use pipeline::{run_pipeline, ErrorKind, PipelineError, RunSummary, Stage};
