//! File formats, checkpoints, run manifests and the command-line front end
//! of the metatrack toolkit. The numerical work lives in `metatrack_core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use checkpoint::Checkpoint;
pub use error::{CliError, ErrorKind};
pub use manifest::RunManifest;
