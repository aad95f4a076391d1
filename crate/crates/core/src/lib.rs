//! Allocation-only core of the metatrack toolkit.
//!
//! Everything in this crate is pure computation over in-memory values:
//! a small reverse-mode differentiation kernel with exact Hessian-vector
//! products, the linear Re-ID head and its losses, episodic task
//! construction, the MAML optimizer, similarity-weighted online
//! initialization, the tracking-by-detection loop, CLEAR MOT / identity
//! metrics, and a synthetic sequence generator. File formats, the CLI and
//! anything touching the OS live in the `metatrack` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod episodes;
pub mod maml;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod online;
pub mod synth;
pub mod tracker;

pub use episodes::{EpisodeTask, TaskDistribution};
pub use maml::{MamlConfig, MetaMode, TaskMemoryEntry, TrainLog};
pub use metrics::{BBox, EvalReport};
pub use model::{FeatureVector, HeadParams, LabeledSample};
pub use numkit::{CostMatrix, Vector};
pub use online::OnlineState;
pub use tracker::{Detection, Track, TrackState};
