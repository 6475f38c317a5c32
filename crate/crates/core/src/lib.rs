//! Multi-view multi-human association and tracking driven by
//! self-consistency.
//!
//! Pipeline: per-slot embeddings → [`affinity`] (matching matrices and the
//! global spatial-temporal affinity) → [`solver`] (consistent assignment and
//! per-block permutations) → [`tracker`] (joint over-time and cross-view
//! identity management). [`losses`] holds the self-supervised objectives,
//! [`metrics`] the evaluation suite and [`synthetic`] the ground-truth
//! generators. [`io`], [`config`] and [`cli`] cover file formats, run
//! settings and the `mvmhat` binary.

pub mod affinity;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod records;
pub mod solver;
pub mod synthetic;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::BBox;
