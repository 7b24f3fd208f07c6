//! Single-process simulator of server-to-worker compressed subgradient
//! optimization on non-smooth convex finite sums.
//!
//! The crate provides the distributed subgradient baseline together with the
//! EF21-P and MARINA-P downlink-compressed methods, the TopK / RandK / PermK
//! compressor family, theory-derived stepsize schedules (constant, decreasing,
//! Polyak), a synthetic `f(x) = (1/n) Σ ‖A_i x‖₁` problem generator, a bit
//! accounting model, and an experiment harness with factor tuning and SVG
//! reporting. Everything is deterministic given the configured seeds.

pub mod compressors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod problem;
pub mod report;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
