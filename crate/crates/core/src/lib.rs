//! Semi-supervised semantic segmentation with fuzzy top-K pseudo-labels,
//! entropy-based pixel weighting, per-batch class rebalancing and
//! prototype contrastive regularization, built on a small in-crate
//! autodiff engine.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pseudolabel;
pub mod rebalance;
pub mod seeding;
pub mod teacher_student;
pub mod tensorkit;
pub mod verify;

pub use error::{Error, Result};
