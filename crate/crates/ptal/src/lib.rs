//! Proposal-based point-level temporal action localization on synthetic
//! feature sequences.
//!
//! The crate covers the full workflow end to end:
//!
//! 1. [`datagen`] builds a seeded synthetic corpus of feature sequences with
//!    ground-truth action segments and simulated single-timestamp labels.
//! 2. [`keypoint`] trains a per-frame keypoint detector from those labels,
//!    smooths its heatmap, extracts peak anchor points, and slices each
//!    video into fixed-length short videos.
//! 3. [`mapper`] pre-trains a small network that turns a `(center, length)`
//!    proposal into a soft temporal mask, then freezes it so gradients can
//!    flow through an otherwise non-differentiable step.
//! 4. [`localizer`] trains a location predictor and a shared classifier
//!    through the frozen mapper using only category labels.
//! 5. [`pipeline`] runs inference without any post-processing and
//!    [`metrics`] scores predictions with mAP@IoU and detection statistics.
//!
//! Everything is driven by the `ptal` binary; see [`cli`].

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod keypoint;
pub mod localizer;
pub mod mapper;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod savgol;

pub use error::{PtalError, Result};
