//! groundkit: protocol and evaluation toolkit for retrieval-based visual
//! grounding, where a language model answers by selecting indices of
//! proposal boxes instead of regressing coordinates.
//!
//! Modules:
//!
//! - [`geometry`]: boxes, IoU/GIoU, L1 distance, coordinate quantization.
//! - [`grammar`]: special tokens, input sequences, grounded-answer parsing.
//! - [`encoding`]: RoI align, sin-cos box embeddings, object tokens.
//! - [`matching`]: Hungarian assignment, matching costs, prompt scoring.
//! - [`metrics`]: P/R at IoU thresholds, COCO-style AP, referring and region metrics.
//! - [`pathology`]: coordinate repetition, truncation, token error propagation.
//! - [`simulator`]: seeded retrieval-vs-regression and quantization experiments.
//! - [`io`]: on-disk formats for ground truth, predictions and reports.

pub mod encoding;
pub mod geometry;
pub mod grammar;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod pathology;
pub mod simulator;

pub use geometry::{BBox, Extent};
