//! Training-free human-object interaction scoring and HICO-DET style
//! evaluation.
//!
//! The pipeline has three stages, each reading and writing plain files:
//!
//! 1. [`pairing`] builds candidate (human, object) pairs from annotations or
//!    detector boxes.
//! 2. [`scoring`] turns precomputed region and prompt embeddings
//!    ([`archive`]) into scored HOI detections.
//! 3. [`evaluation`] computes per-class AP and the mAP report over
//!    full / rare / non-rare and the zero-shot splits of [`dataset`].

pub mod archive;
pub mod bbox;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod jsonl;
pub mod pairing;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
