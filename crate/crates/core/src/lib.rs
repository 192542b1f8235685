//! Calibration-aware post-processing for frame-level affect prediction.
//!
//! This crate takes precomputed per-frame feature streams (facial
//! embeddings, acoustic features, frame encodings) and turns them into
//! temporally consistent predictions for four tasks: categorical
//! expressions, valence/arousal, action units, and violence detection.
//!
//! The pieces, in pipeline order:
//!
//! - [`datamodel`]: streams, label tracks, manifests, and their file formats
//! - [`synth`]: deterministic synthetic datasets for desk-scale experiments
//! - [`nn`]: trainable prediction heads with exact backpropagation
//! - [`calibrate`]: logit-bias search and per-channel threshold tuning
//! - [`temporal`]: smoothing, confidence gating, fusion, decoding, and
//!   sliding-window aggregation for video
//! - [`metrics`]: the challenge metrics (macro F1, accuracy, concordance)
//!
//! All operations are pure functions over immutable inputs, and every random
//! choice flows from an explicit seed, so identical inputs give bit-identical
//! outputs.

pub mod calibrate;
pub mod datamodel;
pub mod error;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod temporal;
pub mod util;

pub use error::{Error, Result};
