//! Sandwich-structured sequence learning for transaction fraud detection.
//!
//! The default stack works "within, between, within":
//!
//! 1. a gradient-boosted tree ensemble turns each transaction's artificial
//!    features into leaf one-hots (`gbdt`);
//! 2. per-bucket GRU networks read zero-padded sequences of those vectors
//!    and emit a sequential feature vector (`sequence_builder`, `gru`);
//! 3. a random forest classifies the concatenation of both (`random_forest`).
//!
//! `pipeline` wires the stages together (plus the reordered variants used
//! for comparison), `synthetic_data` produces labelled streams with planted
//! fraud motifs, and `evaluation` computes PR curves and experiment tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod feature_engineering;
pub mod gbdt;
pub mod gru;
pub mod math;
pub mod pipeline;
pub mod random_forest;
pub mod seed;
pub mod sequence_builder;
pub mod synthetic_data;
pub mod tree;

pub use error::{Error, ErrorClass, Result, Stage, StageContext};
