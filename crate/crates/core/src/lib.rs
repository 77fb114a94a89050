//! Hardware-aware attribute prediction for neural-network computation graphs.
//!
//! The crate trains and evaluates a small graph transformer that maps a
//! computation DAG plus a hardware platform description to a predicted
//! attribute (inference latency in milliseconds, or task accuracy).
//! Nodes and platforms are rendered into short text templates, embedded
//! into a shared vector space, and processed by attention layers whose
//! receptive fields follow the graph's one- and two-hop adjacency
//! structure, mixed per node by a learned gate.
//!
//! Major pieces:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff
//!   and Adam. Everything is deterministic given a seed.
//! - [`graph`]: DAG parsing, validation, canonical topological order, and
//!   derivation of the successor / predecessor / two-hop-predecessor masks.
//! - [`embed`]: text templates for nodes and platforms, the whitespace
//!   tokenizer and vocabulary, and the pluggable sequence encoders.
//! - [`dgsa`]: the gated multi-branch graph attention layer and the
//!   surrounding transformer block.
//! - [`model`]: full predictor assembly, loss, and checkpointing.
//! - [`synth`]: synthetic dataset generator with a closed-form latency
//!   oracle, used for desk-scale end-to-end validation.
//! - [`data`], [`metrics`], [`train`]: dataset IO, split protocols,
//!   evaluation metrics, and the train/finetune loops.

pub mod data;
pub mod dgsa;
pub mod embed;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
