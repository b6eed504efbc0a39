//! Cross-course knowledge tracing.
//!
//! The crate is organised as a pipeline:
//!
//! * [`data`] ingests interaction logs, filters them and aligns each learner's
//!   two per-course histories with the merged history.
//! * [`graph`] builds the question/concept graph, predicting concept-concept
//!   relations with an LLM (or an offline stand-in) and majority voting.
//! * [`semantics`] turns node texts into feature vectors.
//! * [`numcore`] is a small reverse-mode autodiff engine with AdamW.
//! * [`model`] is the forward pass: graph propagation, attention over the
//!   learning history, the bilinear discriminator and the prediction heads.
//! * [`negatives`] produces hard negative sequences for the contrastive term.
//! * [`trainer`] trains, evaluates and runs ablations.
//! * [`synth`] generates synthetic cross-course data with known ground truth.

pub mod data;
pub mod error;
pub mod graph;
pub mod llm;
pub mod model;
pub mod negatives;
pub mod numcore;
mod par;
pub mod rng;
pub mod semantics;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
