//! Generative laboratory for in-context learning over a mixture of
//! factorial hidden Markov models.
//!
//! The crate builds a synthetic pretraining distribution (a uniform mixture
//! of HMMs whose hidden state factors into an entity chain and a property
//! chain), samples corpora and in-context prompts from it, and runs the
//! exact Bayesian posterior-predictive next-token predictor over the
//! mixture. A companion module evaluates the distinguishability condition,
//! mismatch constants, and calibration bounds that govern when the exact
//! predictor solves the in-context task.
//!
//! Module map:
//! - [`vocab`]: token vocabulary with a designated delimiter.
//! - [`hmm`]: one factorial HMM concept and exact log-space inference.
//! - [`gen`]: construction of the mixture and document sampling.
//! - [`corpus`]: corpus file formats (text plus sidecar metadata).
//! - [`prompt`]: in-context prompt sampling and ground-truth labels.
//! - [`bayes`]: the exact in-context predictor and its 0-1 risk.
//! - [`theory`]: constants, positional KL estimates, distinguishability
//!   verdicts, calibration function, and excess-risk bounds.
//! - [`seed`]: named deterministic sub-streams from one master seed.

pub mod bayes;
pub mod corpus;
pub mod error;
pub mod gen;
pub mod hmm;
pub mod matrix;
pub mod prompt;
pub mod seed;
pub mod theory;
pub mod vocab;

pub use error::{GincError, Result};
pub use gen::{Document, GincConfig};
pub use hmm::{ConceptParams, ForwardState, HiddenState, HmmMixture, MemoryMatrix};
pub use matrix::Matrix;
pub use prompt::{LabelMode, Prompt, PromptConfig};
pub use vocab::Vocabulary;

/// Tolerance for stochasticity checks on constructed matrices and
/// distributions.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Tolerance for inference identities (likelihood folds, posterior sums).
pub const INFERENCE_TOLERANCE: f64 = 1e-9;
