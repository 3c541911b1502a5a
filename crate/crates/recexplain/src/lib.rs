//! Post-hoc causal explanations for black-box sequential recommenders.
//!
//! The pipeline: load interaction logs, split them chronologically, train a
//! black-box next-item recommender, perturb each user's input sequence with a
//! sequence VAE, query the black box on the perturbations, fit a per-user
//! causal dependency model over (input item -> output item) pairs, select an
//! item-level explanation, and verify it with do-probability estimates over
//! the perturbation set.

pub mod causal;
pub(crate) mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod perturbation;
pub mod pipeline;
pub mod recommender;

pub use error::{Error, Result};
