//! Face-voice association with maximum class separation as an inductive bias.
//!
//! Two small projection heads map precomputed face and voice features into a
//! shared space. Their weighted average is multiplied by a fixed matrix whose
//! columns are the vertices of a regular simplex, producing speaker logits.
//! Training combines cross-entropy with an orthogonality-constraint loss;
//! evaluation covers cross-modal verification (EER/AUC) and matching
//! (gallery accuracy).
//!
//! Modules:
//! - [`simplex`]: the fixed prototype matrix.
//! - [`diffcore`]: differentiable primitives, gradient checking, Adam.
//! - [`model`]: projection heads, losses, training loop, inference.
//! - [`metrics`]: ROC, EER, AUC, matching accuracy, reports.
//! - [`data`]: datasets, synthetic generation, splits, trial lists.
//! - [`cli`]: reproducible command runners behind the `facevoice` binary.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod model;
pub mod simplex;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
