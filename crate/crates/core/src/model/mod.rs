//! Projection heads, fusion, losses, training and inference.
//!
//! Each modality goes through `linear -> relu -> dropout -> l2 normalize`.
//! The fused embedding is `m = w f + (1 - w) v` with `w = sigmoid(fusion_logit)`.
//! Speaker logits come from the fixed separation matrix (variants `MSM` and
//! `OURS`) or from a trainable bias-free linear classifier (`CE` and `FOP`).
//! In front of the matrix, a trainable bias-free projection maps `m` to
//! `n_speakers - 1` dimensions; with the projection disabled the heads must
//! be exactly that wide.

mod checkpoint;
mod config;
mod forward;
mod inference;
mod loss;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Modality, ModelConfig, OcNormalization, OcPairScope, Variant};
pub use forward::{forward_instance, InstanceEmbeddings};
pub use inference::{embed, match_probe, score_pair};
pub use loss::{batch_loss, oc_loss, oc_loss_and_grad, Batch, LossBreakdown};
pub use params::{init_params, ModelParams};
pub use train::{train, EpochRecord, TrainOptions, TrainOutcome, TrainingInstance, ValidationPair};
