use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, init_params, score_pair, Batch, ModelConfig, ModelParams};
use crate::diffcore::{AdamConfig, AdamState};
use crate::error::{invalid, Error, Result};
use crate::metrics::{eer, ScoredTrials};
use crate::simplex::build_separation_matrix;

/// One training instance with its speaker index in `0..n_speakers`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub face: Vec<f64>,
    pub voice: Vec<f64>,
    pub speaker: usize,
}

/// A labelled face/voice pair used for validation EER.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPair {
    pub face: Vec<f64>,
    pub voice: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Instance-weighted mean of the batch objectives.
    pub train_loss: f64,
    pub valid_eer: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    let at = format!("epoch {epoch}, batch {batch}");
    match err {
        Error::NumericFailure(m) => Error::NumericFailure(format!("{at}: {m}")),
        Error::DegenerateInput(m) => Error::DegenerateInput(format!("{at}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{at}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{at}: {m}")),
        other => other,
    }
}

fn validation_eer(params: &ModelParams, valid: &[ValidationPair]) -> Result<Option<f64>> {
    let has_pos = valid.iter().any(|p| p.label);
    let has_neg = valid.iter().any(|p| !p.label);
    if !(has_pos && has_neg) {
        return Ok(None);
    }
    let scores = valid
        .iter()
        .map(|p| score_pair(params, &p.face, &p.voice))
        .collect::<Result<Vec<_>>>()?;
    let labels = valid.iter().map(|p| p.label).collect();
    let trials = ScoredTrials::new(scores, labels)?;
    Ok(Some(eer(&trials)?.eer))
}

/// Trains from `init_params(config, opts.seed)` with per-epoch shuffling and
/// one Adam step per mini-batch.
///
/// When `valid` holds both positive and negative pairs, the returned
/// parameters are those of the epoch with the lowest validation EER (the
/// latest such epoch on ties); otherwise those of the last epoch.
pub fn train(
    config: &ModelConfig,
    train_set: &[TrainingInstance],
    valid: &[ValidationPair],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if opts.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut params = init_params(config, opts.seed)?;
    if opts.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            history: Vec::new(),
            best_epoch: None,
        });
    }
    if train_set.is_empty() {
        return Err(invalid("empty training set"));
    }
    let matrix = if config.variant.uses_matrix() {
        Some(build_separation_matrix(config.n_speakers)?)
    } else {
        None
    };

    let mut adam = AdamState::new(opts.adam, &params.tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&i| &train_set[i]).collect());
            let loss = batch_loss(&mut params, &batch, matrix.as_ref(), config, true, &mut rng)
                .map_err(|e| locate(e, epoch + 1, b + 1))?;
            if !loss.total.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "epoch {}, batch {}: loss is {}",
                    epoch + 1,
                    b + 1,
                    loss.total
                )));
            }
            weighted_loss += loss.total * chunk.len() as f64;
            adam.step(&mut params.tensors_mut(), epoch)
                .map_err(|e| locate(e, epoch + 1, b + 1))?;
        }

        let valid_eer = validation_eer(&params, valid).map_err(|e| locate(e, epoch + 1, 0))?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: weighted_loss / train_set.len() as f64,
            valid_eer,
            lr: opts.adam.lr_at_epoch(epoch),
        });
        if let Some(v) = valid_eer {
            if best.as_ref().is_none_or(|(b, _, _)| v <= *b) {
                best = Some((v, epoch + 1, params.clone()));
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, opts.epochs),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch: Some(best_epoch),
    })
}
