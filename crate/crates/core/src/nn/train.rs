use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, RngState};
use super::{Adam, Model, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: History,
    /// Total optimizer steps taken.
    pub steps: u64,
}

// Keeps the shuffle stream distinct from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5EED_5A5A_u64;

/// Mini-batch training with per-epoch shuffling, dropout in training passes,
/// infer-mode validation, best-validation retention and optional early stopping.
pub fn train(
    mut model: Model<f32>,
    train_set: &[(&[f32], usize)],
    val_set: &[(&[f32], usize)],
    metadata: &str,
) -> Result<TrainOutcome, NnError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(cfg.adam, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f32], usize)> = chunk.iter().map(|&i| train_set[i]).collect();
            let dropout_seed = rng.random::<u64>();
            let (loss, grads) = model.loss_and_grads(&batch, Some(dropout_seed))?;
            adam.step(&mut model, &grads);
            loss_sum += loss as f64 * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = model.mean_loss(val_set)? as f64;
        if !val_loss.is_finite() {
            return Err(NnError::NaNLoss(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        log::info!("epoch {epoch}: train_loss={train_loss:.6} val_loss={val_loss:.6}");
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            let snapshot = Checkpoint {
                model: model.clone(),
                adam: adam.clone(),
                rng: RngState::capture(&rng),
                metadata: metadata.to_string(),
            };
            best = Some((val_loss, epoch, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let steps = adam.step;
    let (_, best_epoch, best) = match best {
        Some(b) => b,
        // Zero epochs requested: the untrained model is the best we have.
        None => (
            f64::INFINITY,
            0,
            Checkpoint {
                model,
                adam,
                rng: RngState::capture(&rng),
                metadata: metadata.to_string(),
            },
        ),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        steps,
    })
}
