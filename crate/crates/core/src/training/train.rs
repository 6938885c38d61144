use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cosine_sim, gradients, project, total_loss, ProjectionHead, TemperatureScaler, TrainState, TrainingError};
use crate::config::{Hyperparams, RunConfig};
use crate::mining::{self, Eligibility, Triplet};
use crate::records::PredictionRecord;

/// Stream used for the per-epoch shuffles, distinct from head initialization.
const SHUFFLE_STREAM: u64 = 1;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mining seed for one batch of one epoch.
pub(crate) fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ epoch as u64) ^ batch as u64)
}

fn check_inputs(records: &[PredictionRecord], params: &Hyperparams) -> Result<usize, TrainingError> {
    params
        .validate()
        .map_err(|e| TrainingError::InvalidParams(e.to_string()))?;
    let first = records.first().ok_or(TrainingError::Empty)?;
    let d_in = first.anchor_embedding.len();
    for r in records {
        if r.gold_id.is_none() {
            return Err(TrainingError::GoldRequired);
        }
        for got in [r.anchor_embedding.len(), r.answer_embedding.len()] {
            if got != d_in {
                return Err(TrainingError::DimMismatch { expected: d_in, got });
            }
        }
    }
    Ok(d_in)
}

/// Runs seeded epochs of shuffle, batch, mine, gradient step. Input records
/// are only read.
pub fn train(records: &[PredictionRecord], params: &Hyperparams) -> Result<TrainState, TrainingError> {
    let d_in = check_inputs(records, params)?;
    let flags = mining::eligibility(records, params)?;
    let mut state = TrainState::init(d_in, params.projection_dim, params.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let lr = params.learning_rate;

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (b, idx) in order.chunks(params.batch_size).enumerate() {
            let batch: Vec<&PredictionRecord> = idx.iter().map(|&i| &records[i]).collect();
            let batch_flags: Vec<Eligibility> = idx.iter().map(|&i| flags[i]).collect();
            let triplets = mining::assemble_triplets(
                &batch,
                &batch_flags,
                params.hard_negatives,
                batch_seed(params.seed, epoch, b),
            );
            let loss = total_loss(&batch, &triplets, params, &state)?;
            let g = gradients(&batch, &triplets, params, &state)?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
            for (w, d) in state.head.weights.iter_mut().zip(&g.d_weights) {
                *w -= lr * d;
            }
            for (w, d) in state.head.bias.iter_mut().zip(&g.d_bias) {
                *w -= lr * d;
            }
            if params.calibrate_temperature {
                state.scaler.log_t -= lr * g.d_log_t;
                state.scaler.clamp();
            }
            state.step += 1;
            epoch_loss += loss;
            n_batches += 1;
        }
        state.loss_history.push(epoch_loss / n_batches as f64);
    }
    Ok(state)
}

/// Mean of `sim(P a, P p) − sim(P a, P n)` over triplets.
pub fn mean_triplet_margin(triplets: &[Triplet], head: &ProjectionHead) -> Result<f64, TrainingError> {
    if triplets.is_empty() {
        return Err(TrainingError::Empty);
    }
    let mut sum = 0.0;
    for t in triplets {
        let a = project(head, &t.anchor)?;
        sum += cosine_sim(&a, &project(head, &t.positive)?)? - cosine_sim(&a, &project(head, &t.negative)?)?;
    }
    Ok(sum / triplets.len() as f64)
}

/// `epoch,mean_total_loss` with epochs numbered from 1.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_total_loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, l);
    }
    out
}

/// Saved training result with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub head: ProjectionHead,
    pub log_t: f64,
    pub step: u64,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, state: &TrainState) -> Self {
        Self {
            config,
            head: state.head.clone(),
            log_t: state.scaler.log_t,
            step: state.step,
            seed: state.seed,
            loss_history: state.loss_history.clone(),
        }
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            head: self.head.clone(),
            scaler: TemperatureScaler { log_t: self.log_t },
            step: self.step,
            seed: self.seed,
            loss_history: self.loss_history.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization is infallible")
    }
}

fn checkpoint_err(path: &Path, message: impl ToString) -> TrainingError {
    TrainingError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), TrainingError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_json() + "\n").map_err(|e| checkpoint_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainingError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| checkpoint_err(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| checkpoint_err(path, e))?;
    ck.head.check_shape()?;
    if !ck.head.is_finite() || !ck.log_t.is_finite() {
        return Err(checkpoint_err(path, "non-finite parameters"));
    }
    ck.config.params.validate().map_err(|e| checkpoint_err(path, e))?;
    Ok(ck)
}
