//! Projection head, temperature scaler, losses, gradients and the training
//! loop.
//!
//! Two parameter groups are trained. The projection head maps anchor and
//! answer embeddings into a space where the triplet hinge is applied. The
//! temperature scaler rescales logits recovered as `ln p` so the
//! confidence-alignment term has something to move.

mod grad;
mod gradcheck;
mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::MiningError;
use crate::uncertainty::UncertaintyError;

pub use grad::{gradients, Gradients};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use loss::{alignment_loss, apply_temperature, contrastive_loss, tempered_probs, total_loss};
pub use train::{load_checkpoint, loss_history_csv, mean_triplet_margin, save_checkpoint, train, Checkpoint};

/// Scale of the uniform head initialization.
pub const INIT_SCALE: f64 = 0.05;
pub const MIN_LOG_T: f64 = -4.605_170_185_988_091; // ln 0.01
pub const MAX_LOG_T: f64 = 4.605_170_185_988_091; // ln 100

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("gold required")]
    GoldRequired,
    #[error("batch has no records with gold")]
    NoGold,
    #[error("empty record set")]
    Empty,
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// Affine map `v ↦ W v + b` with `W` stored row-major (`d_proj × d_in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub d_in: usize,
    pub d_proj: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    pub fn zeros(d_in: usize, d_proj: usize) -> Self {
        Self {
            d_in,
            d_proj,
            weights: vec![0.0; d_in * d_proj],
            bias: vec![0.0; d_proj],
        }
    }

    /// Weights uniform in `[-INIT_SCALE, INIT_SCALE]`, zero bias.
    pub fn seeded(d_in: usize, d_proj: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(d_in, d_proj);
        for w in &mut head.weights {
            *w = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        head
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.d_in + col]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    pub fn check_shape(&self) -> Result<(), TrainingError> {
        if self.weights.len() != self.d_in * self.d_proj {
            return Err(TrainingError::DimMismatch {
                expected: self.d_in * self.d_proj,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.d_proj {
            return Err(TrainingError::DimMismatch {
                expected: self.d_proj,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

pub fn project(head: &ProjectionHead, v: &[f64]) -> Result<Vec<f64>, TrainingError> {
    if v.len() != head.d_in {
        return Err(TrainingError::DimMismatch {
            expected: head.d_in,
            got: v.len(),
        });
    }
    Ok(head
        .weights
        .chunks_exact(head.d_in)
        .zip(&head.bias)
        .map(|(row, b)| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect())
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, TrainingError> {
    if u.len() != v.len() {
        return Err(TrainingError::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu <= NORM_EPS || nv <= NORM_EPS {
        return Err(TrainingError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Temperature `t = exp(log_t)` applied to logits `ln p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    pub log_t: f64,
}

impl Default for TemperatureScaler {
    fn default() -> Self {
        Self { log_t: 0.0 }
    }
}

impl TemperatureScaler {
    pub fn from_temperature(t: f64) -> Self {
        Self { log_t: t.ln() }
    }

    pub fn temperature(&self) -> f64 {
        self.log_t.exp()
    }

    /// Keeps `t` within `[0.01, 100]`.
    pub fn clamp(&mut self) {
        self.log_t = self.log_t.clamp(MIN_LOG_T, MAX_LOG_T);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub head: ProjectionHead,
    pub scaler: TemperatureScaler,
    pub step: u64,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn init(d_in: usize, d_proj: usize, seed: u64) -> Self {
        Self {
            head: ProjectionHead::seeded(d_in, d_proj, seed),
            scaler: TemperatureScaler::default(),
            step: 0,
            seed,
            loss_history: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let mut id = ProjectionHead::zeros(3, 3);
        for i in 0..3 {
            id.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(project(&id, &[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);

        let mut h = ProjectionHead::zeros(2, 2);
        h.bias = vec![0.3, -0.7];
        assert_eq!(project(&h, &[9.0, 9.0]).unwrap(), vec![0.3, -0.7]);

        // W = [[1, 2], [3, 4], [5, 6]], b = [0.5, 0, -1], v = [2, -1]
        let h = ProjectionHead {
            d_in: 2,
            d_proj: 3,
            weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            bias: vec![0.5, 0.0, -1.0],
        };
        assert_eq!(project(&h, &[2.0, -1.0]).unwrap(), vec![0.5, 2.0, 3.0]);
        assert!(matches!(
            project(&h, &[1.0]),
            Err(TrainingError::DimMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(TrainingError::ZeroVector)
        ));
    }

    #[test]
    fn seeded_head_is_bounded_and_reproducible() {
        let a = ProjectionHead::seeded(16, 64, 5);
        assert_eq!(a, ProjectionHead::seeded(16, 64, 5));
        assert_ne!(a, ProjectionHead::seeded(16, 64, 6));
        assert!(a.weights.iter().all(|w| w.abs() <= INIT_SCALE));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn scaler_clamps_to_range() {
        let mut s = TemperatureScaler { log_t: 10.0 };
        s.clamp();
        assert!((s.temperature() - 100.0).abs() < 1e-9);
        let mut s = TemperatureScaler { log_t: -10.0 };
        s.clamp();
        assert!((s.temperature() - 0.01).abs() < 1e-12);
        assert!((TemperatureScaler::from_temperature(2.0).temperature() - 2.0).abs() < 1e-15);
    }
}
