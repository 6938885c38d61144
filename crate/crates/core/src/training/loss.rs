use std::borrow::Borrow;

use super::{cosine_sim, project, ProjectionHead, TemperatureScaler, TrainState, TrainingError};
use crate::config::Hyperparams;
use crate::mining::Triplet;
use crate::records::{AnswerDistribution, AnswerId, PredictionRecord, PROB_FLOOR};
use crate::uncertainty::UncertaintyError;

/// Tempered softmax over a record's entries, plus the gold id when the
/// distribution omits it (at the probability floor).
pub(crate) struct Tempered {
    pub ids: Vec<AnswerId>,
    /// Scaled logits `ln p / t`.
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    /// `ln Σ exp(u)`.
    pub log_norm: f64,
}

impl Tempered {
    pub fn new(dist: &AnswerDistribution, extra: Option<AnswerId>, log_t: f64) -> Self {
        let mut ids: Vec<AnswerId> = dist.entries.iter().map(|&(id, _)| id).collect();
        let mut z: Vec<f64> = dist.entries.iter().map(|&(_, p)| p.max(PROB_FLOOR).ln()).collect();
        if let Some(g) = extra {
            if !ids.contains(&g) {
                ids.push(g);
                z.push(PROB_FLOOR.ln());
            }
        }
        let inv_t = (-log_t).exp();
        let u: Vec<f64> = z.iter().map(|x| x * inv_t).collect();
        let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = u.iter().map(|x| (x - top).exp()).sum();
        let log_norm = top + sum.ln();
        let q = u.iter().map(|x| (x - log_norm).exp()).collect();
        Self { ids, u, q, log_norm }
    }

    pub fn index_of(&self, id: AnswerId) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    /// `Σ q_j u_j`.
    pub fn mean_logit(&self) -> f64 {
        self.q.iter().zip(&self.u).map(|(q, u)| q * u).sum()
    }
}

/// Probabilities of `dist` after dividing logits `ln p` by `t = exp(log_t)`,
/// in entry order.
pub fn tempered_probs(dist: &AnswerDistribution, log_t: f64) -> Vec<f64> {
    Tempered::new(dist, None, log_t).q
}

/// Same entries and vocabulary with tempered probabilities.
pub fn apply_temperature(dist: &AnswerDistribution, log_t: f64) -> AnswerDistribution {
    let q = tempered_probs(dist, log_t);
    AnswerDistribution::new(
        dist.entries.iter().zip(q).map(|(&(id, _), p)| (id, p)).collect(),
        dist.vocab_size,
    )
}

/// Pieces of the alignment loss shared with the gradient code.
pub(crate) struct AlignTerms {
    pub tempered: Tempered,
    pub pred: usize,
    pub gold: usize,
    pub wrong: bool,
}

pub(crate) fn align_terms(record: &PredictionRecord, log_t: f64) -> Result<AlignTerms, TrainingError> {
    let gold_id = record.gold_id.ok_or(TrainingError::GoldRequired)?;
    if record.distribution.is_empty() {
        return Err(UncertaintyError::Empty.into());
    }
    if !record.distribution.is_normalized() {
        return Err(UncertaintyError::NotNormalized(record.distribution.total_mass()).into());
    }
    let tempered = Tempered::new(&record.distribution, Some(gold_id), log_t);
    let pred = tempered.index_of(record.predicted_id).ok_or_else(|| {
        TrainingError::InvalidParams(format!(
            "record {:?}: predicted id not in distribution",
            record.record_id
        ))
    })?;
    let gold = tempered.index_of(gold_id).expect("gold appended when absent");
    Ok(AlignTerms {
        tempered,
        pred,
        gold,
        wrong: record.predicted_id != gold_id,
    })
}

/// `α · 1[wrong] · C_t + β · CE_t` on the tempered distribution.
pub fn alignment_loss(
    record: &PredictionRecord,
    alpha: f64,
    beta: f64,
    scaler: &TemperatureScaler,
) -> Result<f64, TrainingError> {
    let a = align_terms(record, scaler.log_t)?;
    let penalty = if a.wrong { alpha * a.tempered.q[a.pred] } else { 0.0 };
    let ce = a.tempered.log_norm - a.tempered.u[a.gold];
    Ok(penalty + beta * ce)
}

/// `m − sim(P a, P p) + sim(P a, P n)` before the hinge.
pub(crate) fn hinge_argument(triplet: &Triplet, head: &ProjectionHead, margin: f64) -> Result<f64, TrainingError> {
    let a = project(head, &triplet.anchor)?;
    let p = project(head, &triplet.positive)?;
    let n = project(head, &triplet.negative)?;
    Ok(margin - (cosine_sim(&a, &p)? - cosine_sim(&a, &n)?))
}

pub fn contrastive_loss(triplet: &Triplet, head: &ProjectionHead, margin: f64) -> Result<f64, TrainingError> {
    Ok(hinge_argument(triplet, head, margin)?.max(0.0))
}

/// `λ₁ · mean alignment (records with gold) + λ₂ · mean contrastive`.
pub fn total_loss<R: Borrow<PredictionRecord>>(
    batch: &[R],
    triplets: &[Triplet],
    params: &Hyperparams,
    state: &TrainState,
) -> Result<f64, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::Empty);
    }
    let mut align = 0.0;
    let mut n_gold = 0usize;
    for r in batch.iter().map(Borrow::borrow).filter(|r| r.gold_id.is_some()) {
        align += alignment_loss(r, params.alpha, params.beta, &state.scaler)?;
        n_gold += 1;
    }
    if n_gold == 0 {
        return Err(TrainingError::NoGold);
    }
    let mut contrast = 0.0;
    for t in triplets {
        contrast += contrastive_loss(t, &state.head, params.margin_m)?;
    }
    let contrast_mean = if triplets.is_empty() {
        0.0
    } else {
        contrast / triplets.len() as f64
    };
    Ok(params.lambda1 * align / n_gold as f64 + params.lambda2 * contrast_mean)
}
