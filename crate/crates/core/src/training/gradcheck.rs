use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::hinge_argument;
use super::{gradients, total_loss, ProjectionHead, TemperatureScaler, TrainState, TrainingError};
use crate::config::Hyperparams;
use crate::mining::Triplet;
use crate::records::{AnswerDistribution, AnswerId, PredictionRecord};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Pass threshold on the largest relative error.
pub const REL_ERR_TOL: f64 = 1e-5;
/// Coordinates whose hinge argument lies this close to zero are skipped.
const KINK_TOL: f64 = 1e-7;
/// Denominator floor so near-zero partials are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub configs: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_ERR_TOL
    }

    pub fn summary(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let cmp = if self.passed() { "<" } else { ">=" };
        format!(
            "{verdict} max_rel_err {cmp} 1e-5 (max_rel_err = {:.3e}, checked = {}, skipped = {}, configs = {})",
            self.max_rel_err, self.checked, self.skipped, self.configs
        )
    }
}

/// Compares analytic gradients with central differences on `configs` random
/// small problems (`d_in ≤ 8`, `d_proj ≤ 4`, batch `≤ 6`).
pub fn gradcheck(seed: u64, configs: usize) -> Result<GradcheckReport, TrainingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        configs,
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
    };
    for _ in 0..configs {
        let (batch, triplets, params, state) = random_problem(&mut rng);
        check_one(&batch, &triplets, &params, &state, &mut report)?;
    }
    Ok(report)
}

fn check_one(
    batch: &[PredictionRecord],
    triplets: &[Triplet],
    params: &Hyperparams,
    state: &TrainState,
    report: &mut GradcheckReport,
) -> Result<(), TrainingError> {
    let g = gradients(batch, triplets, params, state)?;
    let n_w = state.head.weights.len();
    let n_b = state.head.bias.len();
    let analytic = g.d_weights.iter().chain(&g.d_bias).copied().chain([g.d_log_t]);
    for (coord, a) in analytic.enumerate() {
        let shifted = |delta: f64| {
            let mut s = state.clone();
            if coord < n_w {
                s.head.weights[coord] += delta;
            } else if coord < n_w + n_b {
                s.head.bias[coord - n_w] += delta;
            } else {
                s.scaler.log_t += delta;
            }
            s
        };
        let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
        if near_kink(triplets, params.margin_m, state, &plus, &minus)? {
            report.skipped += 1;
            continue;
        }
        let f_plus = total_loss(batch, triplets, params, &plus)?;
        let f_minus = total_loss(batch, triplets, params, &minus)?;
        let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_rel_err = report.max_rel_err.max(err);
        report.checked += 1;
    }
    Ok(())
}

fn near_kink(
    triplets: &[Triplet],
    margin: f64,
    base: &TrainState,
    plus: &TrainState,
    minus: &TrainState,
) -> Result<bool, TrainingError> {
    for t in triplets {
        let at = hinge_argument(t, &base.head, margin)?;
        let up = hinge_argument(t, &plus.head, margin)?;
        let down = hinge_argument(t, &minus.head, margin)?;
        if at.abs() < KINK_TOL || (up > 0.0) != (down > 0.0) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<PredictionRecord>, Vec<Triplet>, Hyperparams, TrainState) {
    let d_in = rng.random_range(2..=8);
    let d_proj = rng.random_range(2..=4);
    let n = rng.random_range(1..=6);
    let batch: Vec<PredictionRecord> = (0..n)
        .map(|i| {
            let k = rng.random_range(2..=5);
            let w = uniform_vec(rng, k, 0.05, 1.0);
            let s: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|x| x / s).collect();
            let distribution = AnswerDistribution::from_dense(&probs);
            let predicted_id = distribution.argmax().expect("non-empty");
            PredictionRecord {
                record_id: format!("g{i}"),
                distribution,
                predicted_id,
                gold_id: Some(rng.random_range(0..k as AnswerId)),
                predicted_tokens: vec![],
                gold_tokens: vec![],
                token_embeddings: BTreeMap::new(),
                anchor_embedding: uniform_vec(rng, d_in, -1.0, 1.0),
                answer_embedding: uniform_vec(rng, d_in, -1.0, 1.0),
                attention_mask: None,
                text_region_mask: None,
            }
        })
        .collect();
    let n_trip = rng.random_range(1..=n);
    let triplets = (0..n_trip)
        .map(|_| {
            let a = &batch[rng.random_range(0..n)];
            let p = &batch[rng.random_range(0..n)];
            let q = &batch[rng.random_range(0..n)];
            Triplet {
                anchor_record_id: a.record_id.clone(),
                positive_record_id: p.record_id.clone(),
                negative_record_id: q.record_id.clone(),
                anchor: a.anchor_embedding.clone(),
                positive: p.answer_embedding.clone(),
                negative: q.answer_embedding.clone(),
            }
        })
        .collect();
    let params = Hyperparams {
        alpha: rng.random_range(0.0..2.0),
        beta: rng.random_range(0.0..2.0),
        margin_m: rng.random_range(0.0..1.0),
        lambda1: rng.random_range(0.1..1.5),
        lambda2: rng.random_range(0.1..1.5),
        ..Hyperparams::default()
    };
    let state = TrainState {
        head: ProjectionHead {
            d_in,
            d_proj,
            weights: uniform_vec(rng, d_in * d_proj, -1.0, 1.0),
            bias: uniform_vec(rng, d_proj, -0.5, 0.5),
        },
        scaler: TemperatureScaler {
            log_t: rng.random_range(-1.0..1.0),
        },
        step: 0,
        seed: 0,
        loss_history: vec![],
    };
    (batch, triplets, params, state)
}
