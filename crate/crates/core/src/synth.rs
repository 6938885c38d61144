//! Seeded synthetic prediction logs with controllable calibration.
//!
//! Each record is correct with probability `base_accuracy`. Its confidence is
//! `C = 1/k + (1 − 1/k)·clamp(ρ·A + (1 − ρ)·U)` for `U ~ uniform(0, 1)`, so the
//! coupling `calib_rho` moves from pure noise (ρ = 0) to `C = A` (ρ = 1). Two
//! distortions of the kind seen in real models make the log worth
//! recalibrating, and both fade as ρ → 1:
//!
//! * the whole distribution is flattened by `base_temperature` (under-confident
//!   logits), and
//! * a fraction `peaked_frac · (1 − ρ)` of records are sharply peaked with
//!   `C ∈ [0.93, 0.99]` regardless of correctness; when wrong, most of the
//!   leftover mass sits on the gold answer.
//!
//! Answers are bags of 1–3 words with Gaussian word embeddings. Correct
//! answers match gold exactly or up to a near-synonym, so the WMD to gold is
//! small iff the answer is correct.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{AnswerDistribution, AnswerId, PredictionRecord};

const PEAK_RANGE: (f64, f64) = (0.93, 0.99);
/// Share of a peaked wrong record's leftover mass placed on gold.
const GOLD_SHARE: f64 = 0.8;
const SYNONYM_RATE: f64 = 0.3;
const SYNONYM_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid synth config `{field}`: {reason}")]
pub struct SynthError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub vocab_size: u32,
    pub calib_rho: f64,
    pub d_in: usize,
    pub d_tok: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub base_accuracy: f64,
    pub base_temperature: f64,
    pub peaked_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 500,
            vocab_size: 20,
            calib_rho: 0.3,
            d_in: 16,
            d_tok: 8,
            noise_sigma: 0.1,
            seed: 0,
            base_accuracy: 0.7,
            base_temperature: 2.0,
            peaked_frac: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |field, reason: &str| {
            Err(SynthError {
                field,
                reason: reason.to_string(),
            })
        };
        if self.vocab_size < 2 {
            return fail("vocab_size", "must be at least 2");
        }
        for (field, v) in [
            ("calib_rho", self.calib_rho),
            ("base_accuracy", self.base_accuracy),
            ("peaked_frac", self.peaked_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(field, "must lie in [0, 1]");
            }
        }
        if self.d_in == 0 || self.d_in > crate::records::MAX_EMBEDDING_DIM {
            return fail("d_in", "must be between 1 and 4096");
        }
        if self.d_tok == 0 || self.d_tok > crate::records::MAX_EMBEDDING_DIM {
            return fail("d_tok", "must be between 1 and 4096");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma", "must be finite and non-negative");
        }
        if !(self.base_temperature > 0.0 && self.base_temperature.is_finite()) {
            return fail("base_temperature", "must be finite and positive");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Word lists per answer id; words are never shared between answers.
struct Lexicon {
    words: Vec<Vec<String>>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl Lexicon {
    fn new(rng: &mut ChaCha8Rng, k: u32, d_tok: usize) -> Self {
        let scale = 1.0 / (d_tok as f64).sqrt();
        let mut words = Vec::with_capacity(k as usize);
        let mut embeddings = BTreeMap::new();
        let mut next = 0usize;
        for _ in 0..k {
            let n = rng.random_range(1..=3);
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let w = format!("w{next}");
                next += 1;
                let e = gaussian(rng, d_tok, scale);
                let syn: Vec<f64> = e
                    .iter()
                    .zip(gaussian(rng, d_tok, SYNONYM_SCALE * scale))
                    .map(|(a, b)| a + b)
                    .collect();
                embeddings.insert(format!("{w}~"), syn);
                embeddings.insert(w.clone(), e);
                list.push(w);
            }
            words.push(list);
        }
        Self { words, embeddings }
    }
}

/// Dense probabilities with mass `c` on `pred`.
fn confidence_profile(cfg: &SynthConfig, rng: &mut ChaCha8Rng, correct: bool, pred: usize, gold: usize) -> Vec<f64> {
    let k = cfg.vocab_size as usize;
    let rho = cfg.calib_rho;
    let a = if correct { 1.0 } else { 0.0 };
    let peaked = rng.random::<f64>() < cfg.peaked_frac * (1.0 - rho);
    let u: f64 = rng.random();
    let mut p;
    if peaked {
        let c = rng.random_range(PEAK_RANGE.0..PEAK_RANGE.1);
        let rest = 1.0 - c;
        if correct {
            p = vec![rest / (k - 1) as f64; k];
        } else if k == 2 {
            p = vec![0.0; k];
            p[gold] = rest;
        } else {
            p = vec![(1.0 - GOLD_SHARE) * rest / (k - 2) as f64; k];
            p[gold] = GOLD_SHARE * rest;
        }
        p[pred] = c;
    } else {
        let coupled = (rho * a + (1.0 - rho) * u).clamp(0.0, 1.0);
        let c = 1.0 / k as f64 + (1.0 - 1.0 / k as f64) * coupled;
        p = vec![(1.0 - c) / (k - 1) as f64; k];
        p[pred] = c;
        if cfg.base_temperature != 1.0 {
            let inv = 1.0 / cfg.base_temperature;
            for x in &mut p {
                *x = x.powf(inv);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Deterministic in `cfg.seed`; every record carries gold.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<PredictionRecord>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.vocab_size as usize;
    let lexicon = Lexicon::new(&mut rng, cfg.vocab_size, cfg.d_tok);
    let offset_correct = gaussian(&mut rng, cfg.d_in, 1.0);
    let offset_wrong = gaussian(&mut rng, cfg.d_in, 1.0);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma validated");

    let mut out = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let correct = rng.random::<f64>() < cfg.base_accuracy;
        let mut pred = rng.random_range(0..k);
        let shift = rng.random_range(1..k);
        let mut gold = if correct { pred } else { (pred + shift) % k };
        let probs = confidence_profile(cfg, &mut rng, correct, pred, gold);
        let distribution = AnswerDistribution::from_dense(&probs);
        let top = distribution.argmax().expect("k ≥ 2") as usize;
        if top != pred {
            // only an exactly uniform profile ties; the lowest id wins
            pred = top;
            gold = if correct { pred } else { (pred + shift) % k };
        }

        let gold_tokens = lexicon.words[gold].clone();
        let mut predicted_tokens = lexicon.words[pred].clone();
        if correct && rng.random::<f64>() < SYNONYM_RATE {
            let j = rng.random_range(0..predicted_tokens.len());
            predicted_tokens[j].push('~');
        }
        let token_embeddings = predicted_tokens
            .iter()
            .chain(&gold_tokens)
            .map(|t| (t.clone(), lexicon.embeddings[t].clone()))
            .collect();

        let anchor = gaussian(&mut rng, cfg.d_in, 1.0);
        let offset = if correct { &offset_correct } else { &offset_wrong };
        let answer = anchor
            .iter()
            .zip(offset)
            .map(|(a, o)| a + o + noise.sample(&mut rng))
            .collect();

        out.push(PredictionRecord {
            record_id: format!("synth-{}-{i:06}", cfg.seed),
            distribution,
            predicted_id: pred as AnswerId,
            gold_id: Some(gold as AnswerId),
            predicted_tokens,
            gold_tokens,
            token_embeddings,
            anchor_embedding: anchor,
            answer_embedding: answer,
            attention_mask: None,
            text_region_mask: None,
        });
    }
    Ok(out)
}
