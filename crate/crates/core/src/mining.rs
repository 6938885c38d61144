//! Contrastive triplet mining.
//!
//! Positives are answers that agree with gold (small WMD and, under strict
//! alignment, the same answer id). Negatives are overconfident failures.
//! A record cannot be both correct and wrong, so triplets pair an anchor with
//! a positive and a negative pooled across the batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Hyperparams;
use crate::records::PredictionRecord;
use crate::transport::{self, TransportError};
use crate::uncertainty::{self, UncertaintyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("record {id:?}: {source}")]
    Transport {
        id: String,
        #[source]
        source: TransportError,
    },
    #[error("record {id:?}: {source}")]
    Uncertainty {
        id: String,
        #[source]
        source: UncertaintyError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_record_id: String,
    pub positive_record_id: String,
    pub negative_record_id: String,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Which records may supply positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveRule {
    pub delta: f64,
    pub strict_alignment: bool,
    pub use_gold_positive: bool,
}

impl PositiveRule {
    pub fn from_params(p: &Hyperparams) -> Self {
        Self {
            delta: p.delta,
            strict_alignment: p.strict_alignment,
            use_gold_positive: p.use_gold_positive,
        }
    }
}

/// `WMD(ŷ, y*) < delta` and `ŷ = y*`.
pub fn eligible_positive(record: &PredictionRecord, delta: f64) -> Result<bool, MiningError> {
    eligible_positive_with(
        record,
        &PositiveRule {
            delta,
            strict_alignment: true,
            use_gold_positive: false,
        },
    )
}

pub fn eligible_positive_with(record: &PredictionRecord, rule: &PositiveRule) -> Result<bool, MiningError> {
    let Some(correct) = record.is_correct() else {
        return Err(MiningError::Uncertainty {
            id: record.record_id.clone(),
            source: UncertaintyError::GoldRequired,
        });
    };
    if rule.use_gold_positive && correct {
        return Ok(true);
    }
    if rule.strict_alignment && !correct {
        return Ok(false);
    }
    let d =
        transport::wmd(&record.predicted_tokens, &record.gold_tokens, &record.token_embeddings).map_err(|source| {
            MiningError::Transport {
                id: record.record_id.clone(),
                source,
            }
        })?;
    Ok(d < rule.delta)
}

/// Overconfident failure: wrong, `C > tau1`, `U < tau2`.
pub fn eligible_negative(record: &PredictionRecord, tau1: f64, tau2: f64) -> Result<bool, MiningError> {
    uncertainty::is_overconfident_failure(record, tau1, tau2).map_err(|source| MiningError::Uncertainty {
        id: record.record_id.clone(),
        source,
    })
}

/// Per-record pool membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Eligibility {
    pub positive: bool,
    pub negative: bool,
}

fn has_norm(v: &[f64]) -> bool {
    v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-12
}

/// Pool membership for every record. Records without gold join no pool,
/// zero-norm embeddings are excluded, and a record that is negative-eligible
/// never serves as a positive.
pub fn eligibility(records: &[PredictionRecord], params: &Hyperparams) -> Result<Vec<Eligibility>, MiningError> {
    let rule = PositiveRule::from_params(params);
    records
        .par_iter()
        .map(|r| {
            if r.gold_id.is_none() || !has_norm(&r.answer_embedding) {
                return Ok(Eligibility::default());
            }
            let negative = eligible_negative(r, params.tau1, params.tau2)?;
            let positive = !negative && eligible_positive_with(r, &rule)?;
            Ok(Eligibility { positive, negative })
        })
        .collect()
}

pub fn mine_triplets(batch: &[PredictionRecord], params: &Hyperparams, seed: u64) -> Result<Vec<Triplet>, MiningError> {
    let flags = eligibility(batch, params)?;
    let refs: Vec<&PredictionRecord> = batch.iter().collect();
    Ok(assemble_triplets(&refs, &flags, params.hard_negatives, seed))
}

/// Builds one triplet per anchor once both pools are non-empty. The anchor's
/// own answer is its positive when eligible; other draws are seeded-uniform,
/// or most-similar-by-cosine for negatives when `hard_negatives` is set.
pub fn assemble_triplets(
    batch: &[&PredictionRecord],
    flags: &[Eligibility],
    hard_negatives: bool,
    seed: u64,
) -> Vec<Triplet> {
    let positives: Vec<usize> = (0..batch.len()).filter(|&i| flags[i].positive).collect();
    let negatives: Vec<usize> = (0..batch.len()).filter(|&i| flags[i].negative).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, anchor) in batch.iter().enumerate() {
        if !has_norm(&anchor.anchor_embedding) {
            continue;
        }
        let pos = if flags[i].positive {
            i
        } else {
            positives[rng.random_range(0..positives.len())]
        };
        let neg = if hard_negatives {
            hardest(anchor, batch, &negatives)
        } else {
            negatives[rng.random_range(0..negatives.len())]
        };
        out.push(Triplet {
            anchor_record_id: anchor.record_id.clone(),
            positive_record_id: batch[pos].record_id.clone(),
            negative_record_id: batch[neg].record_id.clone(),
            anchor: anchor.anchor_embedding.clone(),
            positive: batch[pos].answer_embedding.clone(),
            negative: batch[neg].answer_embedding.clone(),
        });
    }
    out
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (nu * nv)
}

fn hardest(anchor: &PredictionRecord, batch: &[&PredictionRecord], pool: &[usize]) -> usize {
    let mut best = pool[0];
    let mut best_sim = f64::NEG_INFINITY;
    for &j in pool {
        let s = cosine(&anchor.anchor_embedding, &batch[j].answer_embedding);
        if s > best_sim {
            best_sim = s;
            best = j;
        }
    }
    best
}

/// JSONL line for one triplet.
pub fn triplet_line(t: &Triplet) -> String {
    serde_json::to_string(t).expect("triplet serialization is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::fixtures::record;
    use std::collections::BTreeMap;

    fn with_tokens(mut r: PredictionRecord, pred: &[&str], gold: &[&str], emb: &[(&str, &[f64])]) -> PredictionRecord {
        r.predicted_tokens = pred.iter().map(|s| s.to_string()).collect();
        r.gold_tokens = gold.iter().map(|s| s.to_string()).collect();
        r.token_embeddings = emb
            .iter()
            .map(|(t, e)| (t.to_string(), e.to_vec()))
            .collect::<BTreeMap<_, _>>();
        r
    }

    /// Correct, exact-match answer.
    fn aligned(id: &str) -> PredictionRecord {
        let mut r = with_tokens(
            record(id, &[0.9, 0.1], Some(0)),
            &["ten"],
            &["ten"],
            &[("ten", &[0.0, 1.0])],
        );
        r.anchor_embedding = vec![1.0, 0.5];
        r.answer_embedding = vec![0.9, 0.6];
        r
    }

    /// Wrong with C = 0.95 (U ≈ 0.199).
    fn overconfident(id: &str) -> PredictionRecord {
        let mut r = with_tokens(
            record(id, &[0.95, 0.05], Some(1)),
            &["ten"],
            &["two"],
            &[("ten", &[0.0, 1.0]), ("two", &[1.0, 0.0])],
        );
        r.anchor_embedding = vec![-1.0, 0.5];
        r.answer_embedding = vec![-0.8, 0.1];
        r
    }

    #[test]
    fn positive_eligibility() {
        assert!(eligible_positive(&aligned("a"), 0.4).unwrap());

        // WMD exactly 0.4 with the same id is not strictly below delta
        let edge = with_tokens(
            record("e", &[0.9, 0.1], Some(0)),
            &["x"],
            &["y"],
            &[("x", &[0.0, 0.0]), ("y", &[0.0, 0.4])],
        );
        assert!(!eligible_positive(&edge, 0.4).unwrap());

        // WMD 0.1 but wrong id
        let wrong = with_tokens(
            record("w", &[0.9, 0.1], Some(1)),
            &["x"],
            &["y"],
            &[("x", &[0.0, 0.0]), ("y", &[0.0, 0.1])],
        );
        assert!(!eligible_positive(&wrong, 0.4).unwrap());
        let loose = PositiveRule {
            delta: 0.4,
            strict_alignment: false,
            use_gold_positive: false,
        };
        assert!(eligible_positive_with(&wrong, &loose).unwrap());
    }

    #[test]
    fn gold_positive_flag_skips_wmd() {
        let mut r = aligned("g");
        r.gold_tokens = vec!["ten".into(), "dollars".into()];
        assert!(eligible_positive(&r, 0.4).is_err());
        let rule = PositiveRule {
            delta: 0.4,
            strict_alignment: true,
            use_gold_positive: true,
        };
        assert!(eligible_positive_with(&r, &rule).unwrap());
    }

    #[test]
    fn negative_eligibility() {
        assert!(eligible_negative(&overconfident("n"), 0.8, 0.5).unwrap());
        assert!(!eligible_negative(&aligned("c"), 0.8, 0.5).unwrap());
        let mut weak = record("w", &[0.5, 0.3, 0.2], Some(1));
        weak.predicted_id = 0;
        assert!(!eligible_negative(&weak, 0.8, 0.5).unwrap());
    }

    #[test]
    fn no_negatives_no_triplets() {
        let batch: Vec<_> = (0..5).map(|i| aligned(&format!("a{i}"))).collect();
        assert!(mine_triplets(&batch, &Hyperparams::default(), 1).unwrap().is_empty());
    }

    #[test]
    fn one_positive_one_negative_is_forced() {
        let batch = vec![aligned("p"), overconfident("n")];
        let ts = mine_triplets(&batch, &Hyperparams::default(), 3).unwrap();
        assert_eq!(ts.len(), 2);
        let ids: Vec<_> = ts
            .iter()
            .map(|t| {
                (
                    t.anchor_record_id.as_str(),
                    t.positive_record_id.as_str(),
                    t.negative_record_id.as_str(),
                )
            })
            .collect();
        assert_eq!(ids, vec![("p", "p", "n"), ("n", "p", "n")]);
        assert_eq!(ts[0].positive, batch[0].answer_embedding);
        assert_eq!(ts[1].anchor, batch[1].anchor_embedding);
        assert_eq!(ts[1].negative, batch[1].answer_embedding);
    }

    #[test]
    fn mining_is_deterministic_per_seed() {
        let mut batch = Vec::new();
        for i in 0..6 {
            batch.push(aligned(&format!("a{i}")));
            batch.push(overconfident(&format!("n{i}")));
        }
        let p = Hyperparams::default();
        let a = mine_triplets(&batch, &p, 42).unwrap();
        assert_eq!(a, mine_triplets(&batch, &p, 42).unwrap());
        assert!(a.len() <= batch.len());
        let draws = |ts: &[Triplet]| ts.iter().map(|t| t.negative_record_id.clone()).collect::<Vec<_>>();
        let differs = (0..10).any(|s| draws(&mine_triplets(&batch, &p, s).unwrap()) != draws(&a));
        assert!(differs);
    }

    #[test]
    fn hard_negative_picks_most_similar() {
        let mut near = overconfident("near");
        near.answer_embedding = vec![1.0, 0.5];
        let batch = vec![aligned("p"), overconfident("far"), near];
        let p = Hyperparams {
            hard_negatives: true,
            ..Hyperparams::default()
        };
        let ts = mine_triplets(&batch, &p, 0).unwrap();
        assert_eq!(ts[0].negative_record_id, "near");
    }

    #[test]
    fn records_without_gold_only_anchor() {
        let mut unlabeled = aligned("u");
        unlabeled.gold_id = None;
        let batch = vec![aligned("p"), overconfident("n"), unlabeled];
        let ts = mine_triplets(&batch, &Hyperparams::default(), 0).unwrap();
        assert_eq!(ts.len(), 3);
        assert!(ts
            .iter()
            .all(|t| t.positive_record_id != "u" && t.negative_record_id != "u"));
    }

    #[test]
    fn negative_never_doubles_as_positive() {
        // wrong id, tiny WMD, overconfident: eligible for both under loose alignment
        let mut both = overconfident("both");
        both.token_embeddings.insert("two".into(), vec![0.0, 1.05]);
        let p = Hyperparams {
            strict_alignment: false,
            ..Hyperparams::default()
        };
        let flags = eligibility(&[both], &p).unwrap();
        assert_eq!(
            flags[0],
            Eligibility {
                positive: false,
                negative: true
            }
        );
    }
}
