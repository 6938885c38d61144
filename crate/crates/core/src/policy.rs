//! Inference-time abstention from confidence and entropy. Needs no gold.

use serde::{Deserialize, Serialize};

use crate::records::{AnswerId, PredictionRecord};
use crate::uncertainty::{self, UncertaintyError};

pub const DEFAULT_C_MIN: f64 = 0.5;
pub const DEFAULT_U_MAX_FRAC: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    LowConfidence,
    HighEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Answer { answer_id: AnswerId },
    Abstain { reason: AbstainReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub confidence: f64,
    pub entropy: f64,
}

impl Decision {
    pub fn is_abstain(&self) -> bool {
        matches!(self.outcome, Outcome::Abstain { .. })
    }
}

/// Abstains when `C < c_min`, otherwise when `U > u_max_frac · ln k` with `k`
/// the number of entries, otherwise answers with the predicted id.
pub fn decide(record: &PredictionRecord, c_min: f64, u_max_frac: f64) -> Result<Decision, UncertaintyError> {
    let s = uncertainty::signal(&record.distribution)?;
    let k = record.distribution.len() as f64;
    let outcome = if s.confidence < c_min {
        Outcome::Abstain {
            reason: AbstainReason::LowConfidence,
        }
    } else if s.entropy > u_max_frac * k.ln() {
        Outcome::Abstain {
            reason: AbstainReason::HighEntropy,
        }
    } else {
        Outcome::Answer {
            answer_id: record.predicted_id,
        }
    };
    Ok(Decision {
        outcome,
        confidence: s.confidence,
        entropy: s.entropy,
    })
}

/// Fraction of records that abstain; 0 for an empty set.
pub fn abstention_rate(records: &[PredictionRecord], c_min: f64, u_max_frac: f64) -> Result<f64, UncertaintyError> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut abstained = 0usize;
    for r in records {
        abstained += usize::from(decide(r, c_min, u_max_frac)?.is_abstain());
    }
    Ok(abstained as f64 / records.len() as f64)
}

/// JSONL line for the decision log.
pub fn decision_line(record_id: &str, decision: &Decision) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        #[serde(flatten)]
        decision: &'a Decision,
    }
    serde_json::to_string(&Line {
        id: record_id,
        decision,
    })
    .expect("decision serialization is infallible")
}
