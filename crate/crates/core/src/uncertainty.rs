//! Entropy and maximum-confidence signals of an answer distribution.

use thiserror::Error;

use crate::records::{AnswerDistribution, PredictionRecord, PROB_FLOOR};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("distribution is not normalized (mass {0})")]
    NotNormalized(f64),
    #[error("distribution has no entries")]
    Empty,
    #[error("gold required")]
    GoldRequired,
}

/// Entropy `U` (nats) and confidence `C` of one distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintySignal {
    pub entropy: f64,
    pub confidence: f64,
}

fn check(dist: &AnswerDistribution) -> Result<(), UncertaintyError> {
    if dist.is_empty() {
        return Err(UncertaintyError::Empty);
    }
    if !dist.is_normalized() {
        return Err(UncertaintyError::NotNormalized(dist.total_mass()));
    }
    Ok(())
}

/// Shannon entropy in nats. The logarithm sees probabilities clamped to
/// `[1e-12, 1]`; zero entries contribute nothing.
pub fn entropy(dist: &AnswerDistribution) -> Result<f64, UncertaintyError> {
    check(dist)?;
    let h: f64 = dist.probs().map(|p| -p * p.clamp(PROB_FLOOR, 1.0).ln()).sum();
    // -1.0 * ln(1.0) is -0.0
    Ok(h.max(0.0))
}

/// Largest probability.
pub fn confidence(dist: &AnswerDistribution) -> Result<f64, UncertaintyError> {
    check(dist)?;
    Ok(dist.probs().fold(f64::NEG_INFINITY, f64::max))
}

pub fn signal(dist: &AnswerDistribution) -> Result<UncertaintySignal, UncertaintyError> {
    Ok(UncertaintySignal {
        entropy: entropy(dist)?,
        confidence: confidence(dist)?,
    })
}

/// Wrong answer given with `C > tau1` and `U < tau2` (strict on both sides).
pub fn is_overconfident_failure(record: &PredictionRecord, tau1: f64, tau2: f64) -> Result<bool, UncertaintyError> {
    let gold = record.gold_id.ok_or(UncertaintyError::GoldRequired)?;
    if record.predicted_id == gold {
        return Ok(false);
    }
    let s = signal(&record.distribution)?;
    Ok(s.confidence > tau1 && s.entropy < tau2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::fixtures::record;
    use proptest::prelude::*;

    fn dense(p: &[f64]) -> AnswerDistribution {
        AnswerDistribution::from_dense(p)
    }

    /// Direct summation with unclamped, strictly positive probabilities.
    fn entropy_oracle(p: &[f64]) -> f64 {
        p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&dense(&[1.0])).unwrap(), 0.0);
        assert!((entropy(&dense(&[0.25; 4])).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&dense(&[0.7, 0.2, 0.1])).unwrap() - 0.801819).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_unnormalized() {
        assert!(matches!(
            entropy(&dense(&[0.7, 0.7])),
            Err(UncertaintyError::NotNormalized(_))
        ));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&dense(&[0.7, 0.2, 0.1])).unwrap(), 0.7);
        assert_eq!(confidence(&dense(&[0.2; 5])).unwrap(), 0.2);
        assert_eq!(confidence(&dense(&[0.45, 0.45, 0.10])).unwrap(), 0.45);
    }

    /// Builds a record with exactly `C = c` and entropy shaped by spreading the
    /// remainder evenly over `rest` entries.
    fn wrong_record(c: f64, rest: usize) -> PredictionRecord {
        let mut p = vec![c];
        p.extend(std::iter::repeat_n((1.0 - c) / rest as f64, rest));
        let mut r = record("w", &p, Some(1));
        r.predicted_id = 0;
        r
    }

    #[test]
    fn overconfident_failure_predicate() {
        // C = 0.9, remainder spread over 2 entries: U ≈ 0.394 < 0.5
        let r = wrong_record(0.9, 2);
        let u = entropy(&r.distribution).unwrap();
        assert!(u < 0.5 && u > 0.3);
        assert!(is_overconfident_failure(&r, 0.8, 0.5).unwrap());

        let mut correct = r.clone();
        correct.gold_id = Some(0);
        assert!(!is_overconfident_failure(&correct, 0.8, 0.5).unwrap());

        // [0.8, 0.2] has U ≈ 0.5004, so a loose tau2 isolates the C check
        let edge = wrong_record(0.8, 1);
        assert!(!is_overconfident_failure(&edge, 0.8, 1.0).unwrap());
        assert!(is_overconfident_failure(&edge, 0.79, 1.0).unwrap());

        let mut nogold = r;
        nogold.gold_id = None;
        assert_eq!(
            is_overconfident_failure(&nogold, 0.8, 0.5),
            Err(UncertaintyError::GoldRequired)
        );
    }

    fn simplex(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 1..max_len).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn entropy_matches_oracle_and_bounds(p in simplex(12)) {
            let h = entropy(&dense(&p)).unwrap();
            prop_assert!((h - entropy_oracle(&p)).abs() < 1e-12);
            prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln() + 1e-9);
            let c = confidence(&dense(&p)).unwrap();
            prop_assert!(c >= 1.0 / p.len() as f64 - 1e-15 && c <= 1.0);
        }

        #[test]
        fn entropy_is_permutation_invariant(p in simplex(10), seed in any::<u64>()) {
            let mut q = p.clone();
            let n = q.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                q.swap(i, (s >> 33) as usize % (i + 1));
            }
            let (a, b) = (entropy(&dense(&p)).unwrap(), entropy(&dense(&q)).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mixing_toward_uniform_never_decreases_entropy(p in simplex(10), t in 0.0f64..=1.0) {
            let k = p.len() as f64;
            let mixed: Vec<f64> = p.iter().map(|&x| (1.0 - t) * x + t / k).collect();
            let (h0, h1) = (entropy(&dense(&p)).unwrap(), entropy(&dense(&mixed)).unwrap());
            prop_assert!(h1 >= h0 - 1e-9);
        }
    }

    #[test]
    fn uniform_is_the_entropy_maximum_and_confidence_minimum() {
        for k in 1..=50usize {
            let u = vec![1.0 / k as f64; k];
            assert!((entropy(&dense(&u)).unwrap() - (k as f64).ln()).abs() < 1e-12);
            assert_eq!(confidence(&dense(&u)).unwrap(), 1.0 / k as f64);
        }
    }
}
