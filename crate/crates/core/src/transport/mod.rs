//! Exact Word Mover's Distance between tokenized answers.
//!
//! Each answer becomes a [`TokenBag`]: tokens weighted `1/n` per occurrence,
//! duplicates merged. The ground metric is Euclidean distance between token
//! embeddings and the distance is the optimal balanced transport cost, solved
//! exactly by the transportation simplex in [`simplex`].

pub mod simplex;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

pub use simplex::SimplexError;

/// Largest merged bag accepted by [`solve_emd`].
pub const MAX_BAG_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("empty token bag")]
    EmptyBag,
    #[error("token weight must be positive and finite (token {0:?})")]
    BadWeight(String),
    #[error("embedding dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("no embedding for token {0:?}")]
    MissingEmbedding(String),
    #[error("instance too large ({0} merged tokens, limit {MAX_BAG_TOKENS})")]
    TooLarge(usize),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedToken {
    pub token: String,
    pub weight: f64,
    pub embedding: Vec<f64>,
}

/// Weighted token multiset with unit total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBag {
    tokens: Vec<WeightedToken>,
    dim: usize,
}

impl TokenBag {
    /// Merges duplicate tokens (summing weights, keeping the first embedding)
    /// and rescales weights to sum to one.
    pub fn new(tokens: impl IntoIterator<Item = WeightedToken>) -> Result<Self, TransportError> {
        let mut merged: Vec<WeightedToken> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut dim = None;
        for t in tokens {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(TransportError::BadWeight(t.token));
            }
            let d = *dim.get_or_insert(t.embedding.len());
            if d != t.embedding.len() {
                return Err(TransportError::DimensionMismatch(d, t.embedding.len()));
            }
            match index.get(&t.token) {
                Some(&i) => merged[i].weight += t.weight,
                None => {
                    index.insert(t.token.clone(), merged.len());
                    merged.push(t);
                }
            }
        }
        if merged.is_empty() {
            return Err(TransportError::EmptyBag);
        }
        let total: f64 = merged.iter().map(|t| t.weight).sum();
        for t in &mut merged {
            t.weight /= total;
        }
        Ok(Self {
            tokens: merged,
            dim: dim.unwrap_or(0),
        })
    }

    /// Weight `1/n` per occurrence; every token must have an embedding.
    pub fn uniform(tokens: &[String], embeddings: &BTreeMap<String, Vec<f64>>) -> Result<Self, TransportError> {
        if tokens.is_empty() {
            return Err(TransportError::EmptyBag);
        }
        let w = 1.0 / tokens.len() as f64;
        let items = tokens
            .iter()
            .map(|tok| {
                let emb = embeddings
                    .get(tok)
                    .ok_or_else(|| TransportError::MissingEmbedding(tok.clone()))?;
                Ok(WeightedToken {
                    token: tok.clone(),
                    weight: w,
                    embedding: emb.clone(),
                })
            })
            .collect::<Result<Vec<_>, TransportError>>()?;
        Self::new(items)
    }

    pub fn tokens(&self) -> &[WeightedToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.weight).collect()
    }
}

/// Row-major matrix of Euclidean distances between bag embeddings.
pub fn ground_distances(a: &TokenBag, b: &TokenBag) -> Result<Vec<f64>, TransportError> {
    if a.dim != b.dim {
        return Err(TransportError::DimensionMismatch(a.dim, b.dim));
    }
    let mut d = Vec::with_capacity(a.len() * b.len());
    for ta in &a.tokens {
        for tb in &b.tokens {
            let sq: f64 = ta
                .embedding
                .iter()
                .zip(&tb.embedding)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            d.push(sq.sqrt());
        }
    }
    Ok(d)
}

/// Optimal flows between two bags; rows are tokens of the source bag.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub flows: Vec<f64>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn flow(&self, row: usize, col: usize) -> f64 {
        self.flows[row * self.cols + col]
    }

    /// `row,col,flow` lines for non-zero flows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,flow\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                let f = self.flow(i, j);
                if f != 0.0 {
                    let _ = writeln!(out, "{i},{j},{f}");
                }
            }
        }
        out
    }
}

pub fn solve_emd(a: &TokenBag, b: &TokenBag) -> Result<TransportPlan, TransportError> {
    if a.is_empty() || b.is_empty() {
        return Err(TransportError::EmptyBag);
    }
    let largest = a.len().max(b.len());
    if largest > MAX_BAG_TOKENS {
        return Err(TransportError::TooLarge(largest));
    }
    let cost = ground_distances(a, b)?;
    let sol = simplex::solve(&a.weights(), &b.weights(), &cost)?;
    Ok(TransportPlan {
        rows: a.len(),
        cols: b.len(),
        flows: sol.flows,
        cost: sol.cost,
    })
}

/// Word Mover's Distance between two token sequences.
pub fn wmd(
    predicted: &[String],
    gold: &[String],
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<f64, TransportError> {
    let a = TokenBag::uniform(predicted, embeddings)?;
    let b = TokenBag::uniform(gold, embeddings)?;
    Ok(solve_emd(&a, &b)?.cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(items: &[(&str, f64, &[f64])]) -> TokenBag {
        TokenBag::new(items.iter().map(|(t, w, e)| WeightedToken {
            token: t.to_string(),
            weight: *w,
            embedding: e.to_vec(),
        }))
        .unwrap()
    }

    fn emb(pairs: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        pairs.iter().map(|(t, e)| (t.to_string(), e.to_vec())).collect()
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn ground_distance_examples() {
        let a = bag(&[("o", 1.0, &[0.0, 0.0])]);
        let b = bag(&[("p", 1.0, &[3.0, 4.0])]);
        assert_eq!(ground_distances(&a, &b).unwrap(), vec![5.0]);
        assert_eq!(ground_distances(&a, &a).unwrap(), vec![0.0]);

        let a = bag(&[("x", 1.0, &[0.0, 0.0]), ("y", 1.0, &[1.0, 0.0])]);
        let b = bag(&[("u", 1.0, &[0.0, 1.0]), ("v", 1.0, &[4.0, 0.0])]);
        let d = ground_distances(&a, &b).unwrap();
        let expect = [1.0, 4.0, 2f64.sqrt(), 3.0];
        for (g, e) in d.iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
        let c = bag(&[("z", 1.0, &[1.0])]);
        assert_eq!(ground_distances(&a, &c), Err(TransportError::DimensionMismatch(2, 1)));
    }

    #[test]
    fn bags_merge_duplicates_and_normalize() {
        let b = TokenBag::uniform(&toks(&["a", "b", "a"]), &emb(&[("a", &[0.0]), ("b", &[1.0])])).unwrap();
        assert_eq!(b.len(), 2);
        let w = b.weights();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn emd_examples() {
        let a = bag(&[("a", 0.5, &[0.0]), ("b", 0.5, &[1.0])]);
        assert_eq!(solve_emd(&a, &a).unwrap().cost, 0.0);

        let p = bag(&[("p", 1.0, &[0.0, 0.0])]);
        let q = bag(&[("q", 1.0, &[0.6, 0.8])]);
        assert!((solve_emd(&p, &q).unwrap().cost - 1.0).abs() < 1e-15);
    }

    /// One-parameter family: x00 = s, x01 = 0.5 - s, x10 = 0.5 - s, x11 = s.
    #[test]
    fn two_by_two_matches_brute_force() {
        let d = [1.0, 2.0, 2.0, 1.0];
        let brute = (0..=1000)
            .map(|k| {
                let s = 0.5 * k as f64 / 1000.0;
                s * d[0] + (0.5 - s) * d[1] + (0.5 - s) * d[2] + s * d[3]
            })
            .fold(f64::INFINITY, f64::min);
        let sol = simplex::solve(&[0.5, 0.5], &[0.5, 0.5], &d).unwrap();
        assert!((sol.cost - brute).abs() < 1e-12);
        assert!((sol.cost - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wmd_examples() {
        let e = emb(&[("total", &[0.1, 0.2]), ("sum", &[0.1, 0.4]), ("due", &[1.0, 1.0])]);
        assert_eq!(
            wmd(&toks(&["total", "due"]), &toks(&["total", "due"]), &e).unwrap(),
            0.0
        );
        assert!((wmd(&toks(&["total"]), &toks(&["sum"]), &e).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            wmd(&toks(&["total"]), &toks(&["amount"]), &e),
            Err(TransportError::MissingEmbedding("amount".into()))
        );
        assert_eq!(wmd(&[], &toks(&["sum"]), &e), Err(TransportError::EmptyBag));
    }

    #[test]
    fn oversized_bag_is_rejected() {
        let names: Vec<String> = (0..65).map(|i| format!("t{i}")).collect();
        let e: BTreeMap<String, Vec<f64>> = names.iter().map(|n| (n.clone(), vec![0.0])).collect();
        assert_eq!(wmd(&names, &names[..1], &e), Err(TransportError::TooLarge(65)));
        assert!(wmd(&names[..64], &names[..1], &e).is_ok());
    }

    #[test]
    fn plan_marginals_and_csv() {
        let a = bag(&[("a", 0.3, &[0.0]), ("b", 0.7, &[2.0])]);
        let b = bag(&[("c", 0.6, &[1.0]), ("d", 0.4, &[3.0])]);
        let plan = solve_emd(&a, &b).unwrap();
        for i in 0..2 {
            let r: f64 = (0..2).map(|j| plan.flow(i, j)).sum();
            assert!((r - a.weights()[i]).abs() < 1e-7);
        }
        for j in 0..2 {
            let c: f64 = (0..2).map(|i| plan.flow(i, j)).sum();
            assert!((c - b.weights()[j]).abs() < 1e-7);
        }
        let csv = plan.to_csv();
        assert!(csv.starts_with("row,col,flow\n"));
        assert!(csv.lines().count() >= 3);
    }
}
