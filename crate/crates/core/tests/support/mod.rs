#![allow(dead_code)]

pub mod mcf;

use std::collections::BTreeMap;

use rand::Rng;

use honestcalib::transport::{TokenBag, WeightedToken};

/// Random bag of `n` tokens named `{prefix}{i}` in `dim` dimensions.
pub fn random_bag(rng: &mut impl Rng, prefix: &str, n: usize, dim: usize) -> TokenBag {
    TokenBag::new((0..n).map(|i| WeightedToken {
        token: format!("{prefix}{i}"),
        weight: rng.random_range(0.05..1.0),
        embedding: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }))
    .unwrap()
}

/// Uniform-weight bag over positions drawn from a shared pool, so equal
/// partial sums (degenerate pivots) are common.
pub fn pooled_bag(rng: &mut impl Rng, pool: &BTreeMap<String, Vec<f64>>, n: usize) -> TokenBag {
    let names: Vec<&String> = pool.keys().collect();
    TokenBag::new((0..n).map(|_| {
        let name = names[rng.random_range(0..names.len())];
        WeightedToken {
            token: name.clone(),
            weight: 1.0,
            embedding: pool[name].clone(),
        }
    }))
    .unwrap()
}
