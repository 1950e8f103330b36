//! Helpers shared by the integration tests.
#![allow(dead_code)]

use caitts::ranker::ConstraintSets;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Brute-force DTW: enumerates every monotone path with unit steps and
/// returns the cheapest cost and its length, preferring shorter paths
/// among equal costs.
pub fn exhaustive_dtw(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> (f64, usize) {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        i: usize,
        j: usize,
        n: usize,
        m: usize,
        acc: f64,
        len: usize,
        cost: &dyn Fn(usize, usize) -> f64,
        best: &mut (f64, usize),
    ) {
        let acc = acc + cost(i, j);
        let len = len + 1;
        if i + 1 == n && j + 1 == m {
            let tol = 1e-12 * acc.abs().max(best.0.abs()).max(1.0);
            if (acc - best.0).abs() <= tol {
                if len < best.1 {
                    *best = (acc, len);
                }
            } else if acc < best.0 {
                *best = (acc, len);
            }
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(i + 1, j + 1, n, m, acc, len, cost, best);
        }
        if i + 1 < n {
            walk(i + 1, j, n, m, acc, len, cost, best);
        }
        if j + 1 < m {
            walk(i, j + 1, n, m, acc, len, cost, best);
        }
    }
    let mut best = (f64::INFINITY, usize::MAX);
    walk(0, 0, n, m, 0.0, 0, cost, &mut best);
    best
}

/// Random ranking problem with `dim` features, up to `max_pairs` ordered
/// pairs and up to `max_pairs` similar pairs.
pub fn random_instance(rng: &mut ChaCha8Rng, max_dim: usize, max_pairs: usize) -> ConstraintSets {
    let dim = rng.gen_range(1..=max_dim);
    let n = rng.gen_range(2..=6);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let pair = |rng: &mut ChaCha8Rng| loop {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            return (a, b);
        }
    };
    let n_ordered = rng.gen_range(1..=max_pairs);
    let n_similar = rng.gen_range(0..=max_pairs - n_ordered);
    let ordered = (0..n_ordered).map(|_| pair(rng)).collect();
    let similar = (0..n_similar).map(|_| pair(rng)).collect();
    ConstraintSets::from_raw(features, ordered, similar).expect("indices in range")
}
