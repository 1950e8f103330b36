//! Reference solver for tiny ranking problems.
//!
//! Cyclic coordinate descent where each coordinate is minimized exactly
//! (the one-dimensional derivative is piecewise linear and monotone).
//! It recomputes every quantity from the raw feature bank and shares no
//! code with the Newton solver it is used to check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConstraintSets, RankModel};
use crate::error::{Error, Result};

pub const ORACLE_MAX_DIM: usize = 8;
pub const ORACLE_MAX_PAIRS: usize = 20;
const GRAD_TOLERANCE: f64 = 1e-8;
const MAX_SWEEPS: usize = 2_000_000;

struct Pairs {
    ordered: Vec<Vec<f64>>,
    similar: Vec<Vec<f64>>,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        out.push(a[i] - b[i]);
    }
    out
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Objective evaluated independently of the Newton solver.
pub fn oracle_objective(cs: &ConstraintSets, c: f64, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for x in w {
        total += 0.5 * x * x;
    }
    for &(h, l) in &cs.ordered {
        let m = 1.0 - inner(w, &sub(&cs.features[h], &cs.features[l]));
        if m > 0.0 {
            total += c * m * m;
        }
    }
    for &(a, b) in &cs.similar {
        let s = inner(w, &sub(&cs.features[a], &cs.features[b]));
        total += c * s * s;
    }
    total
}

fn gradient(p: &Pairs, c: f64, w: &[f64]) -> Vec<f64> {
    let mut g = w.to_vec();
    for d in &p.ordered {
        let m = 1.0 - inner(w, d);
        if m > 0.0 {
            for j in 0..g.len() {
                g[j] -= 2.0 * c * m * d[j];
            }
        }
    }
    for d in &p.similar {
        let s = inner(w, d);
        for j in 0..g.len() {
            g[j] += 2.0 * c * s * d[j];
        }
    }
    g
}

/// Exact minimizer of the objective along coordinate `j`, as an offset.
fn coordinate_step(p: &Pairs, c: f64, w: &[f64], j: usize) -> f64 {
    let hinge: Vec<(f64, f64)> = p.ordered.iter().map(|d| (1.0 - inner(w, d), d[j])).collect();
    let quad: Vec<(f64, f64)> = p.similar.iter().map(|d| (inner(w, d), d[j])).collect();
    let wj = w[j];
    let deriv = |t: f64| {
        let mut v = wj + t;
        for &(a, b) in &hinge {
            let m = a - t * b;
            if m > 0.0 {
                v -= 2.0 * c * m * b;
            }
        }
        for &(s, b) in &quad {
            v += 2.0 * c * (s + t * b) * b;
        }
        v
    };
    let mut breaks: Vec<f64> = hinge.iter().filter(|(_, b)| *b != 0.0).map(|(a, b)| a / b).collect();
    breaks.sort_by(|a, b| a.total_cmp(b));

    // derivative is linear on [lo, hi]; pick the bracket containing its root
    let (lo, hi) = if breaks.is_empty() {
        (0.0, 1.0)
    } else if deriv(breaks[0]) >= 0.0 {
        (breaks[0] - 1.0, breaks[0])
    } else {
        let k = breaks.iter().position(|&t| deriv(t) >= 0.0);
        match k {
            Some(k) => (breaks[k - 1], breaks[k]),
            None => {
                let last = *breaks.last().unwrap();
                (last, last + 1.0)
            }
        }
    };
    let (dlo, dhi) = (deriv(lo), deriv(hi));
    if dhi == dlo {
        return lo;
    }
    lo - dlo * (hi - lo) / (dhi - dlo)
}

fn solve_from(p: &Pairs, c: f64, mut w: Vec<f64>) -> Result<(Vec<f64>, usize)> {
    for sweep in 0..MAX_SWEEPS {
        let g = gradient(p, c, &w);
        if inner(&g, &g).sqrt() < GRAD_TOLERANCE {
            return Ok((w, sweep));
        }
        for j in 0..w.len() {
            let t = coordinate_step(p, c, &w, j);
            w[j] += t;
        }
    }
    let g = gradient(p, c, &w);
    Err(Error::SolverDiverged {
        objective: f64::NAN,
        grad_norm: inner(&g, &g).sqrt(),
    })
}

fn pairs(cs: &ConstraintSets) -> Result<Pairs> {
    let dim = cs.features.first().map_or(0, |f| f.len());
    let n_pairs = cs.ordered.len() + cs.similar.len();
    if dim > ORACLE_MAX_DIM || n_pairs > ORACLE_MAX_PAIRS {
        return Err(Error::OracleTooLarge {
            dim,
            pairs: n_pairs,
            max_dim: ORACLE_MAX_DIM,
            max_pairs: ORACLE_MAX_PAIRS,
        });
    }
    cs.check_indices()?;
    Ok(Pairs {
        ordered: cs
            .ordered
            .iter()
            .map(|&(h, l)| sub(&cs.features[h], &cs.features[l]))
            .collect(),
        similar: cs
            .similar
            .iter()
            .map(|&(a, b)| sub(&cs.features[a], &cs.features[b]))
            .collect(),
    })
}

/// Reference solution of the ranking primal, started at `w = 0`.
pub fn qp_oracle(cs: &ConstraintSets, c: f64) -> Result<RankModel> {
    qp_oracle_from(cs, c, None)
}

/// Same as [`qp_oracle`], optionally started from a random point drawn
/// with `seed`.
pub fn qp_oracle_from(cs: &ConstraintSets, c: f64, seed: Option<u64>) -> Result<RankModel> {
    if !(c > 0.0) {
        return Err(Error::ConfigError(format!("C must be positive, got {c}")));
    }
    let p = pairs(cs)?;
    let dim = cs.features.first().map_or(0, |f| f.len());
    let start = match seed {
        None => vec![0.0; dim],
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()
        }
    };
    let (w, sweeps) = solve_from(&p, c, start)?;
    let scores: Vec<f64> = cs.features.iter().map(|f| inner(&w, f)).collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    Ok(RankModel {
        accent_id: None,
        c,
        w,
        score_min: lo,
        score_max: hi,
        solver_iterations: sweeps,
    })
}
