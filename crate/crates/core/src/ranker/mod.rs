//! Relative-attribute ranking of accent strength.
//!
//! A linear function `R(f) = w·f` is fit so that every L2 rendition ranks
//! above its L1 counterpart and same-domain pairs rank alike. The primal
//! with squared slacks,
//!
//! ```text
//! ½‖w‖² + C Σ_O max(0, 1 − w·(f_hi − f_lo))² + C Σ_S (w·(f_a − f_b))²
//! ```
//!
//! is differentiable with a piecewise-constant Hessian, so it is solved by
//! Newton steps with backtracking, recomputing the active ordered pairs at
//! every iterate.

pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::features::AccentFeatureVector;

pub use oracle::qp_oracle;

/// Lower and upper clamp of normalized intensities.
pub const INTENSITY_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSets {
    /// Feature vectors referenced by the pair lists.
    pub features: Vec<Vec<f64>>,
    pub domains: Vec<Domain>,
    /// `(higher, lower)` indices into `features`.
    pub ordered: Vec<(usize, usize)>,
    pub similar: Vec<(usize, usize)>,
}

impl ConstraintSets {
    /// Builds sets over raw vectors without domain bookkeeping. Every entry
    /// is tagged L2; intended for solver tests and small experiments.
    pub fn from_raw(
        features: Vec<Vec<f64>>,
        ordered: Vec<(usize, usize)>,
        similar: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let domains = vec![Domain::L2; features.len()];
        let cs = ConstraintSets {
            features,
            domains,
            ordered,
            similar,
        };
        cs.check_indices()?;
        Ok(cs)
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    fn check_indices(&self) -> Result<()> {
        let n = self.features.len();
        let dim = self.dim();
        if let Some(f) = self.features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        for &(a, b) in self.ordered.iter().chain(&self.similar) {
            for i in [a, b] {
                if i >= n {
                    return Err(Error::IndexError { index: i, len: n });
                }
            }
        }
        Ok(())
    }

    /// Checks index ranges and the L2-over-L1 / same-domain pairing rules.
    pub fn validate(&self) -> Result<()> {
        self.check_indices()?;
        for &(hi, lo) in &self.ordered {
            if self.domains[hi] != Domain::L2 || self.domains[lo] != Domain::L1 {
                return Err(Error::InvalidInput(format!(
                    "ordered pair ({hi}, {lo}) is not L2 over L1"
                )));
            }
        }
        for &(a, b) in &self.similar {
            if self.domains[a] != self.domains[b] {
                return Err(Error::InvalidInput(format!("similar pair ({a}, {b}) crosses domains")));
            }
        }
        Ok(())
    }

    fn difference(&self, a: usize, b: usize) -> Vec<f64> {
        self.features[a]
            .iter()
            .zip(&self.features[b])
            .map(|(x, y)| x - y)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairingPolicy {
    /// Extra random cross pairs, and random similar pairs per domain.
    /// `None` means twice the matched-pair count.
    pub random_pairs: Option<usize>,
    pub seed: u64,
}

fn random_pair<R: Rng>(rng: &mut R, pool: &[usize]) -> (usize, usize) {
    let picked: Vec<usize> = pool.choose_multiple(rng, 2).copied().collect();
    (picked[0], picked[1])
}

/// Ordered pairs: every L2 vector over its same-utterance L1 vector, plus
/// `k` random L2-over-L1 cross pairs. Similar pairs: `k` random L1 pairs
/// and `k` random L2 pairs, the latter drawn within one accent.
pub fn build_constraint_sets(
    l1: &[AccentFeatureVector],
    l2: &[AccentFeatureVector],
    policy: &PairingPolicy,
) -> Result<ConstraintSets> {
    if l1.is_empty() {
        return Err(Error::EmptyInput("L1 feature list"));
    }
    if l2.is_empty() {
        return Err(Error::EmptyInput("L2 feature list"));
    }
    let n1 = l1.len();
    let features: Vec<Vec<f64>> = l1.iter().chain(l2).map(|v| v.values.clone()).collect();
    let domains: Vec<Domain> = std::iter::repeat_n(Domain::L1, n1)
        .chain(std::iter::repeat_n(Domain::L2, l2.len()))
        .collect();

    let mut ordered = Vec::with_capacity(l2.len());
    for (j, v) in l2.iter().enumerate() {
        let i = l1
            .iter()
            .position(|u| u.utterance_id == v.utterance_id && u.speaker_id == v.speaker_id)
            .ok_or_else(|| Error::UnpairedUtterance(v.utterance_id.clone()))?;
        ordered.push((n1 + j, i));
    }

    let k = policy.random_pairs.unwrap_or(2 * ordered.len());
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    for _ in 0..k {
        let j = rng.gen_range(0..l2.len());
        let i = rng.gen_range(0..n1);
        ordered.push((n1 + j, i));
    }

    let mut similar = Vec::with_capacity(2 * k);
    let l1_pool: Vec<usize> = (0..n1).collect();
    if n1 >= 2 {
        for _ in 0..k {
            similar.push(random_pair(&mut rng, &l1_pool));
        }
    }
    let mut by_accent: Vec<(u32, Vec<usize>)> = Vec::new();
    for (j, v) in l2.iter().enumerate() {
        match by_accent.iter_mut().find(|(a, _)| *a == v.accent_id) {
            Some((_, idx)) => idx.push(n1 + j),
            None => by_accent.push((v.accent_id, vec![n1 + j])),
        }
    }
    by_accent.retain(|(_, idx)| idx.len() >= 2);
    if !by_accent.is_empty() {
        for _ in 0..k {
            let (_, pool) = &by_accent[rng.gen_range(0..by_accent.len())];
            similar.push(random_pair(&mut rng, pool));
        }
    }

    let cs = ConstraintSets {
        features,
        domains,
        ordered,
        similar,
    };
    cs.validate()?;
    Ok(cs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    /// `None` for a model shared by every accent.
    pub accent_id: Option<u32>,
    #[serde(rename = "C")]
    pub c: f64,
    pub w: Vec<f64>,
    pub score_min: f64,
    pub score_max: f64,
    pub solver_iterations: usize,
}

impl RankModel {
    pub fn score_raw(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.w.len() {
            return Err(Error::DimMismatch {
                expected: self.w.len(),
                got: f.len(),
            });
        }
        Ok(dot(&self.w, f))
    }

    pub fn score(&self, f: &AccentFeatureVector) -> Result<f64> {
        self.score_raw(&f.values)
    }

    /// Score mapped through the stored bounds into the open unit interval.
    pub fn intensity(&self, f: &AccentFeatureVector) -> Result<f64> {
        Ok(map_to_unit(self.score(f)?, self.score_min, self.score_max))
    }

    /// Installs normalization bounds fitted on `scores`.
    pub fn set_bounds(&mut self, scores: &[f64]) {
        let (lo, hi) = score_bounds(scores);
        self.score_min = lo;
        self.score_max = hi;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RankModel = serde_json::from_str(s)?;
        if !(m.score_min < m.score_max) || m.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "rank model needs finite w and score_min < score_max".into(),
            ));
        }
        Ok(m)
    }
}

pub fn score(m: &RankModel, f: &AccentFeatureVector) -> Result<f64> {
    m.score(f)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Degenerate (constant) score sets get bounds that map to 0.5.
fn score_bounds(scores: &[f64]) -> (f64, f64) {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn map_to_unit(s: f64, lo: f64, hi: f64) -> f64 {
    ((s - lo) / (hi - lo)).clamp(INTENSITY_MARGIN, 1.0 - INTENSITY_MARGIN)
}

/// Min-max map into `[1e-3, 1 − 1e-3]`; constant input maps to 0.5.
/// Returns the intensities and the `(min, max)` bounds used.
pub fn normalize_intensities(scores: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score list"));
    }
    let (lo, hi) = score_bounds(scores);
    Ok((scores.iter().map(|&s| map_to_unit(s, lo, hi)).collect(), lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 100,
            grad_tolerance: 1e-6,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub grad_norm: f64,
}

/// Precomputed pair differences.
struct Problem {
    dim: usize,
    c: f64,
    ordered: Vec<Vec<f64>>,
    similar: Vec<Vec<f64>>,
}

impl Problem {
    fn new(cs: &ConstraintSets, c: f64) -> Self {
        Problem {
            dim: cs.dim(),
            c,
            ordered: cs.ordered.iter().map(|&(h, l)| cs.difference(h, l)).collect(),
            similar: cs.similar.iter().map(|&(a, b)| cs.difference(a, b)).collect(),
        }
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let reg = 0.5 * dot(w, w);
        let hinge: f64 = self.ordered.iter().map(|d| (1.0 - dot(w, d)).max(0.0).powi(2)).sum();
        let sim: f64 = self.similar.iter().map(|d| dot(w, d).powi(2)).sum();
        reg + self.c * (hinge + sim)
    }

    /// Gradient and Hessian at `w`, with the hinge active set taken at `w`.
    fn derivatives(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim;
        let mut g = w.to_vec();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        let two_c = 2.0 * self.c;
        let mut accumulate = |d: &[f64], coef: f64| {
            for (gi, di) in g.iter_mut().zip(d) {
                *gi += two_c * coef * di;
            }
            for i in 0..n {
                let s = two_c * d[i];
                for j in 0..n {
                    h[i * n + j] += s * d[j];
                }
            }
        };
        for d in &self.ordered {
            let margin = 1.0 - dot(w, d);
            if margin > 0.0 {
                accumulate(d, -margin);
            }
        }
        for d in &self.similar {
            accumulate(d, dot(w, d));
        }
        (g, h)
    }
}

/// Solves `H x = b` for symmetric positive definite `H` (row-major, n×n).
fn cholesky_solve(h: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Objective of the squared-slack primal at `w`.
pub fn objective(cs: &ConstraintSets, c: f64, w: &[f64]) -> f64 {
    Problem::new(cs, c).objective(w)
}

pub fn train_rank_svm(cs: &ConstraintSets, c: f64) -> Result<RankModel> {
    train_rank_svm_with(cs, c, &NewtonOptions::default()).map(|(m, _)| m)
}

pub fn train_rank_svm_with(cs: &ConstraintSets, c: f64, opts: &NewtonOptions) -> Result<(RankModel, SolveReport)> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::ConfigError(format!("C must be positive, got {c}")));
    }
    if cs.ordered.is_empty() {
        return Err(Error::EmptyInput("ordered pair set"));
    }
    cs.check_indices()?;

    let problem = Problem::new(cs, c);
    let mut w = vec![0.0; problem.dim];
    let mut f = problem.objective(&w);
    let mut history = vec![f];
    let mut iterations = 0;

    let finish = |w: Vec<f64>, iterations: usize, history: Vec<f64>, grad_norm: f64| {
        let scores: Vec<f64> = cs.features.iter().map(|x| dot(&w, x)).collect();
        let mut model = RankModel {
            accent_id: None,
            c,
            w,
            score_min: 0.0,
            score_max: 1.0,
            solver_iterations: iterations,
        };
        model.set_bounds(&scores);
        Ok((
            model,
            SolveReport {
                iterations,
                objective_history: history,
                grad_norm,
            },
        ))
    };

    loop {
        let (g, h) = problem.derivatives(&w);
        let gnorm = norm(&g);
        if gnorm < opts.grad_tolerance {
            return finish(w, iterations, history, gnorm);
        }
        if iterations >= opts.max_iterations {
            return Err(Error::SolverDiverged {
                objective: f,
                grad_norm: gnorm,
            });
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = cholesky_solve(&h, &neg_g).ok_or(Error::SolverDiverged {
            objective: f,
            grad_norm: gnorm,
        })?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_halvings {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let ft = problem.objective(&trial);
            if ft < f {
                w = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        history.push(f);
        if !accepted {
            // no representable decrease left: the iterate is as good as it gets
            return if gnorm < opts.grad_tolerance * 1e3 {
                finish(w, iterations, history, gnorm)
            } else {
                Err(Error::SolverDiverged {
                    objective: f,
                    grad_norm: gnorm,
                })
            };
        }
    }
}
