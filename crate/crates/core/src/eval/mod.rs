//! Objective metrics: DTW-aligned spectral, pitch and energy distances,
//! duration boundary error, pitch moments and intensity confusion.

pub mod plot;

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::moments;

/// Cepstral coefficients 1..=K enter the MCD.
pub const MCD_ORDER: usize = 13;
pub const COARSE_BOUNDS: (f64, f64) = (0.35, 0.65);
pub const FINE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Relative tolerance under which two accumulated path costs tie.
const TIE_EPS: f64 = 1e-12;

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    let tol = TIE_EPS * a.0.abs().max(b.0.abs()).max(1.0);
    if (a.0 - b.0).abs() <= tol {
        a.1 < b.1
    } else {
        a.0 < b.0
    }
}

/// Minimum-cost monotone alignment with unit steps (1,0), (0,1), (1,1).
/// Among paths of equal cost the shortest wins. Returns the accumulated
/// cost and the number of aligned pairs.
pub fn dtw<F: Fn(usize, usize) -> f64>(n: usize, m: usize, cost: F) -> Result<(f64, usize)> {
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("alignment sequence"));
    }
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                    if i >= di && j >= dj {
                        let cand = acc[(i - di) * m + (j - dj)];
                        if better(cand, best) {
                            best = cand;
                        }
                    }
                }
                best
            };
            acc[i * m + j] = (prev.0 + c, prev.1 + 1);
        }
    }
    Ok(acc[n * m - 1])
}

/// DCT-II of one log-mel frame, coefficients `0..=order`.
pub fn cepstrum(log_mel: &[f64], order: usize) -> Vec<f64> {
    let n = log_mel.len() as f64;
    (0..=order)
        .map(|k| {
            log_mel
                .iter()
                .enumerate()
                .map(|(i, &x)| x * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum()
        })
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub const MCD_SCALE: f64 = 10.0 / LN_10 * std::f64::consts::SQRT_2;

/// Mel-cepstral distortion in dB between two log-mel sequences after DTW
/// alignment on cepstral distance (coefficients 1..=13).
pub fn mcd_dtw(mel_a: &[Vec<f64>], mel_b: &[Vec<f64>]) -> Result<f64> {
    if mel_a.is_empty() || mel_b.is_empty() {
        return Err(Error::EmptyInput("mel sequence"));
    }
    if mel_a[0].len() != mel_b[0].len() {
        return Err(Error::DimMismatch {
            expected: mel_a[0].len(),
            got: mel_b[0].len(),
        });
    }
    let ca: Vec<Vec<f64>> = mel_a.iter().map(|f| cepstrum(f, MCD_ORDER)[1..].to_vec()).collect();
    let cb: Vec<Vec<f64>> = mel_b.iter().map(|f| cepstrum(f, MCD_ORDER)[1..].to_vec()).collect();
    let (total, len) = dtw(ca.len(), cb.len(), |i, j| euclid(&ca[i], &cb[j]))?;
    Ok(MCD_SCALE * total / len as f64)
}

/// Population std, skewness and excess kurtosis over voiced (> 0) values.
pub fn pitch_moments(pitch_hz: &[f64]) -> Result<(f64, f64, f64)> {
    let voiced: Vec<f64> = pitch_hz.iter().copied().filter(|&p| p > 0.0).collect();
    if voiced.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} voiced values, need 2",
            voiced.len()
        )));
    }
    let (_, std, skew, kurt) = moments(&voiced);
    Ok((std, skew, kurt))
}

fn voiced(track: &[f64]) -> Vec<f64> {
    track.iter().copied().filter(|&p| p > 0.0).collect()
}

/// Mean absolute pitch difference along the DTW path over voiced frames.
pub fn pitch_dtw(track_a: &[f64], track_b: &[f64]) -> Result<f64> {
    let (a, b) = (voiced(track_a), voiced(track_b));
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("no voiced frames".into()));
    }
    let (total, len) = dtw(a.len(), b.len(), |i, j| (a[i] - b[j]).abs())?;
    Ok(total / len as f64)
}

/// Mean absolute energy difference along the DTW path.
pub fn energy_mae_dtw(e_a: &[f64], e_b: &[f64]) -> Result<f64> {
    let (total, len) = dtw(e_a.len(), e_b.len(), |i, j| (e_a[i] - e_b[j]).abs())?;
    Ok(total / len as f64)
}

/// Mean absolute difference of cumulative phoneme end boundaries, in ms.
pub fn duration_boundary_delta(pred: &[usize], gt: &[usize], frame_shift: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} predicted vs {} reference phonemes",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("duration sequence"));
    }
    let (mut bp, mut bg, mut sum) = (0i64, 0i64, 0i64);
    for (&p, &g) in pred.iter().zip(gt) {
        bp += p as i64;
        bg += g as i64;
        sum += (bp - bg).abs();
    }
    Ok(sum as f64 / pred.len() as f64 * frame_shift * 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Slight,
    Average,
    Strong,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Slight, Band::Average, Band::Strong];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Slight => "slight",
            Band::Average => "average",
            Band::Strong => "strong",
        }
    }
}

/// Bands split at 0.35 and 0.65.
pub fn categorize_intensity(i: f64) -> Band {
    if i < COARSE_BOUNDS.0 {
        Band::Slight
    } else if i < COARSE_BOUNDS.1 {
        Band::Average
    } else {
        Band::Strong
    }
}

/// Index of the nearest of 0.1, …, 0.9; ties go to the lower level.
pub fn nearest_level(i: f64) -> usize {
    let mut best = 0;
    for (k, &l) in FINE_LEVELS.iter().enumerate() {
        if (i - l).abs() < (i - FINE_LEVELS[best]).abs() {
            best = k;
        }
    }
    best
}

/// Rows are intended categories, columns predicted ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Share of samples on the diagonal.
    pub fn diagonal_mass(&self) -> f64 {
        let d: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        d as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityConfusion {
    pub coarse: ConfusionMatrix,
    pub fine: ConfusionMatrix,
}

/// Confusion of (intended, predicted) pairs at band and 0.1-step level.
pub fn intensity_confusion(pairs: &[(f64, f64)]) -> Result<IntensityConfusion> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("intensity pairs"));
    }
    let mut coarse = ConfusionMatrix::new(Band::ALL.iter().map(|b| b.name().to_string()).collect());
    let mut fine = ConfusionMatrix::new(FINE_LEVELS.iter().map(|l| format!("{l:.1}")).collect());
    for &(intended, predicted) in pairs {
        coarse.counts[categorize_intensity(intended).index()][categorize_intensity(predicted).index()] += 1;
        fine.counts[nearest_level(intended)][nearest_level(predicted)] += 1;
    }
    Ok(IntensityConfusion { coarse, fine })
}

/// Average ranks, ties sharing the mean of their positions (1-based).
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("need two samples for a correlation".into()));
    }
    Ok(pearson(&ranks(x), &ranks(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub mcd_db: f64,
    pub pitch_sigma: f64,
    pub pitch_skewness: f64,
    pub pitch_kurtosis: f64,
    pub pitch_dtw: f64,
    pub energy_mae: f64,
    pub duration_delta_ms: f64,
    pub intensity: Option<IntensityConfusion>,
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        [
            self.mcd_db,
            self.pitch_sigma,
            self.pitch_skewness,
            self.pitch_kurtosis,
            self.pitch_dtw,
            self.energy_mae,
            self.duration_delta_ms,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One generated/reference utterance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub mel_pred: Vec<Vec<f64>>,
    pub mel_ref: Vec<Vec<f64>>,
    pub pitch_pred: Vec<f64>,
    pub pitch_ref: Vec<f64>,
    pub energy_pred: Vec<f64>,
    pub energy_ref: Vec<f64>,
    pub durations_pred: Vec<usize>,
    pub durations_ref: Vec<usize>,
}

/// Per-utterance distances averaged over items; pitch moments pool the
/// predicted voiced frames of the whole set.
pub fn evaluate(items: &[EvalItem], frame_shift: f64, intensity_pairs: &[(f64, f64)]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("evaluation items"));
    }
    let n = items.len() as f64;
    let (mut mcd, mut pd, mut emae, mut dd) = (0.0, 0.0, 0.0, 0.0);
    let mut pooled = Vec::new();
    for it in items {
        mcd += mcd_dtw(&it.mel_pred, &it.mel_ref)?;
        pd += pitch_dtw(&it.pitch_pred, &it.pitch_ref)?;
        emae += energy_mae_dtw(&it.energy_pred, &it.energy_ref)?;
        dd += duration_boundary_delta(&it.durations_pred, &it.durations_ref, frame_shift)?;
        pooled.extend(it.pitch_pred.iter().copied().filter(|&p| p > 0.0));
    }
    let (sigma, skew, kurt) = pitch_moments(&pooled)?;
    let intensity = if intensity_pairs.is_empty() {
        None
    } else {
        Some(intensity_confusion(intensity_pairs)?)
    };
    Ok(EvalReport {
        utterances: items.len(),
        mcd_db: mcd / n,
        pitch_sigma: sigma,
        pitch_skewness: skew,
        pitch_kurtosis: kurt,
        pitch_dtw: pd / n,
        energy_mae: emae / n,
        duration_delta_ms: dd / n,
        intensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_delta_example() {
        assert_eq!(duration_boundary_delta(&[2, 2], &[3, 1], 0.0125).unwrap(), 6.25);
        assert_eq!(duration_boundary_delta(&[4, 1, 2], &[4, 1, 2], 0.0125).unwrap(), 0.0);
        assert!(matches!(
            duration_boundary_delta(&[1], &[1, 2], 0.0125),
            Err(Error::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn dtw_metric_examples() {
        assert_eq!(energy_mae_dtw(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(pitch_dtw(&[100.0; 5], &[110.0; 5]).unwrap(), 10.0);
        assert_eq!(pitch_dtw(&[0.0, 120.0, 130.0], &[120.0, 0.0, 130.0]).unwrap(), 0.0);
        assert!(matches!(
            pitch_dtw(&[0.0, 0.0], &[100.0]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(energy_mae_dtw(&[], &[1.0]), Err(Error::EmptyInput(_))));
        let a = vec![vec![0.1, -2.0, 3.0], vec![1.0, 0.5, -0.2], vec![0.3, 0.3, 0.9]];
        assert_eq!(mcd_dtw(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.insert(1, a[1].clone());
        assert_eq!(mcd_dtw(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cepstrum_of_constant_frame() {
        let c = cepstrum(&[2.0; 8], 3);
        assert!((c[0] - 16.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pitch_moment_examples() {
        let (s, g, k) = pitch_moments(&[199.0, 200.0, 201.0, 0.0]).unwrap();
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(g, 0.0);
        assert!((k - (-1.5)).abs() < 1e-12);
        assert_eq!(pitch_moments(&[150.0; 4]).unwrap(), (0.0, 0.0, 0.0));
        assert!(matches!(pitch_moments(&[0.0, 150.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bands() {
        assert_eq!(categorize_intensity(0.2), Band::Slight);
        assert_eq!(categorize_intensity(0.5), Band::Average);
        assert_eq!(categorize_intensity(0.8), Band::Strong);
        assert_eq!(categorize_intensity(0.35), Band::Average);
        assert_eq!(categorize_intensity(0.65), Band::Strong);
        assert_eq!(categorize_intensity(0.01), Band::Slight);
        assert_eq!(categorize_intensity(0.99), Band::Strong);
        assert_eq!(nearest_level(0.04), 0);
        assert_eq!(nearest_level(0.97), 8);
        assert_eq!(nearest_level(0.52), 4);
    }

    #[test]
    fn confusion_examples() {
        let c = intensity_confusion(&[(0.2, 0.2), (0.5, 0.5), (0.8, 0.8)]).unwrap();
        assert_eq!(c.coarse.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(c.coarse.diagonal_mass(), 1.0);
        let c = intensity_confusion(&[(0.2, 0.8)]).unwrap();
        assert_eq!(c.coarse.counts[0][2], 1);
        assert_eq!(c.coarse.total(), 1);
        assert_eq!(c.fine.counts[1][7], 1);
        assert!(intensity_confusion(&[]).is_err());
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }
}
