//! Utterance-level accent descriptors.
//!
//! The vector has 36 entries: nine functionals over each of four
//! contours, laid out contour-major:
//!
//! | block | contour                         |
//! |-------|---------------------------------|
//! | 0..9  | F0 over voiced frames           |
//! | 9..18 | ΔF0 between consecutive voiced  |
//! | 18..27| frame energy                    |
//! | 27..36| Δ energy                        |
//!
//! and within each block: mean, std, min, max, range, median, skewness,
//! excess kurtosis, least-squares slope.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::ProsodyTrack;
use crate::error::{Error, Result};

pub const N_FUNCTIONALS: usize = 9;
pub const N_CONTOURS: usize = 4;
pub const FEATURE_DIM: usize = N_FUNCTIONALS * N_CONTOURS;

/// Moments are reported as 0 below this standard deviation.
pub const MOMENT_STD_FLOOR: f64 = 1e-8;

pub const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "mean", "std", "min", "max", "range", "median", "skewness", "kurtosis", "slope",
];
pub const CONTOUR_NAMES: [&str; N_CONTOURS] = ["f0", "delta_f0", "energy", "delta_energy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccentFeatureVector {
    pub utterance_id: String,
    pub speaker_id: u32,
    pub accent_id: u32,
    pub values: Vec<f64>,
}

impl AccentFeatureVector {
    pub fn new(utterance_id: impl Into<String>, speaker_id: u32, accent_id: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::DimMismatch {
                expected: FEATURE_DIM,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(AccentFeatureVector {
            utterance_id: utterance_id.into(),
            speaker_id,
            accent_id,
            values,
        })
    }
}

/// Summary statistics of one contour.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Functionals {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub median: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub slope: f64,
}

impl Functionals {
    pub fn to_array(self) -> [f64; N_FUNCTIONALS] {
        [
            self.mean,
            self.std,
            self.min,
            self.max,
            self.range,
            self.median,
            self.skewness,
            self.kurtosis,
            self.slope,
        ]
    }
}

/// Population moments `(mean, std, skewness, excess kurtosis)`.
pub fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    if std < MOMENT_STD_FLOOR {
        return (mean, std, 0.0, 0.0);
    }
    (mean, std, m3 / (m2 * std), m4 / (m2 * m2) - 3.0)
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Least-squares slope of `values` against `positions`.
fn slope(positions: &[f64], values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mx = positions.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in positions.iter().zip(values) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Functionals of `values` sampled at `positions`; all zeros when empty.
pub fn functionals_at(positions: &[f64], values: &[f64]) -> Functionals {
    if values.is_empty() {
        return Functionals::default();
    }
    let (mean, std, skewness, kurtosis) = moments(values);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Functionals {
        mean,
        std,
        min,
        max,
        range: max - min,
        median: median(values),
        skewness,
        kurtosis,
        slope: slope(positions, values),
    }
}

pub fn functionals(values: &[f64]) -> Functionals {
    let pos: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    functionals_at(&pos, values)
}

fn deltas(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// The raw 36 values for one track.
pub fn functional_values(track: &ProsodyTrack) -> Result<Vec<f64>> {
    if track.is_empty() {
        return Err(Error::EmptyTrack);
    }
    let (voiced_pos, voiced): (Vec<f64>, Vec<f64>) = track
        .pitch_hz
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i as f64, p))
        .unzip();

    let blocks = [
        functionals_at(&voiced_pos, &voiced),
        functionals(&deltas(&voiced)),
        functionals(&track.energy),
        functionals(&deltas(&track.energy)),
    ];
    Ok(blocks.iter().flat_map(|b| b.to_array()).collect())
}

pub fn compute_functionals(
    track: &ProsodyTrack,
    utterance_id: &str,
    speaker_id: u32,
    accent_id: u32,
) -> Result<AccentFeatureVector> {
    AccentFeatureVector::new(utterance_id, speaker_id, accent_id, functional_values(track)?)
}

pub fn feature_names() -> Vec<String> {
    (0..FEATURE_DIM).map(|i| format!("f{i:02}")).collect()
}

/// Long-form name of feature `i`, e.g. `energy_slope`.
pub fn describe_feature(i: usize) -> String {
    format!(
        "{}_{}",
        CONTOUR_NAMES[i / N_FUNCTIONALS],
        FUNCTIONAL_NAMES[i % N_FUNCTIONALS]
    )
}

/// Tab-separated table with header `utterance_id speaker_id accent_id f00..f35`.
/// An optional leading `domain` column is emitted when `domains` is given.
pub fn to_tsv(vectors: &[AccentFeatureVector], domains: Option<&[String]>) -> String {
    let mut out = String::new();
    if domains.is_some() {
        out.push_str("domain\t");
    }
    out.push_str("utterance_id\tspeaker_id\taccent_id");
    for name in feature_names() {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for (i, v) in vectors.iter().enumerate() {
        if let Some(d) = domains {
            let _ = write!(out, "{}\t", d[i]);
        }
        let _ = write!(out, "{}\t{}\t{}", v.utterance_id, v.speaker_id, v.accent_id);
        for x in &v.values {
            // `{:?}` prints the shortest representation that round-trips
            let _ = write!(out, "\t{x:?}");
        }
        out.push('\n');
    }
    out
}

/// Parses [`to_tsv`] output. Returns vectors and, if present, the domain column.
pub fn read_tsv(path: &Path) -> Result<(Vec<AccentFeatureVector>, Option<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|_| Error::MissingAsset(path.to_path_buf()))?;
    let perr = |line: usize, msg: String| Error::ParseError {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))??;
    let with_domain = header.starts_with("domain\t");
    let offset = usize::from(with_domain);
    let expected_cols = 3 + FEATURE_DIM + offset;
    if header.split('\t').count() != expected_cols {
        return Err(perr(1, format!("expected {expected_cols} header columns")));
    }

    let mut vectors = Vec::new();
    let mut domains = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected_cols {
            return Err(perr(
                lineno,
                format!("expected {expected_cols} columns, got {}", cols.len()),
            ));
        }
        if with_domain {
            domains.push(cols[0].to_string());
        }
        let speaker = cols[offset + 1]
            .parse()
            .map_err(|e| perr(lineno, format!("speaker_id: {e}")))?;
        let accent = cols[offset + 2]
            .parse()
            .map_err(|e| perr(lineno, format!("accent_id: {e}")))?;
        let values = cols[offset + 3..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| perr(lineno, format!("feature value: {e}")))?;
        vectors.push(AccentFeatureVector::new(cols[offset], speaker, accent, values)?);
    }
    Ok((vectors, with_domain.then_some(domains)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(pitch: Vec<f64>, energy: Vec<f64>) -> ProsodyTrack {
        ProsodyTrack::new(pitch, energy).unwrap()
    }

    #[test]
    fn constant_track() {
        let f = functional_values(&track(vec![200.0; 50], vec![1.0; 50])).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        let f0 = &f[0..9];
        assert_eq!(f0[0], 200.0);
        assert_eq!(f0[5], 200.0);
        for k in [1, 4, 6, 7, 8] {
            assert!(f0[k].abs() < 1e-12, "f0 functional {k}");
        }
        assert_eq!(f[18], 1.0);
        for k in [19, 22, 24, 25, 26] {
            assert!(f[k].abs() < 1e-12, "energy functional {k}");
        }
        assert!(f[9..18].iter().all(|v| *v == 0.0));
        assert!(f[27..36].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rising_ramp() {
        let pitch: Vec<f64> = (0..101).map(|i| 100.0 + i as f64).collect();
        let f = functional_values(&track(pitch, vec![0.5; 101])).unwrap();
        assert!((f[8] - 1.0).abs() < 1e-6);
        assert!(f[6].abs() < 1e-6);
        assert_eq!(f[2], 100.0);
        assert_eq!(f[3], 200.0);
        assert_eq!(f[4], 100.0);
        assert_eq!(f[5], 150.0);
    }

    #[test]
    fn unvoiced_utterance_zeroes_pitch_blocks() {
        let f = functional_values(&track(vec![0.0; 10], (0..10).map(f64::from).collect())).unwrap();
        assert!(f[..18].iter().all(|v| *v == 0.0));
        assert_eq!(f[18], 4.5);
    }

    #[test]
    fn empty_track_rejected() {
        assert!(matches!(
            functional_values(&track(vec![], vec![])),
            Err(Error::EmptyTrack)
        ));
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(matches!(
            AccentFeatureVector::new("u", 0, 0, vec![0.0; 35]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn names() {
        assert_eq!(describe_feature(0), "f0_mean");
        assert_eq!(describe_feature(35), "delta_energy_slope");
        assert_eq!(feature_names()[35], "f35");
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = AccentFeatureVector::new("utt1", 3, 1, (0..36).map(|i| i as f64 * 0.1 + 1e-7).collect()).unwrap();
        let path = dir.path().join("f.tsv");
        std::fs::write(&path, to_tsv(std::slice::from_ref(&v), Some(&["L2".to_string()]))).unwrap();
        let (back, doms) = read_tsv(&path).unwrap();
        assert_eq!(back, vec![v]);
        assert_eq!(doms.unwrap(), vec!["L2"]);
    }
}
