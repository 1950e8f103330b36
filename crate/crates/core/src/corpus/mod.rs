//! Paired L1/L2 corpora: manifest I/O, synthetic generation, splits and
//! intensity labeling.

mod label;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::probe_wav;
use crate::dsp::AudioConfig;
use crate::error::{Error, Result};

pub use label::{extract_features, label_intensity, LabelConfig, LabelOutcome};
pub use synth::{generate_synthetic_corpus, AccentPerturbation, SyntheticCorpus, SyntheticSpec};

/// ARPAbet inventory without stress marks, plus a silence symbol.
pub const PHONEMES: [&str; 40] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH", "SIL",
];

/// Largest frame/duration disagreement repaired on load.
pub const MAX_RECONCILE_FRAMES: usize = 3;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LABELED_MANIFEST_FILE: &str = "manifest.labeled.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const SPEC_FILE: &str = "corpus.json";

const HEADER: [&str; 8] = [
    "utterance_id",
    "speaker_id",
    "accent_id",
    "domain",
    "wav_path",
    "phonemes",
    "durations",
    "intensity",
];

/// Accepts stressed vowels such as `AH0`.
pub fn phoneme_id(symbol: &str) -> Option<usize> {
    let base = symbol.trim_end_matches(|c: char| c.is_ascii_digit());
    PHONEMES.iter().position(|p| *p == base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    L1,
    L2,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::L1 => "L1",
            Domain::L2 => "L2",
        })
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "L1" => Ok(Domain::L1),
            "L2" => Ok(Domain::L2),
            other => Err(format!("domain must be L1 or L2, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be train, val or test, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: u32,
    pub accent_id: u32,
    pub domain: Domain,
    /// Relative to the corpus root unless absolute.
    pub wav_path: PathBuf,
    pub phoneme_ids: Vec<usize>,
    pub durations: Vec<usize>,
    pub intensity: Option<f64>,
}

impl UtteranceRecord {
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
    /// Split per utterance id; both renditions share it.
    pub splits: BTreeMap<String, Split>,
    pub spec: Option<SyntheticSpec>,
}

impl CorpusManifest {
    pub fn wav_path(&self, r: &UtteranceRecord) -> PathBuf {
        if r.wav_path.is_absolute() {
            r.wav_path.clone()
        } else {
            self.root.join(&r.wav_path)
        }
    }

    pub fn find(&self, utterance_id: &str, domain: Domain) -> Option<&UtteranceRecord> {
        self.records
            .iter()
            .find(|r| r.utterance_id == utterance_id && r.domain == domain)
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.domain == domain)
    }

    pub fn split_of(&self, utterance_id: &str) -> Option<Split> {
        self.splits.get(utterance_id).copied()
    }

    /// Manifest TSV text. The intensity column is written only when some
    /// record carries a label.
    pub fn to_tsv(&self) -> String {
        let labeled = self.records.iter().any(|r| r.intensity.is_some());
        let cols = if labeled { 8 } else { 7 };
        let mut out = HEADER[..cols].join("\t");
        out.push('\n');
        for r in &self.records {
            let phonemes: Vec<&str> = r.phoneme_ids.iter().map(|&p| PHONEMES[p]).collect();
            let durations: Vec<String> = r.durations.iter().map(usize::to_string).collect();
            let mut row = vec![
                r.utterance_id.clone(),
                r.speaker_id.to_string(),
                r.accent_id.to_string(),
                r.domain.to_string(),
                r.wav_path.display().to_string(),
                phonemes.join(" "),
                durations.join(" "),
            ];
            if labeled {
                row.push(r.intensity.map(|v| format!("{v:?}")).unwrap_or_default());
            }
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn splits_tsv(&self) -> String {
        let mut out = String::from("utterance_id\tsplit\n");
        for (id, s) in &self.splits {
            out.push_str(&format!("{id}\t{s}\n"));
        }
        out
    }

    /// Writes the manifest (or the labeled manifest when any record has a
    /// label), the split table when present, and the generation spec.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let labeled = self.records.iter().any(|r| r.intensity.is_some());
        let name = if labeled { LABELED_MANIFEST_FILE } else { MANIFEST_FILE };
        std::fs::write(dir.join(name), self.to_tsv())?;
        if !self.splits.is_empty() {
            std::fs::write(dir.join(SPLITS_FILE), self.splits_tsv())?;
        }
        if let Some(spec) = &self.spec {
            std::fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(spec)? + "\n")?;
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_row(path: &Path, line: usize, text: &str, labeled: bool) -> Result<UtteranceRecord> {
    let cols: Vec<&str> = text.split('\t').collect();
    let want = if labeled { 8 } else { 7 };
    if cols.len() != want && !(labeled && cols.len() == 7) {
        return Err(parse_err(
            path,
            line,
            format!("expected {want} columns, got {}", cols.len()),
        ));
    }
    let num = |s: &str, what: &str| -> Result<u32> {
        s.parse()
            .map_err(|_| parse_err(path, line, format!("bad {what} {s:?}")))
    };
    let domain = cols[3].parse::<Domain>().map_err(|m| parse_err(path, line, m))?;
    let phoneme_ids = cols[5]
        .split_whitespace()
        .map(|s| phoneme_id(s).ok_or_else(|| parse_err(path, line, format!("unknown phoneme {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let durations = cols[6]
        .split_whitespace()
        .map(|s| match s.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(d),
            _ => Err(parse_err(path, line, format!("bad duration {s:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if phoneme_ids.is_empty() {
        return Err(parse_err(path, line, "no phonemes"));
    }
    if phoneme_ids.len() != durations.len() {
        return Err(parse_err(
            path,
            line,
            format!("{} phonemes but {} durations", phoneme_ids.len(), durations.len()),
        ));
    }
    let intensity = match cols.get(7).map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v < 1.0 => Some(v),
            _ => return Err(parse_err(path, line, format!("intensity {s:?} not in (0, 1)"))),
        },
    };
    if cols[0].is_empty() || cols[4].is_empty() {
        return Err(parse_err(path, line, "empty utterance id or wav path"));
    }
    Ok(UtteranceRecord {
        utterance_id: cols[0].to_string(),
        speaker_id: num(cols[1], "speaker id")?,
        accent_id: num(cols[2], "accent id")?,
        domain,
        wav_path: PathBuf::from(cols[4]),
        phoneme_ids,
        durations,
        intensity,
    })
}

/// Parses manifest text without touching the audio.
pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<UtteranceRecord>> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(parse_err(path, 1, "empty manifest")),
    };
    let hcols: Vec<&str> = header.split('\t').collect();
    let labeled = match hcols.len() {
        7 if hcols[..] == HEADER[..7] => false,
        8 if hcols[..] == HEADER[..] => true,
        _ => return Err(parse_err(path, 1, format!("unexpected header {header:?}"))),
    };
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let r = parse_row(path, i + 1, text, labeled)?;
        if !seen.insert((r.utterance_id.clone(), r.domain)) {
            return Err(parse_err(
                path,
                i + 1,
                format!("duplicate {} rendition of {}", r.domain, r.utterance_id),
            ));
        }
        records.push(r);
    }
    Ok(records)
}

/// Adjusts the final phoneme so durations cover `frames`. Differences up
/// to [`MAX_RECONCILE_FRAMES`] are repaired with a warning.
pub fn reconcile_durations(r: &mut UtteranceRecord, frames: usize) -> Result<()> {
    let total = r.frames();
    if total == frames {
        return Ok(());
    }
    let diff = frames.abs_diff(total);
    let last = r.durations.len() - 1;
    let adjusted = if frames > total {
        Some(r.durations[last] + diff)
    } else {
        r.durations[last].checked_sub(diff).filter(|&d| d >= 1)
    };
    match adjusted {
        Some(d) if diff <= MAX_RECONCILE_FRAMES => {
            log::warn!(
                "{} ({}): durations sum to {total} but audio has {frames} frames; final phoneme set to {d}",
                r.utterance_id,
                r.domain
            );
            r.durations[last] = d;
            Ok(())
        }
        _ => Err(Error::AlignmentMismatch(format!(
            "{} ({}): durations sum to {total}, audio has {frames} frames",
            r.utterance_id, r.domain
        ))),
    }
}

/// Frames the analysis front end will produce for a wav, after resampling
/// to the configured rate.
pub fn wav_frames(path: &Path, audio: &AudioConfig) -> Result<usize> {
    let (len, sr) = probe_wav(path)?;
    let len = if sr == audio.sample_rate {
        len
    } else {
        ((len as f64) * audio.sample_rate as f64 / sr as f64).round() as usize
    };
    audio.frame_count(len).ok_or(Error::InputTooShort {
        got: len,
        need: audio.frame_samples(),
    })
}

fn read_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, s) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected two columns"))?;
        let s = s.parse::<Split>().map_err(|m| parse_err(path, i + 1, m))?;
        out.insert(id.to_string(), s);
    }
    Ok(out)
}

/// Loads `root/manifest.labeled.tsv` if present, else `root/manifest.tsv`,
/// checks every wav and reconciles durations against the audio length.
pub fn load_corpus(root: &Path, audio: &AudioConfig) -> Result<CorpusManifest> {
    let labeled = root.join(LABELED_MANIFEST_FILE);
    let path = if labeled.exists() {
        labeled
    } else {
        root.join(MANIFEST_FILE)
    };
    if !path.exists() {
        return Err(parse_err(&path, 0, "manifest not found"));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut records = parse_manifest(&path, &text)?;
    let mut m = CorpusManifest {
        root: root.to_path_buf(),
        records: Vec::new(),
        splits: BTreeMap::new(),
        spec: None,
    };
    for r in &mut records {
        let frames = wav_frames(&m.wav_path(r), audio)?;
        reconcile_durations(r, frames)?;
    }
    m.records = records;
    let splits = root.join(SPLITS_FILE);
    if splits.exists() {
        m.splits = read_splits(&splits)?;
    }
    let spec = root.join(SPEC_FILE);
    if spec.exists() {
        m.spec = Some(serde_json::from_str(&std::fs::read_to_string(spec)?)?);
    }
    Ok(m)
}

/// Minimum utterances per speaker for an 8:1:1 split.
pub const MIN_SPLIT_UTTERANCES: usize = 10;

/// Per-speaker shuffled 8:1:1 assignment of utterance ids, with the
/// validation and test shares rounded to nearest.
pub fn split_corpus(mut m: CorpusManifest, seed: u64) -> Result<CorpusManifest> {
    let mut by_speaker: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for r in &m.records {
        by_speaker
            .entry(r.speaker_id)
            .or_default()
            .insert(r.utterance_id.clone());
    }
    if by_speaker.is_empty() {
        return Err(Error::EmptyInput("corpus records"));
    }
    let mut splits = BTreeMap::new();
    for (spk, ids) in by_speaker {
        let n = ids.len();
        if n < MIN_SPLIT_UTTERANCES {
            return Err(Error::CorpusTooSmall {
                speaker: spk,
                count: n,
                need: MIN_SPLIT_UTTERANCES,
            });
        }
        let mut ids: Vec<String> = ids.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(spk) << 32));
        ids.shuffle(&mut rng);
        let share = (n as f64 / 10.0).round() as usize;
        for (k, id) in ids.into_iter().enumerate() {
            let s = if k < n - 2 * share {
                Split::Train
            } else if k < n - share {
                Split::Val
            } else {
                Split::Test
            };
            splits.insert(id, s);
        }
    }
    m.splits = splits;
    Ok(m)
}

/// Counts of (train, val, test) utterance ids for one speaker.
pub fn split_counts(m: &CorpusManifest, speaker_id: u32) -> (usize, usize, usize) {
    let ids: BTreeSet<&str> = m
        .records
        .iter()
        .filter(|r| r.speaker_id == speaker_id)
        .map(|r| r.utterance_id.as_str())
        .collect();
    let mut c = (0, 0, 0);
    for id in ids {
        match m.split_of(id) {
            Some(Split::Train) => c.0 += 1,
            Some(Split::Val) => c.1 += 1,
            Some(Split::Test) => c.2 += 1,
            None => {}
        }
    }
    c
}

/// Replaces L1 renditions with externally produced wavs named
/// `{utterance_id}.wav` in `dir`. Durations are rescaled to the new frame
/// count. Returns the number of renditions attached.
pub fn attach_l1_dir(m: &mut CorpusManifest, dir: &Path, audio: &AudioConfig) -> Result<usize> {
    let dir = std::fs::canonicalize(dir).map_err(|_| Error::MissingAsset(dir.to_path_buf()))?;
    let l2: Vec<UtteranceRecord> = m.domain(Domain::L2).cloned().collect();
    let mut attached = 0;
    for r2 in l2 {
        let wav = dir.join(format!("{}.wav", r2.utterance_id));
        if !wav.exists() {
            continue;
        }
        let frames = wav_frames(&wav, audio)?;
        if frames < r2.durations.len() {
            return Err(Error::AlignmentMismatch(format!(
                "{}: {frames} frames cannot cover {} phonemes",
                r2.utterance_id,
                r2.durations.len()
            )));
        }
        let record = UtteranceRecord {
            domain: Domain::L1,
            wav_path: wav,
            durations: rescale_durations(&r2.durations, frames),
            intensity: None,
            ..r2.clone()
        };
        match m
            .records
            .iter_mut()
            .find(|r| r.utterance_id == r2.utterance_id && r.domain == Domain::L1)
        {
            Some(slot) => *slot = record,
            None => m.records.push(record),
        }
        attached += 1;
    }
    Ok(attached)
}

/// Proportional rescale to `frames` total with a floor of one frame per
/// phoneme; the remainder goes to the longest phonemes first.
pub fn rescale_durations(durations: &[usize], frames: usize) -> Vec<usize> {
    let total: usize = durations.iter().sum();
    let n = durations.len();
    if n == 0 || frames < n {
        return durations.to_vec();
    }
    let mut out: Vec<usize> = durations
        .iter()
        .map(|&d| ((d as f64 * frames as f64 / total as f64).floor() as usize).max(1))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(durations[i]));
    let mut k = 0;
    while out.iter().sum::<usize>() < frames {
        out[order[k % n]] += 1;
        k += 1;
    }
    while out.iter().sum::<usize>() > frames {
        let i = order[k % n];
        if out[i] > 1 {
            out[i] -= 1;
        }
        k += 1;
    }
    out
}
