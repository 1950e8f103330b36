//! Command-line front end. Every subcommand resolves a typed config from
//! an optional JSON file plus flag overrides, echoes it to
//! `effective_config.json` under `--out`, and writes all artifacts there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{
    extract_features, generate_synthetic_corpus, label_intensity, load_corpus, phoneme_id, split_corpus,
    CorpusManifest, Domain, LabelConfig, Split, SyntheticSpec, UtteranceRecord, PHONEMES,
};
use crate::dsp::wav::read_wav;
use crate::dsp::{prosody_track, AudioConfig};
use crate::error::Error;
use crate::eval::plot::{confusion_heatmap, line_chart};
use crate::eval::{evaluate, EvalItem, EvalReport, FINE_LEVELS};
use crate::features::{self, AccentFeatureVector};
use crate::model::data::{fit_prosody, prepare_records, to_training_item};
use crate::model::{
    expand_durations, gradcheck, load_checkpoint, save_checkpoint, CaiTts, ModelConfig, SynthesisRequest, TrainConfig,
    Trainer,
};
use crate::nn::check_layers;
use crate::ranker::RankModel;

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] Error),
    #[error("gradient check failed: max relative error {0:.3e} >= {GRAD_TOLERANCE:e}")]
    CheckFailed(f64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) | CliError::CheckFailed(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "caitts",
    version,
    about = "Accent-intensity controllable speech synthesis toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic L1/L2 corpus with splits.
    GenCorpus(GenCorpusArgs),
    /// Compute prosodic functionals for every utterance.
    ExtractFeatures(ExtractArgs),
    /// Fit the ranking function and report pair scores.
    TrainRanker(RankerArgs),
    /// Write an intensity-labeled copy of the corpus manifest.
    LabelIntensity(LabelArgs),
    /// Train the acoustic model on labeled L2 utterances.
    TrainTts(TrainTtsArgs),
    /// Generate mel spectrograms at one or several intensities.
    Synthesize(SynthesizeArgs),
    /// Objective metrics and the intensity confusion on a split.
    Evaluate(EvaluateArgs),
    /// Render SVG figures from earlier outputs.
    Plot(PlotArgs),
    /// Finite-difference check of every layer and the full loss.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed (required here or in the config).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_speakers: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_accents: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterances_per_speaker: Option<usize>,
    /// Comma-separated perturbation magnitude per accent.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitudes: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude_jitter: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Corpus directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub audio: AudioConfig,
}

#[derive(Debug, Args, Serialize)]
pub struct RankerArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Slack penalty of the ranking objective.
    #[arg(long = "C", id = "C")]
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Extra random similar pairs (default: twice the matched pairs).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_pairs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    #[serde(rename = "C", default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub random_pairs: Option<usize>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub audio: AudioConfig,
}

fn default_c() -> f64 {
    1.0
}

impl RankerConfig {
    fn label_config(&self) -> LabelConfig {
        LabelConfig {
            c: self.c,
            random_pairs: self.random_pairs,
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub ranker_args: RankerArgs,
    /// Apply a saved ranker instead of fitting one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranker: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelIntensityConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    #[serde(default)]
    pub ranker: Option<PathBuf>,
    #[serde(rename = "C", default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub random_pairs: Option<usize>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub audio: AudioConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
    Toy,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Toy => ModelConfig::toy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConsistencyArg {
    Joint,
    Detached,
}

#[derive(Debug, Args)]
pub struct TrainTtsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labeled corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Architecture preset; replaces the `model` key.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `detached` cuts the consistency gradient into the generator.
    #[arg(long, value_enum)]
    pub consistency: Option<ConsistencyArg>,
    #[arg(long)]
    pub consistency_probes: Option<usize>,
    /// Train on at most this many utterances.
    #[arg(long)]
    pub max_utterances: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainTtsConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    #[serde(default = "ModelConfig::desk")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Split to train on; `null` uses every labeled L2 utterance.
    #[serde(default = "default_train_split")]
    pub split: Option<Split>,
    #[serde(default)]
    pub max_utterances: Option<usize>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub audio: AudioConfig,
}

fn default_train_split() -> Option<Split> {
    Some(Split::Train)
}

fn parse_intensity(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in the open interval (0,1)"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Checkpoint written by train-tts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Target accent intensity in (0,1).
    #[arg(long, value_parser = parse_intensity, conflicts_with = "sweep")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    /// Intensity sweep `start:stop:step`, e.g. 0.1:0.9:0.1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
    /// Space-separated ARPAbet phonemes to synthesize.
    #[arg(long, conflicts_with = "corpus")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phonemes: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accent_id: Option<usize>,
    /// Take phonemes, speaker and accent from the L2 records of a corpus.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Comma-separated utterance ids within the corpus.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterances: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub seed: u64,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub intensity: Option<f64>,
    #[serde(default)]
    pub sweep: Option<String>,
    #[serde(default)]
    pub phonemes: Option<String>,
    #[serde(default)]
    pub speaker_id: usize,
    #[serde(default)]
    pub accent_id: usize,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub utterances: Option<Vec<String>>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Labeled corpus directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    /// `null` evaluates every labeled L2 utterance.
    #[serde(default = "default_eval_split")]
    pub split: Option<Split>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub audio: AudioConfig,
}

fn default_eval_split() -> Option<Split> {
    Some(Split::Test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// Loss curves from `losses.tsv`.
    Loss,
    /// Heatmaps from an evaluation `report.json`.
    Confusion,
    /// Pitch contours from `synthesis.json` or a wav file.
    Pitch,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<PlotKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub seed: u64,
    pub kind: PlotKind,
    pub input: PathBuf,
    #[serde(default)]
    pub audio: AudioConfig,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Central-difference step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenCorpus(a) => {
            let cfg: SyntheticSpec = resolve(&a.common, overrides(&a)?)?;
            gen_corpus(&a.common.out, &cfg)
        }
        Command::ExtractFeatures(a) => {
            let cfg: ExtractConfig = resolve(&a.common, overrides(&a)?)?;
            extract(&a.common.out, &cfg)
        }
        Command::TrainRanker(a) => {
            let cfg: RankerConfig = resolve(&a.common, overrides(&a)?)?;
            train_ranker(&a.common.out, &cfg)
        }
        Command::LabelIntensity(a) => {
            let mut o = overrides(&a.ranker_args)?;
            o.extend(overrides(&a)?);
            let cfg: LabelIntensityConfig = resolve(&a.ranker_args.common, o)?;
            label(&a.ranker_args.common.out, &cfg)
        }
        Command::TrainTts(a) => {
            let cfg: TrainTtsConfig = resolve(&a.common, train_overrides(&a)?)?;
            train_tts(&a.common.out, &cfg)
        }
        Command::Synthesize(a) => {
            let cfg: SynthesizeConfig = resolve(&a.common, overrides(&a)?)?;
            synthesize(&a.common.out, &cfg)
        }
        Command::Evaluate(a) => {
            let cfg: EvaluateConfig = resolve(&a.common, overrides(&a)?)?;
            run_evaluate(&a.common.out, &cfg)
        }
        Command::Plot(a) => {
            let cfg: PlotConfig = resolve(&a.common, overrides(&a)?)?;
            plot(&a.common.out, &cfg)
        }
        Command::GradCheck(a) => {
            let cfg: GradCheckConfig = resolve(&a.common, overrides(&a)?)?;
            grad_check(&a.common.out, &cfg)
        }
    }
}

fn overrides<T: Serialize>(args: &T) -> CliResult<Map<String, Value>> {
    match serde_json::to_value(args).map_err(Error::from)? {
        Value::Object(m) => Ok(m),
        _ => Ok(Map::new()),
    }
}

fn train_overrides(a: &TrainTtsArgs) -> CliResult<Map<String, Value>> {
    let mut top = Map::new();
    let mut train = Map::new();
    if let Some(c) = &a.corpus {
        top.insert("corpus".into(), Value::from(c.display().to_string()));
    }
    if let Some(p) = a.preset {
        top.insert("model".into(), serde_json::to_value(p.config()).map_err(Error::from)?);
    }
    if let Some(n) = a.max_utterances {
        top.insert("max_utterances".into(), n.into());
    }
    if let Some(j) = a.jobs {
        top.insert("jobs".into(), j.into());
    }
    if let Some(s) = a.steps {
        train.insert("steps".into(), s.into());
    }
    if let Some(b) = a.batch_size {
        train.insert("batch_size".into(), b.into());
    }
    if let Some(c) = a.consistency {
        let v = match c {
            ConsistencyArg::Joint => "joint",
            ConsistencyArg::Detached => "detached",
        };
        train.insert("consistency".into(), v.into());
    }
    if let Some(p) = a.consistency_probes {
        train.insert("consistency_probes".into(), p.into());
    }
    if !train.is_empty() {
        top.insert("train".into(), Value::Object(train));
    }
    Ok(top)
}

fn merge(base: &mut Map<String, Value>, over: Map<String, Value>) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Config file, then flags, then `--seed`; the result must name a seed
/// and contain only known keys. The effective config is written to `out`.
fn resolve<T: Serialize + DeserializeOwned>(common: &Common, flags: Map<String, Value>) -> CliResult<T> {
    let mut map = match &common.config {
        None => Map::new(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("--config {}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(usage(format!("--config {}: expected a JSON object", p.display()))),
                Err(e) => return Err(usage(format!("--config {}: {e}", p.display()))),
            }
        }
    };
    merge(&mut map, flags);
    if let Some(s) = common.seed {
        map.insert("seed".into(), s.into());
    }
    if !map.contains_key("seed") {
        return Err(usage("--seed is required (or a \"seed\" key in --config)"));
    }
    let cfg: T = serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("config: {e}")))?;
    fs::create_dir_all(&common.out).map_err(Error::from)?;
    let text = serde_json::to_string_pretty(&cfg).map_err(Error::from)? + "\n";
    fs::write(common.out.join(EFFECTIVE_CONFIG), text).map_err(Error::from)?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(Error::from)? + "\n";
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn gen_corpus(out: &Path, spec: &SyntheticSpec) -> CliResult<()> {
    let mut corpus = generate_synthetic_corpus(spec)?;
    corpus.manifest = split_corpus(corpus.manifest, spec.seed)?;
    corpus.write(out)?;
    println!(
        "wrote {} utterances ({} speakers, {} accents) to {}",
        corpus.manifest.records.len() / 2,
        spec.n_speakers,
        spec.n_accents,
        out.display()
    );
    Ok(())
}

fn extract(out: &Path, cfg: &ExtractConfig) -> CliResult<()> {
    cfg.audio.validate()?;
    let m = load_corpus(&cfg.corpus, &cfg.audio)?;
    let mut vectors = Vec::new();
    let mut domains = Vec::new();
    for d in [Domain::L1, Domain::L2] {
        let v = extract_features(&m, d, &cfg.audio, cfg.jobs)?;
        domains.extend(std::iter::repeat_n(d.to_string(), v.len()));
        vectors.extend(v);
    }
    fs::write(out.join("features.tsv"), features::to_tsv(&vectors, Some(&domains))).map_err(Error::from)?;
    println!("wrote {} feature vectors", vectors.len());
    Ok(())
}

fn scores_tsv(l1: &BTreeMap<String, f64>, l2: &BTreeMap<String, f64>) -> String {
    let mut s = String::from("utterance_id\tscore_L1\tscore_L2\n");
    for (id, s2) in l2 {
        let s1 = l1.get(id).map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(s, "{id}\t{s1}\t{s2:?}");
    }
    s
}

fn train_ranker(out: &Path, cfg: &RankerConfig) -> CliResult<()> {
    cfg.audio.validate()?;
    let m = load_corpus(&cfg.corpus, &cfg.audio)?;
    let o = label_intensity(&m, &cfg.audio, &cfg.label_config())?;
    fs::write(out.join("ranker.json"), o.model.to_json()? + "\n").map_err(Error::from)?;
    fs::write(out.join("scores.tsv"), scores_tsv(&o.l1_scores, &o.l2_scores)).map_err(Error::from)?;
    println!(
        "ranker fitted in {} iterations; L2 > L1 on {:.1}% of pairs",
        o.model.solver_iterations,
        100.0 * o.pair_accuracy()
    );
    Ok(())
}

/// Copy of `m` whose wav paths are absolute, so the manifest can live
/// outside the corpus directory.
fn relocated(m: &CorpusManifest, root: &Path) -> CliResult<CorpusManifest> {
    let mut out = m.clone();
    for r in &mut out.records {
        let p = m.wav_path(r);
        r.wav_path = fs::canonicalize(&p).map_err(|_| Error::MissingAsset(p.clone()))?;
    }
    out.root = root.to_path_buf();
    Ok(out)
}

fn label(out: &Path, cfg: &LabelIntensityConfig) -> CliResult<()> {
    cfg.audio.validate()?;
    let m = load_corpus(&cfg.corpus, &cfg.audio)?;
    let labeled = match &cfg.ranker {
        None => {
            let lc = LabelConfig {
                c: cfg.c,
                random_pairs: cfg.random_pairs,
                seed: cfg.seed,
                jobs: cfg.jobs,
            };
            let o = label_intensity(&m, &cfg.audio, &lc)?;
            fs::write(out.join("ranker.json"), o.model.to_json()? + "\n").map_err(Error::from)?;
            o.manifest
        }
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|_| Error::MissingAsset(path.clone()))?;
            let model = RankModel::from_json(&text)?;
            let l2: Vec<AccentFeatureVector> = extract_features(&m, Domain::L2, &cfg.audio, cfg.jobs)?;
            let labels: BTreeMap<String, f64> = l2
                .iter()
                .map(|f| Ok((f.utterance_id.clone(), model.intensity(f)?)))
                .collect::<Result<_, Error>>()?;
            let mut lm = m.clone();
            for r in &mut lm.records {
                r.intensity = match r.domain {
                    Domain::L2 => labels.get(&r.utterance_id).copied(),
                    Domain::L1 => None,
                };
            }
            lm
        }
    };
    let lm = relocated(&labeled, out)?;
    lm.write(out)?;
    println!("labeled {} L2 utterances", lm.domain(Domain::L2).count());
    Ok(())
}

fn selected(m: &CorpusManifest, split: Option<Split>) -> Vec<&UtteranceRecord> {
    m.domain(Domain::L2)
        .filter(|r| match split {
            Some(s) if !m.splits.is_empty() => m.split_of(&r.utterance_id) == Some(s),
            _ => true,
        })
        .collect()
}

fn check_ids(model: &ModelConfig, records: &[&UtteranceRecord]) -> CliResult<()> {
    for r in records {
        if r.speaker_id as usize >= model.n_speakers || r.accent_id as usize >= model.n_accents {
            return Err(Error::ConfigError(format!(
                "{}: speaker {} / accent {} outside the model tables ({} speakers, {} accents)",
                r.utterance_id, r.speaker_id, r.accent_id, model.n_speakers, model.n_accents
            ))
            .into());
        }
        if let Some(&p) = r.phoneme_ids.iter().find(|&&p| p >= model.n_phonemes) {
            return Err(Error::ConfigError(format!(
                "{}: phoneme id {p} outside the model table ({} phonemes)",
                r.utterance_id, model.n_phonemes
            ))
            .into());
        }
    }
    Ok(())
}

fn train_tts(out: &Path, cfg: &TrainTtsConfig) -> CliResult<()> {
    cfg.audio.validate()?;
    cfg.model.validate()?;
    let m = load_corpus(&cfg.corpus, &cfg.audio)?;
    let mut records = selected(&m, cfg.split);
    if let Some(n) = cfg.max_utterances {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("training utterances").into());
    }
    check_ids(&cfg.model, &records)?;
    let prepared = prepare_records(&m, &records, &cfg.audio, cfg.jobs)?;
    let stats = fit_prosody(&prepared)?;
    let items = prepared
        .iter()
        .map(|p| to_training_item(p, &stats))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut model = CaiTts::new(cfg.model.clone(), cfg.seed)?;
    model.prosody = stats;
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(model, tc)?;
    trainer.fit(&items, |step, l| {
        if step % 50 == 0 || step == 1 {
            log::info!("step {step}: l_final {:.5} (l_cc {:.5})", l.l_final, l.l_cc);
        }
    })?;
    let mut losses = String::from("step\tl_mel\tl_dur\tl_p_pitch\tl_p_energy\tl_cc\tl_final\n");
    for (k, l) in trainer.history.iter().enumerate() {
        let _ = writeln!(
            losses,
            "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            k + 1,
            l.l_mel,
            l.l_dur,
            l.l_p_pitch,
            l.l_p_energy,
            l.l_cc,
            l.l_final
        );
    }
    fs::write(out.join("losses.tsv"), losses).map_err(Error::from)?;
    let step = trainer.step();
    let last = trainer.history.last().copied();
    let model = trainer.into_model();
    save_checkpoint(&out.join("checkpoint.cait"), &model, step)?;
    if let Some(l) = last {
        println!(
            "trained {step} steps on {} utterances; final l_final {:.5}",
            items.len(),
            l.l_final
        );
    }
    Ok(())
}

/// Values `start, start+step, ...` up to `stop` inclusive, all in (0,1).
pub fn parse_sweep(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("--sweep expects start:stop:step, got {s:?}"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("--sweep: bad number {p:?}"))
        })
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start {
        return Err(format!("--sweep {s}: need step > 0 and stop >= start"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let values: Vec<f64> = (0..n)
        .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
        .collect();
    if values.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(format!(
            "--sweep {s}: every intensity must lie in the open interval (0,1)"
        ));
    }
    Ok(values)
}

#[derive(Debug, Serialize)]
struct SynthRecord {
    name: String,
    intensity: f64,
    speaker_id: usize,
    accent_id: usize,
    phonemes: Vec<String>,
    durations: Vec<usize>,
    pitch_hz: Vec<f64>,
    energy: Vec<f64>,
    measured_intensity: f64,
    mel: String,
}

fn mel_tsv(rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    s
}

fn synthesize(out: &Path, cfg: &SynthesizeConfig) -> CliResult<()> {
    let levels = match (cfg.intensity, &cfg.sweep) {
        (Some(_), Some(_)) => return Err(usage("--intensity and --sweep are mutually exclusive")),
        (None, None) => return Err(usage("one of --intensity or --sweep is required")),
        (Some(i), None) => {
            if !(i > 0.0 && i < 1.0) {
                return Err(usage(format!("--intensity {i} must lie in the open interval (0,1)")));
            }
            vec![i]
        }
        (None, Some(s)) => parse_sweep(s).map_err(usage)?,
    };
    let (model, _) = load_checkpoint(&cfg.checkpoint)?;
    let mut jobs: Vec<(String, SynthesisRequest)> = Vec::new();
    match (&cfg.phonemes, &cfg.corpus) {
        (Some(text), None) => {
            let ids = text
                .split_whitespace()
                .map(|p| phoneme_id(p).ok_or_else(|| usage(format!("--phonemes: unknown phoneme {p:?}"))))
                .collect::<CliResult<Vec<_>>>()?;
            jobs.push((
                "text".into(),
                SynthesisRequest {
                    phoneme_ids: ids,
                    speaker_id: cfg.speaker_id,
                    accent_id: cfg.accent_id,
                    intensity: levels[0],
                },
            ));
        }
        (None, Some(dir)) => {
            let m = load_corpus(dir, &AudioConfig::default())?;
            let mut records = selected(&m, cfg.split);
            if let Some(ids) = &cfg.utterances {
                records.retain(|r| ids.contains(&r.utterance_id));
                if let Some(missing) = ids.iter().find(|id| !records.iter().any(|r| &&r.utterance_id == id)) {
                    return Err(usage(format!(
                        "--utterances: {missing} is not an L2 record of the corpus"
                    )));
                }
            }
            for r in records {
                jobs.push((
                    r.utterance_id.clone(),
                    SynthesisRequest {
                        phoneme_ids: r.phoneme_ids.clone(),
                        speaker_id: r.speaker_id as usize,
                        accent_id: r.accent_id as usize,
                        intensity: levels[0],
                    },
                ));
            }
        }
        _ => return Err(usage("give exactly one of --phonemes or --corpus")),
    }
    fs::create_dir_all(out.join("mel")).map_err(Error::from)?;
    let mut summary = Vec::new();
    for (name, base) in &jobs {
        for &i in &levels {
            let req = SynthesisRequest {
                intensity: i,
                ..base.clone()
            };
            let s = model.synthesize(&req)?;
            let measured = model.measure_intensity(&s.mel)?;
            let file = format!("mel/{name}_i{i:.2}.tsv");
            fs::write(out.join(&file), mel_tsv(&s.mel.to_rows())).map_err(Error::from)?;
            summary.push(SynthRecord {
                name: name.clone(),
                intensity: i,
                speaker_id: req.speaker_id,
                accent_id: req.accent_id,
                phonemes: req.phoneme_ids.iter().map(|&p| PHONEMES[p].to_string()).collect(),
                durations: s.durations,
                pitch_hz: s.pitch_hz,
                energy: s.energy,
                measured_intensity: measured,
                mel: file,
            });
        }
    }
    write_json(&out.join("synthesis.json"), &summary)?;
    println!("synthesized {} mel spectrograms", summary.len());
    Ok(())
}

fn frame_values(phoneme_values: &[f64], durations: &[usize]) -> Vec<f64> {
    expand_durations(durations)
        .into_iter()
        .map(|p| phoneme_values[p])
        .collect()
}

/// Metrics of `model` on the labeled L2 records of `m` selected by
/// `split`, plus the sweep confusion of intended versus measured intensity.
pub fn evaluate_model(
    model: &CaiTts,
    m: &CorpusManifest,
    split: Option<Split>,
    audio: &AudioConfig,
    jobs: usize,
) -> Result<(EvalReport, Vec<(f64, f64)>), Error> {
    let records: Vec<&UtteranceRecord> = selected(m, split)
        .into_iter()
        .filter(|r| r.intensity.is_some())
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyInput("labeled evaluation utterances"));
    }
    let prepared = prepare_records(m, &records, audio, jobs)?;
    let mut items = Vec::with_capacity(prepared.len());
    let mut pairs = Vec::new();
    for p in &prepared {
        let r = &p.record;
        let req = SynthesisRequest {
            phoneme_ids: r.phoneme_ids.clone(),
            speaker_id: r.speaker_id as usize,
            accent_id: r.accent_id as usize,
            intensity: r.intensity.expect("filtered"),
        };
        let s = model.synthesize(&req)?;
        items.push(EvalItem {
            mel_pred: s.mel.to_rows(),
            mel_ref: p.mel.clone(),
            pitch_pred: frame_values(&s.pitch_hz, &s.durations),
            pitch_ref: p.pitch_frames.clone(),
            energy_pred: frame_values(&s.energy, &s.durations),
            energy_ref: p.energy_frames.clone(),
            durations_pred: s.durations,
            durations_ref: r.durations.clone(),
        });
        for &level in &FINE_LEVELS {
            let s = model.synthesize(&SynthesisRequest {
                intensity: level,
                ..req.clone()
            })?;
            pairs.push((level, model.measure_intensity(&s.mel)?));
        }
    }
    let report = evaluate(&items, audio.frame_shift, &pairs)?;
    Ok((report, pairs))
}

fn run_evaluate(out: &Path, cfg: &EvaluateConfig) -> CliResult<()> {
    cfg.audio.validate()?;
    let (model, _) = load_checkpoint(&cfg.checkpoint)?;
    let m = load_corpus(&cfg.corpus, &cfg.audio)?;
    let (report, pairs) = evaluate_model(&model, &m, cfg.split, &cfg.audio, cfg.jobs)?;
    write_json(&out.join("report.json"), &report)?;
    let mut s = String::from("intended\tmeasured\n");
    for (a, b) in &pairs {
        let _ = writeln!(s, "{a:?}\t{b:?}");
    }
    fs::write(out.join("intensity_pairs.tsv"), s).map_err(Error::from)?;
    println!(
        "{} utterances: MCD {:.3} dB, pitch DTW {:.3} Hz, energy MAE {:.4}, duration delta {:.2} ms",
        report.utterances, report.mcd_db, report.pitch_dtw, report.energy_mae, report.duration_delta_ms
    );
    if let Some(c) = &report.intensity {
        println!(
            "intensity confusion diagonal mass: coarse {:.3}, fine {:.3}",
            c.coarse.diagonal_mass(),
            c.fine.diagonal_mass()
        );
    }
    Ok(())
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|_| Error::MissingAsset(path.to_path_buf()).into())
}

fn plot(out: &Path, cfg: &PlotConfig) -> CliResult<()> {
    let parse_err = |line: usize, msg: String| Error::ParseError {
        path: cfg.input.clone(),
        line,
        msg,
    };
    match cfg.kind {
        PlotKind::Loss => {
            let text = read_input(&cfg.input)?;
            let mut lines = text.lines();
            let header: Vec<String> = lines
                .next()
                .ok_or_else(|| parse_err(1, "empty file".into()))?
                .split('\t')
                .skip(1)
                .map(str::to_string)
                .collect();
            let mut series: Vec<(String, Vec<f64>)> = header.into_iter().map(|h| (h, Vec::new())).collect();
            for (k, line) in lines.enumerate() {
                let cells: Vec<&str> = line.split('\t').skip(1).collect();
                if cells.len() != series.len() {
                    return Err(parse_err(k + 2, format!("expected {} values", series.len())).into());
                }
                for (sr, c) in series.iter_mut().zip(cells) {
                    let v: f64 = c.parse().map_err(|_| parse_err(k + 2, format!("bad number {c:?}")))?;
                    sr.1.push(v.max(f64::MIN_POSITIVE).log10());
                }
            }
            fs::write(
                out.join("loss.svg"),
                line_chart("training losses (log10)", "step", &series),
            )
            .map_err(Error::from)?;
        }
        PlotKind::Confusion => {
            let report: EvalReport = serde_json::from_str(&read_input(&cfg.input)?).map_err(Error::from)?;
            let c = report
                .intensity
                .ok_or_else(|| Error::InsufficientData("report has no intensity confusion".into()))?;
            fs::write(
                out.join("confusion_coarse.svg"),
                confusion_heatmap("intended vs measured (bands)", &c.coarse),
            )
            .map_err(Error::from)?;
            fs::write(
                out.join("confusion_fine.svg"),
                confusion_heatmap("intended vs measured (levels)", &c.fine),
            )
            .map_err(Error::from)?;
        }
        PlotKind::Pitch => {
            let series = if cfg.input.extension().is_some_and(|e| e == "wav") {
                let w = read_wav(&cfg.input)?.to_rate(cfg.audio.sample_rate)?;
                let t = prosody_track(&w, &cfg.audio)?;
                let name = cfg
                    .input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                vec![(
                    name,
                    t.pitch_hz.iter().map(|&p| if p > 0.0 { p } else { f64::NAN }).collect(),
                )]
            } else {
                let v: Vec<Value> = serde_json::from_str(&read_input(&cfg.input)?).map_err(Error::from)?;
                let mut series = Vec::new();
                for (k, e) in v.iter().enumerate() {
                    let rec: PitchRecord =
                        serde_json::from_value(e.clone()).map_err(|err| parse_err(k + 1, err.to_string()))?;
                    let label = format!("{} @ {:.2}", rec.name, rec.intensity);
                    series.push((label, frame_values(&rec.pitch_hz, &rec.durations)));
                }
                series
            };
            fs::write(
                out.join("pitch.svg"),
                line_chart("pitch contour (Hz)", "frame", &series),
            )
            .map_err(Error::from)?;
        }
    }
    println!("wrote {:?} plot to {}", cfg.kind, out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PitchRecord {
    name: String,
    intensity: f64,
    durations: Vec<usize>,
    pitch_hz: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct GradCheckEntry {
    target: String,
    max_rel_error: f64,
    checked: usize,
    kinks: usize,
}

fn grad_check(out: &Path, cfg: &GradCheckConfig) -> CliResult<()> {
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(usage(format!("--eps {} must be positive", cfg.eps)));
    }
    let mut entries: Vec<GradCheckEntry> = check_layers(cfg.seed, cfg.eps)?
        .into_iter()
        .map(|c| GradCheckEntry {
            target: format!("layer {}", c.layer),
            max_rel_error: c.max_rel_error,
            checked: c.checked,
            kinks: c.kinks,
        })
        .collect();
    entries.extend(
        gradcheck::check_full_loss(cfg.seed, cfg.eps)?
            .into_iter()
            .map(|c| GradCheckEntry {
                target: format!("loss {}", c.name),
                max_rel_error: c.max_rel_error,
                checked: c.checked,
                kinks: c.kinks,
            }),
    );
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let checked: usize = entries.iter().map(|e| e.checked).sum();
    let kinks: usize = entries.iter().map(|e| e.kinks).sum();
    write_json(&out.join("grad_check.json"), &entries)?;
    println!("checked {checked} components ({kinks} skipped at non-differentiable points)");
    println!("max relative error: {worst:.3e}");
    if worst < GRAD_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::CheckFailed(worst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        let v = parse_sweep("0.1:0.9:0.1").unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[2], 0.3);
        assert_eq!(v[8], 0.9);
        assert!(parse_sweep("0.0:0.5:0.1").is_err());
        assert!(parse_sweep("0.1:0.9").is_err());
        assert!(parse_sweep("0.5:0.1:0.1").is_err());
    }

    #[test]
    fn config_merge_is_deep() {
        let mut a: Map<String, Value> =
            serde_json::from_str(r#"{"train": {"steps": 3, "batch_size": 2}, "seed": 1}"#).unwrap();
        let b: Map<String, Value> = serde_json::from_str(r#"{"train": {"steps": 5}}"#).unwrap();
        merge(&mut a, b);
        assert_eq!(a["train"]["steps"], 5);
        assert_eq!(a["train"]["batch_size"], 2);
    }

    #[test]
    fn usage_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["caitts", "gen-corpus", "--out", out]), 2);
        assert_eq!(
            run([
                "caitts",
                "synthesize",
                "--out",
                out,
                "--seed",
                "1",
                "--intensity",
                "1.5"
            ]),
            2
        );
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"seed": 1, "bogus": 3}"#).unwrap();
        assert_eq!(
            run(["caitts", "grad-check", "--out", out, "--config", cfg.to_str().unwrap()]),
            2
        );
        assert_eq!(run(["caitts", "no-such-command"]), 2);
    }
}
