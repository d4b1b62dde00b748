//! Stage-by-stage orchestration of the offline pipeline on disk:
//! prepare, train-vq, encode, train-decision, generate, evaluate, render and
//! report. Every stage reads its inputs from and writes its artifacts to the
//! output tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{build_corpus, render, select_segments, ActionError, Choice};
use crate::audio::{
    load_wav, ms_to_samples, resample, write_wav, AudioBuffer, AudioError, DEFAULT_CROSSFADE_MS,
};
use crate::dataset::{
    scan_multistem, split, synth_paired, window_pairs, DatasetError, Manifest, SynthConfig,
    TrackIndex, WindowPair, WINDOW_SECS,
};
use crate::decision::{
    train, write_loss_csv, DecisionError, DecisionModel, GenerationConfig, Hyperparams,
    TrainConfig, TrainReport, TrainingPair,
};
use crate::eval::{
    config_name, generate_predictions, score_predictions, write_reports, ConfigMeta, EvalError,
    EvalReport, ItemPredictions, Mode, RegenItem,
};
use crate::perception::{
    encode_segments, fit_codebook, perceive, Codebook, EncoderConfig, FeatureEncoder,
    PerceptionError, TokenSequence,
};

pub const CODEBOOK_FILE: &str = "codebook.stlk";
pub const MODEL_FILE: &str = "model.stlm";
pub const CORPUS_FILE: &str = "corpus.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {what}: {path} (run `{stage}` first)")]
    Missing {
        what: &'static str,
        path: String,
        stage: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn require(path: PathBuf, what: &'static str, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::Missing {
            what,
            path: path.display().to_string(),
            stage,
        })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated paired stems with a known symbol mapping.
    Synth {
        name: String,
        k_true: usize,
        n_tracks: usize,
        track_secs: f64,
        noise: f64,
    },
    /// `<root>/<track>/<stem>.wav`.
    Directory {
        name: String,
        root: PathBuf,
        exclusions: Vec<String>,
    },
}

impl DatasetSource {
    pub fn name(&self) -> &str {
        match self {
            DatasetSource::Synth { name, .. } | DatasetSource::Directory { name, .. } => name,
        }
    }
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synth {
            name: "synth".into(),
            k_true: 8,
            n_tracks: 40,
            track_secs: 60.0,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetSource,
    pub split: [f64; 3],
    pub segment_ms: Vec<u32>,
    pub alphabet: Vec<usize>,
    pub encoder: EncoderConfig,
    pub model: Hyperparams,
    pub train: TrainConfig,
    pub top_p: f64,
    /// Render constrained predictions instead of unconstrained ones.
    pub constrained: bool,
    /// Peak level every stem is normalized to before analysis.
    pub peak_dbfs: f64,
    pub crossfade_ms: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            split: [0.8, 0.1, 0.1],
            segment_ms: vec![250],
            alphabet: vec![16],
            encoder: EncoderConfig::default(),
            model: Hyperparams::desk(),
            train: TrainConfig::default(),
            top_p: 0.8,
            constrained: false,
            peak_dbfs: -3.0,
            crossfade_ms: DEFAULT_CROSSFADE_MS,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

/// One `(segment duration, alphabet size)` cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridPoint {
    pub segment_ms: u32,
    pub k: usize,
}

impl GridPoint {
    pub fn name(&self) -> String {
        config_name(self.segment_ms, self.k)
    }
}

/// Windows of one split encoded under one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub id: String,
    pub track_id: String,
    pub start_s: f64,
    pub stem_a: PathBuf,
    pub stem_b: PathBuf,
    pub guide: TokenSequence,
    pub response: TokenSequence,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_ms.is_empty() || self.alphabet.is_empty() {
            return Err(PipelineError::Config(
                "segment_ms and alphabet grids must be non-empty".into(),
            ));
        }
        if self.segment_ms.contains(&0) || self.alphabet.iter().any(|&k| k < 2) {
            return Err(PipelineError::Config(
                "segment durations must be positive and alphabets >= 2".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PipelineError::Config(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        FeatureEncoder::new(self.encoder.clone())?;
        Ok(())
    }

    /// Hex SHA-256 (first 16 bytes) of the configuration, output path excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes())[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &segment_ms in &self.segment_ms {
            for &k in &self.alphabet {
                out.push(GridPoint { segment_ms, k });
            }
        }
        out
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join(self.dataset.name())
    }

    pub fn config_dir(&self, gp: GridPoint) -> PathBuf {
        self.dataset_dir().join(gp.name())
    }

    fn encoder(&self) -> Result<FeatureEncoder> {
        Ok(FeatureEncoder::new(self.encoder.clone())?)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Loads a stem at the encoder rate, peak-normalized.
    pub fn load_stem(&self, path: &Path) -> Result<AudioBuffer> {
        let buf = load_wav(path)?;
        let buf = if buf.sample_rate() == self.encoder.sample_rate {
            buf
        } else {
            resample(&buf, self.encoder.sample_rate)?
        };
        Ok(buf.peak_normalized(self.peak_dbfs))
    }

    fn record(&self, dir: &Path, stage: &str) -> Result<()> {
        let path = dir.join(PROVENANCE_FILE);
        let mut stages: BTreeMap<String, String> = if path.exists() {
            read_json(&path)?
        } else {
            BTreeMap::new()
        };
        stages.insert(stage.to_string(), self.hash());
        write_json(&path, &stages)
    }

    fn manifest(&self) -> Result<Manifest> {
        let path = require(
            self.dataset_dir().join(MANIFEST_FILE),
            "dataset manifest",
            "prepare",
        )?;
        Ok(Manifest::load(path)?)
    }

    fn split_index<'a>(&self, m: &'a Manifest, name: &str) -> &'a TrackIndex {
        match name {
            "train" => &m.splits.train,
            "val" => &m.splits.val,
            _ => &m.splits.test,
        }
    }

    fn codebook(&self, gp: GridPoint) -> Result<Codebook> {
        let path = require(
            self.config_dir(gp).join(CODEBOOK_FILE),
            "codebook",
            "train-vq",
        )?;
        Ok(Codebook::load(path)?)
    }

    fn model_checkpoint(&self, gp: GridPoint) -> Result<DecisionModel<f32>> {
        let path = require(
            self.config_dir(gp).join(MODEL_FILE),
            "model checkpoint",
            "train-decision",
        )?;
        Ok(DecisionModel::load(path)?)
    }

    fn tokens(&self, gp: GridPoint, split: &str) -> Result<Vec<EncodedPair>> {
        let path = require(
            self.config_dir(gp).join(format!("tokens_{split}.json")),
            "encoded tokens",
            "encode",
        )?;
        read_json(&path)
    }
}

/// Builds or scans the dataset and writes the split manifest.
pub fn prepare(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.dataset_dir();
    create_dir(&dir)?;
    let (index, synth) = match &cfg.dataset {
        DatasetSource::Synth {
            k_true,
            n_tracks,
            track_secs,
            noise,
            ..
        } => {
            let seg = cfg.segment_ms[0];
            let mut sc = SynthConfig::new(*k_true, *n_tracks, *track_secs, seg, cfg.seed);
            sc.noise = *noise;
            sc.sample_rate = cfg.encoder.sample_rate;
            let data = dir.join("data");
            (synth_paired(&sc, &data)?, Some(sc))
        }
        DatasetSource::Directory {
            root, exclusions, ..
        } => (scan_multistem(root, exclusions)?.0, None),
    };
    let manifest = Manifest {
        name: cfg.dataset.name().to_string(),
        root: dir.clone(),
        seed: cfg.seed,
        splits: split(&index, cfg.split, cfg.seed)?,
        synth,
    };
    manifest.save(dir.join(MANIFEST_FILE))?;
    cfg.record(&dir, "prepare")?;
    Ok(manifest)
}

/// Fits the codebook of one grid point on the condensed vectors of every
/// training stem. Also writes the k-means inertia trace.
pub fn train_vq(cfg: &PipelineConfig, gp: GridPoint) -> Result<Codebook> {
    let manifest = cfg.manifest()?;
    let enc = cfg.encoder()?;
    let stems: Vec<PathBuf> = manifest
        .splits
        .train
        .tracks
        .iter()
        .flat_map(|t| t.stems.iter().map(|s| s.path.clone()))
        .collect();
    let per_stem: Vec<Result<Vec<Vec<f32>>>> = stems
        .par_iter()
        .map(|p| {
            let buf = cfg.load_stem(p)?;
            Ok(encode_segments(&enc, &buf, gp.segment_ms)?.1.vectors)
        })
        .collect();
    let mut vectors = Vec::new();
    for v in per_stem {
        vectors.extend(v?);
    }
    let (cb, fit) = fit_codebook(
        &vectors,
        gp.k,
        cfg.seed,
        &enc.config().encoder_id(),
        gp.segment_ms,
    )?;
    let dir = cfg.config_dir(gp);
    create_dir(&dir.join("reports"))?;
    cb.save(dir.join(CODEBOOK_FILE))?;
    let mut trace = String::from("iteration,inertia\n");
    for (i, v) in fit.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{v}");
    }
    let trace_path = dir.join("reports").join("kmeans_trace.csv");
    std::fs::write(&trace_path, trace).map_err(io_err(&trace_path))?;
    cfg.record(&dir, "train-vq")?;
    Ok(cb)
}

fn split_seed(seed: u64, split: &str) -> u64 {
    let offset = SPLITS.iter().position(|s| *s == split).unwrap_or(0) as u64 + 1;
    seed.wrapping_mul(31).wrapping_add(offset)
}

/// Draws the stem pairs of every window of every split and tokenizes them.
pub fn encode(cfg: &PipelineConfig, gp: GridPoint) -> Result<BTreeMap<String, usize>> {
    let manifest = cfg.manifest()?;
    let cb = cfg.codebook(gp)?;
    let enc = cfg.encoder()?;
    let dir = cfg.config_dir(gp);
    let rate = cfg.encoder.sample_rate;
    let window = ms_to_samples(WINDOW_SECS * 1000.0, rate);
    let mut counts = BTreeMap::new();
    for split_name in SPLITS {
        let pairs = window_pairs(
            cfg.split_index(&manifest, split_name),
            split_seed(cfg.seed, split_name),
        )?;
        let mut by_track: Vec<Vec<WindowPair>> = Vec::new();
        for p in pairs {
            match by_track.last_mut() {
                Some(group) if group[0].track_id == p.track_id => group.push(p),
                _ => by_track.push(vec![p]),
            }
        }
        let encoded: Vec<Result<Vec<EncodedPair>>> = by_track
            .par_iter()
            .map(|group| {
                let mut cache: BTreeMap<PathBuf, AudioBuffer> = BTreeMap::new();
                let mut out = Vec::with_capacity(group.len());
                for p in group {
                    for path in [&p.stem_a, &p.stem_b] {
                        if !cache.contains_key(path) {
                            cache.insert(path.clone(), cfg.load_stem(path)?);
                        }
                    }
                    let start = (p.start_s * rate as f64).round() as usize;
                    let a = cache[&p.stem_a].slice_padded(start, window);
                    let b = cache[&p.stem_b].slice_padded(start, window);
                    out.push(EncodedPair {
                        id: format!("{}@{}", p.track_id, p.start_s),
                        track_id: p.track_id.clone(),
                        start_s: p.start_s,
                        stem_a: p.stem_a.clone(),
                        stem_b: p.stem_b.clone(),
                        guide: perceive(&enc, &a, &cb)?,
                        response: perceive(&enc, &b, &cb)?,
                    });
                }
                Ok(out)
            })
            .collect();
        let mut all = Vec::new();
        for e in encoded {
            all.extend(e?);
        }
        counts.insert(split_name.to_string(), all.len());
        write_json(&dir.join(format!("tokens_{split_name}.json")), &all)?;
    }
    cfg.record(&dir, "encode")?;
    Ok(counts)
}

fn training_pairs(pairs: &[EncodedPair]) -> Vec<TrainingPair> {
    pairs
        .iter()
        .map(|p| TrainingPair {
            guide: p.guide.clone(),
            response: p.response.clone(),
        })
        .collect()
}

/// Trains the decision model on the encoded training windows.
pub fn train_decision(cfg: &PipelineConfig, gp: GridPoint) -> Result<TrainReport> {
    let train_set = training_pairs(&cfg.tokens(gp, "train")?);
    let val_set = training_pairs(&cfg.tokens(gp, "val")?);
    let mut model = DecisionModel::<f32>::init(gp.k, cfg.model, cfg.seed)?;
    let report = train(&mut model, &train_set, &val_set, &cfg.train_config())?;
    let dir = cfg.config_dir(gp);
    create_dir(&dir.join("reports"))?;
    model.save(dir.join(MODEL_FILE))?;
    write_loss_csv(dir.join("reports").join("loss.csv"), &report.curve)?;
    cfg.record(&dir, "train-decision")?;
    Ok(report)
}

fn regen_items(pairs: &[EncodedPair]) -> Vec<RegenItem> {
    pairs
        .iter()
        .map(|p| RegenItem {
            id: p.id.clone(),
            guide: p.guide.clone(),
            target: p.response.clone(),
        })
        .collect()
}

/// Generates model and random responses for every test window.
pub fn generate(cfg: &PipelineConfig, gp: GridPoint) -> Result<Vec<ItemPredictions>> {
    let model = cfg.model_checkpoint(gp)?;
    let items = regen_items(&cfg.tokens(gp, "test")?);
    let preds = generate_predictions(&model, &items, cfg.top_p, cfg.seed)?;
    let dir = cfg.config_dir(gp);
    write_json(&dir.join(PREDICTIONS_FILE), &preds)?;
    cfg.record(&dir, "generate")?;
    Ok(preds)
}

fn meta(cfg: &PipelineConfig, gp: GridPoint) -> ConfigMeta {
    ConfigMeta {
        segment_ms: gp.segment_ms,
        k: gp.k,
        top_p: cfg.top_p,
        constrained: cfg.constrained,
    }
}

/// Scores the test predictions and writes the report CSVs of one grid point.
/// Generates the predictions first when they are missing.
pub fn evaluate(cfg: &PipelineConfig, gp: GridPoint) -> Result<EvalReport> {
    let dir = cfg.config_dir(gp);
    require(dir.join(MODEL_FILE), "model checkpoint", "train-decision")?;
    let pred_path = dir.join(PREDICTIONS_FILE);
    let preds = if pred_path.exists() {
        read_json(&pred_path)?
    } else {
        generate(cfg, gp)?
    };
    let report = score_predictions(meta(cfg, gp), &preds)?;
    write_reports(dir.join("reports"), std::slice::from_ref(&report))?;
    cfg.record(&dir, "evaluate")?;
    Ok(report)
}

/// Generates a response to `guide` and renders it from `corpus_audio`.
/// Without explicit files, the first test pair's stems are used. Returns the
/// written WAV path.
pub fn render_audio(
    cfg: &PipelineConfig,
    gp: GridPoint,
    guide: Option<&Path>,
    corpus_audio: Option<&Path>,
) -> Result<PathBuf> {
    let (guide_path, corpus_path) = match (guide, corpus_audio) {
        (Some(g), Some(c)) => (g.to_path_buf(), c.to_path_buf()),
        _ => {
            let first = cfg
                .tokens(gp, "test")?
                .into_iter()
                .next()
                .ok_or_else(|| PipelineError::Config("test split has no windows".into()))?;
            (
                guide.map_or(first.stem_a, Path::to_path_buf),
                corpus_audio.map_or(first.stem_b, Path::to_path_buf),
            )
        }
    };
    let cb = cfg.codebook(gp)?;
    let model = cfg.model_checkpoint(gp)?;
    let enc = cfg.encoder()?;
    let guide_buf = cfg.load_stem(&guide_path)?;
    let corpus_buf = cfg.load_stem(&corpus_path)?;
    let guide_tokens = perceive(&enc, &guide_buf, &cb)?;
    let mut corpus = build_corpus(&enc, &corpus_buf, &cb, &corpus_path.display().to_string())?;
    corpus.peak_dbfs = Some(cfg.peak_dbfs);
    let labels: BTreeSet<usize> = corpus.label_set();

    // long guides are generated chunk by chunk
    let chunk = (model.hyperparams().max_len - 2) / 2;
    let mut spec = Vec::with_capacity(guide_tokens.len());
    for (i, part) in guide_tokens.ids().chunks(chunk.max(1)).enumerate() {
        let mut gen = GenerationConfig::new(cfg.top_p, cfg.seed.wrapping_add(i as u64));
        if cfg.constrained {
            gen = gen.constrained_to(labels.clone());
        }
        let piece = model.generate(&TokenSequence::new(part.to_vec(), gp.k)?, &gen)?;
        spec.extend(piece.into_ids());
    }
    let spec = TokenSequence::new(spec, gp.k)?;
    let selection = select_segments(&corpus, &spec, cfg.seed)?;
    let audio = render(&corpus_buf, &corpus, &selection, cfg.crossfade_ms)?;

    let dir = cfg.config_dir(gp);
    let audio_dir = dir.join("audio");
    create_dir(&audio_dir)?;
    corpus.save(dir.join(CORPUS_FILE))?;
    let stem = guide_path
        .file_stem()
        .map_or_else(|| "guide".to_string(), |s| s.to_string_lossy().into_owned());
    let track = guide_path
        .parent()
        .and_then(Path::file_name)
        .map_or_else(String::new, |s| format!("{}_", s.to_string_lossy()));
    let wav = audio_dir.join(format!("{track}{stem}.wav"));
    let clipped = write_wav(&audio, &wav)?;
    if clipped > 0 {
        log::warn!("{clipped} samples clipped while writing {}", wav.display());
    }
    let silent = selection.iter().filter(|c| **c == Choice::Silence).count();
    log::info!(
        "rendered {} segments ({silent} silent) to {}",
        selection.len(),
        wav.display()
    );
    cfg.record(&dir, "render")?;
    Ok(wav)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config: String,
    pub mode: Mode,
    pub mean_tpp: f64,
    pub mean_entropy_bits: f64,
}

/// Gathers every evaluated grid point into dataset-level CSVs plus a summary.
pub fn report(cfg: &PipelineConfig) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for gp in cfg.grid() {
        let path = cfg.config_dir(gp).join(PREDICTIONS_FILE);
        if !path.exists() {
            continue;
        }
        let preds: Vec<ItemPredictions> = read_json(&path)?;
        reports.push(score_predictions(meta(cfg, gp), &preds)?);
    }
    if reports.is_empty() {
        return Err(PipelineError::Missing {
            what: "predictions for any grid point",
            path: cfg.dataset_dir().display().to_string(),
            stage: "generate",
        });
    }
    let dir = cfg.dataset_dir().join("reports");
    create_dir(&dir)?;
    write_reports(&dir, &reports)?;
    let mut summary = String::from("config,mode,mean_tpp,mean_entropy_bits\n");
    for r in &reports {
        for mode in Mode::ALL {
            let n = r.items.len() as f64;
            let idx = Mode::ALL.iter().position(|m| *m == mode).unwrap_or(0);
            let ent = r.items.iter().map(|i| i.entropy[idx].bits).sum::<f64>() / n;
            let _ = writeln!(
                summary,
                "{},{},{},{}",
                r.meta.name(),
                mode.as_str(),
                r.mean_tpp(mode),
                ent
            );
        }
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, summary).map_err(io_err(&path))?;
    cfg.record(&cfg.dataset_dir(), "report")?;
    Ok(reports)
}

/// `prepare` followed by every per-grid-point stage and `report`.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<EvalReport>> {
    prepare(cfg)?;
    for gp in cfg.grid() {
        train_vq(cfg, gp)?;
        encode(cfg, gp)?;
        train_decision(cfg, gp)?;
        generate(cfg, gp)?;
        evaluate(cfg, gp)?;
    }
    report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> PipelineConfig {
        PipelineConfig {
            dataset: DatasetSource::Synth {
                name: "mini".into(),
                k_true: 4,
                n_tracks: 3,
                track_secs: 16.0,
                noise: 0.01,
            },
            segment_ms: vec![500],
            alphabet: vec![4],
            model: Hyperparams {
                n_layers: 1,
                d_model: 16,
                n_heads: 2,
                d_ff: 16,
                dropout: 0.0,
                max_len: 128,
            },
            train: TrainConfig {
                max_epochs: 2,
                ..TrainConfig::default()
            },
            out: out.to_path_buf(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn hash_ignores_output_path() {
        let a = small(Path::new("x"));
        let b = small(Path::new("y"));
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig {
            seed: 1,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 32);
    }

    #[test]
    fn grid_naming() {
        let cfg = PipelineConfig {
            segment_ms: vec![250, 350, 500],
            alphabet: vec![16, 64, 256],
            ..PipelineConfig::default()
        };
        let names: Vec<String> = cfg.grid().iter().map(GridPoint::name).collect();
        assert_eq!(names.len(), 9);
        assert_eq!(names[0], "0.25s_A16");
        assert_eq!(names[4], "0.35s_A64");
        assert_eq!(names[8], "0.5s_A256");
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 5, "alphabet": [64]}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.alphabet, vec![64]);
        assert_eq!(cfg.segment_ms, vec![250]);
        assert!(cfg.validate().is_ok());
        let bad = PipelineConfig { top_p: 0.0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stages_report_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let gp = cfg.grid()[0];
        let err = train_vq(&cfg, gp).unwrap_err().to_string();
        assert!(err.contains("manifest.json"), "{err}");
        prepare(&cfg).unwrap();
        let err = evaluate(&cfg, gp).unwrap_err().to_string();
        assert!(
            err.contains("model.stlm") && err.contains("train-decision"),
            "{err}"
        );
    }

    #[test]
    fn tiny_chain_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let reports = run_all(&cfg).unwrap();
        assert_eq!(reports.len(), 1);
        let cdir = cfg.config_dir(cfg.grid()[0]);
        for f in [
            "codebook.stlk",
            "model.stlm",
            "reports/tpp.csv",
            "reports/loss.csv",
            "provenance.json",
        ] {
            assert!(cdir.join(f).exists(), "{f}");
        }
        let wav = render_audio(&cfg, cfg.grid()[0], None, None).unwrap();
        assert!(wav.exists());
        assert!(cdir.join(CORPUS_FILE).exists());
    }
}
