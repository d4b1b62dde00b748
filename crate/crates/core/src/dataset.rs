//! Multi-stem dataset handling: scanning, track-level splits, 15 s windows,
//! random stem pairs, and a synthetic paired-stem generator with a known
//! symbol-level relationship.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{ms_to_samples, write_wav, AudioBuffer, AudioError};

pub const WINDOW_SECS: f64 = 15.0;
pub const STRIDE_SECS: f64 = 10.0;
/// Shortest tail, in seconds, that still earns a final end-anchored window.
pub const MIN_TAIL_SECS: f64 = 7.5;
pub const DEFAULT_EXCLUSIONS: [&str; 4] = ["drum", "perc", "fx", "effect"];
pub const EDGE_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no usable tracks under {0}")]
    NoTracks(String),
    #[error("{parts} split parts need at least as many tracks, got {tracks}")]
    TooFewTracks { tracks: usize, parts: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynth(String),
    #[error("cannot read WAV header of {path}: {source}")]
    Wav { path: String, source: hound::Error },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stem {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub id: String,
    pub stems: Vec<Stem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackIndex {
    pub tracks: Vec<Track>,
    pub exclusions: Vec<String>,
}

impl TrackIndex {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    fn subset(&self, tracks: Vec<Track>) -> TrackIndex {
        TrackIndex {
            tracks,
            exclusions: self.exclusions.clone(),
        }
    }
}

fn excluded(name: &str, exclusions: &[String]) -> bool {
    let lower = name.to_lowercase();
    exclusions.iter().any(|p| lower.contains(&p.to_lowercase()))
}

/// Indexes `<root>/<track>/<stem>.wav`, dropping excluded stems and tracks
/// left with fewer than two stems. Returns the index and the number of
/// dropped tracks.
pub fn scan_multistem(
    root: impl AsRef<Path>,
    exclusions: &[String],
) -> Result<(TrackIndex, usize), DatasetError> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut tracks = Vec::new();
    let mut dropped = 0;
    for dir in dirs {
        let mut stems: Vec<Stem> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .filter_map(|p| {
                let name = p.file_stem()?.to_string_lossy().into_owned();
                (!excluded(&name, exclusions)).then_some(Stem { name, path: p })
            })
            .collect();
        stems.sort_by(|a, b| a.name.cmp(&b.name));
        if stems.len() < 2 {
            dropped += 1;
            continue;
        }
        let id = dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        tracks.push(Track { id, stems });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} track(s) with fewer than two usable stems");
    }
    if tracks.is_empty() {
        return Err(DatasetError::NoTracks(root.display().to_string()));
    }
    Ok((
        TrackIndex {
            tracks,
            exclusions: exclusions.to_vec(),
        },
        dropped,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: TrackIndex,
    pub val: TrackIndex,
    pub test: TrackIndex,
}

/// Seeded track-level split. Validation and test sizes are rounded down
/// (but kept at one track when their ratio is positive); train takes the rest.
pub fn split(idx: &TrackIndex, ratios: [f64; 3], seed: u64) -> Result<Splits, DatasetError> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let parts = ratios.iter().filter(|r| **r > 0.0).count();
    let n = idx.len();
    if n < parts {
        return Err(DatasetError::TooFewTracks { tracks: n, parts });
    }
    let size = |r: f64| {
        let s = (n as f64 * r + 1e-9).floor() as usize;
        if r > 0.0 {
            s.max(1)
        } else {
            s
        }
    };
    let (n_val, n_test) = (size(ratios[1]), size(ratios[2]));
    let n_train = n - n_val - n_test;
    if ratios[0] > 0.0 && n_train == 0 {
        return Err(DatasetError::TooFewTracks { tracks: n, parts });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| {
        let mut ids: Vec<usize> = order[range].to_vec();
        ids.sort_unstable();
        idx.subset(ids.into_iter().map(|i| idx.tracks[i].clone()).collect())
    };
    Ok(Splits {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
    })
}

/// Window start offsets (in samples) over a track of `len` samples.
pub fn window_starts(len: usize, rate: u32) -> Vec<usize> {
    let window = ms_to_samples(WINDOW_SECS * 1000.0, rate);
    let stride = ms_to_samples(STRIDE_SECS * 1000.0, rate);
    let min_tail = ms_to_samples(MIN_TAIL_SECS * 1000.0, rate);
    if len < window {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|s| s + window <= len)
        .collect();
    let next = starts.last().map_or(0, |s| s + stride);
    if len > next && len - next >= min_tail && len - window > *starts.last().unwrap_or(&0) {
        starts.push(len - window);
    }
    starts
}

/// One training or evaluation example: a 15 s window of an ordered stem pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    pub track_id: String,
    pub start_s: f64,
    pub stem_a: PathBuf,
    pub stem_b: PathBuf,
}

fn wav_length_secs(path: &Path) -> Result<f64, DatasetError> {
    let reader = hound::WavReader::open(path).map_err(|source| DatasetError::Wav {
        path: path.display().to_string(),
        source,
    })?;
    Ok(reader.duration() as f64 / reader.spec().sample_rate as f64)
}

/// Ordered pairs `(A, B)`, `A != B`, drawn uniformly for every window of
/// every track. Windows cover the shortest stem of each track.
pub fn window_pairs(idx: &TrackIndex, seed: u64) -> Result<Vec<WindowPair>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for track in &idx.tracks {
        let n = track.stems.len();
        if n < 2 {
            continue;
        }
        let mut secs = f64::INFINITY;
        for s in &track.stems {
            secs = secs.min(wav_length_secs(&s.path)?);
        }
        // millisecond grid keeps starts exact in decimal
        let len_ms = (secs * 1000.0).floor() as usize;
        for start in window_starts(len_ms, 1000) {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            out.push(WindowPair {
                track_id: track.id.clone(),
                start_s: start as f64 / 1000.0,
                stem_a: track.stems[a].path.clone(),
                stem_b: track.stems[b].path.clone(),
            });
        }
    }
    Ok(out)
}

/// Dataset description written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub root: PathBuf,
    pub seed: u64,
    pub splits: Splits,
    /// Present for generated datasets.
    pub synth: Option<SynthConfig>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k_true: usize,
    /// `mapping[s]` is the stem-B symbol played against stem-A symbol `s`.
    pub mapping: Vec<usize>,
    pub segment_ms: u32,
    pub frequencies: Vec<f64>,
    pub n_tracks: usize,
    pub track_secs: f64,
    /// Standard deviation of additive white noise.
    pub noise: f64,
    pub amplitude: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

/// Seeded pairing of symbols: every symbol is swapped with a partner, so the
/// mapping equals its own inverse. An odd count leaves one fixed point.
pub fn involution(k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut map: Vec<usize> = (0..k).collect();
    for pair in order.chunks_exact(2) {
        map[pair[0]] = pair[1];
        map[pair[1]] = pair[0];
    }
    map
}

/// `k` frequencies spaced evenly in log frequency between `lo` and `hi`.
pub fn log_spaced(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k)
        .map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64))
        .collect()
}

impl SynthConfig {
    pub fn new(
        k_true: usize,
        n_tracks: usize,
        track_secs: f64,
        segment_ms: u32,
        seed: u64,
    ) -> Self {
        Self {
            k_true,
            mapping: involution(k_true, seed ^ 0x5EED),
            segment_ms,
            frequencies: log_spaced(k_true, 200.0, 3200.0),
            n_tracks,
            track_secs,
            noise: 0.01,
            amplitude: 0.5,
            sample_rate: 16000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSynth(m));
        if self.k_true < 2 || self.n_tracks == 0 || self.segment_ms == 0 || self.track_secs <= 0.0 {
            return bad("k_true >= 2, n_tracks, segment_ms and track_secs must be positive".into());
        }
        let mut seen = vec![false; self.k_true];
        if self.mapping.len() != self.k_true {
            return bad(format!(
                "mapping has {} entries for {} symbols",
                self.mapping.len(),
                self.k_true
            ));
        }
        for &m in &self.mapping {
            if m >= self.k_true || seen[m] {
                return bad(format!("mapping {:?} is not a permutation", self.mapping));
            }
            seen[m] = true;
        }
        if self.frequencies.len() != self.k_true {
            return bad("one frequency per symbol required".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let mut sorted = self.frequencies.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1])
            || sorted.iter().any(|&f| f <= 0.0 || f >= nyquist)
        {
            return bad(format!(
                "frequencies must be distinct and inside (0, {nyquist}) Hz"
            ));
        }
        if !(self.noise >= 0.0 && self.amplitude > 0.0) {
            return bad("noise must be >= 0 and amplitude > 0".into());
        }
        Ok(())
    }

    pub fn symbols_per_track(&self) -> usize {
        (self.track_secs * 1000.0 / self.segment_ms as f64).floor() as usize
    }
}

/// Sine tones for a symbol sequence, one segment each, with raised-cosine
/// edges, plus white noise drawn from `rng`.
pub fn render_symbols(
    cfg: &SynthConfig,
    symbols: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<AudioBuffer, DatasetError> {
    let rate = cfg.sample_rate;
    let seg = ms_to_samples(cfg.segment_ms as f64, rate);
    let edge = ms_to_samples(EDGE_MS, rate).min(seg / 2);
    let mut out = Vec::with_capacity(seg * symbols.len());
    for &s in symbols {
        let w = 2.0 * std::f64::consts::PI * cfg.frequencies[s] / rate as f64;
        for i in 0..seg {
            let dist_to_edge = i.min(seg - 1 - i);
            let env = if dist_to_edge < edge {
                0.5 * (1.0 - (std::f64::consts::PI * dist_to_edge as f64 / edge as f64).cos())
            } else {
                1.0
            };
            out.push(cfg.amplitude * env * (w * i as f64).sin());
        }
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).expect("valid noise level");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    Ok(AudioBuffer::new(
        out.into_iter().map(|v| v as f32).collect(),
        rate,
    )?)
}

fn write_symbols(path: &Path, symbols: &[usize]) -> Result<(), DatasetError> {
    let text: String = symbols.iter().map(|s| format!("{s}\n")).collect();
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_symbols(path: impl AsRef<Path>) -> Result<Vec<usize>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim().parse().map_err(|_| {
                DatasetError::Manifest(format!("{}: bad symbol line {l:?}", path.display()))
            })
        })
        .collect()
}

/// Writes `track_NNN/{A,B}.wav` and `{A,B}.sym` under `out`. Stem A plays a
/// uniform random symbol sequence; stem B plays its image under the mapping.
pub fn synth_paired(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<TrackIndex, DatasetError> {
    cfg.validate()?;
    let out = out.as_ref();
    let n_sym = cfg.symbols_per_track();
    let mut tracks = Vec::with_capacity(cfg.n_tracks);
    for t in 0..cfg.n_tracks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);
        let a: Vec<usize> = (0..n_sym)
            .map(|_| rng.random_range(0..cfg.k_true))
            .collect();
        let b: Vec<usize> = a.iter().map(|&s| cfg.mapping[s]).collect();
        let dir = out.join(format!("track_{t:03}"));
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut stems = Vec::new();
        for (name, symbols) in [("A", &a), ("B", &b)] {
            let wav = dir.join(format!("{name}.wav"));
            let audio = render_symbols(cfg, symbols, &mut rng)?;
            write_wav(&audio, &wav)?;
            write_symbols(&dir.join(format!("{name}.sym")), symbols)?;
            stems.push(Stem {
                name: name.to_string(),
                path: wav,
            });
        }
        tracks.push(Track {
            id: format!("track_{t:03}"),
            stems,
        });
    }
    Ok(TrackIndex {
        tracks,
        exclusions: Vec::new(),
    })
}
