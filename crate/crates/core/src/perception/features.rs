use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::audio::AudioBuffer;

/// Floor applied before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Settings of the deterministic log-mel encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_bands: usize,
    pub n_fft: usize,
    pub fmin_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax_hz: Option<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 25,
            hop_ms: 20,
            n_bands: 64,
            n_fft: 512,
            fmin_hz: 0.0,
            fmax_hz: None,
        }
    }
}

impl EncoderConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms as usize * self.sample_rate as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms as usize * self.sample_rate as usize) / 1000
    }

    pub fn fmax(&self) -> f64 {
        self.fmax_hz.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Tag stored in codebooks so a codebook is never applied to features of
    /// a different encoder.
    pub fn encoder_id(&self) -> String {
        format!(
            "logmel:sr{}:w{}:h{}:b{}:n{}:f{}-{}",
            self.sample_rate,
            self.window_ms,
            self.hop_ms,
            self.n_bands,
            self.n_fft,
            self.fmin_hz,
            self.fmax()
        )
    }

    /// Number of frames for `len` samples: `floor((len - win) / hop) + 1`.
    pub fn frame_count(&self, len: usize) -> usize {
        let (win, hop) = (self.window_samples(), self.hop_samples());
        if len < win || hop == 0 {
            0
        } else {
            (len - win) / hop + 1
        }
    }
}

/// Frame-level features of one audio buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<Vec<f32>>,
    pub dim: usize,
    pub frame_hop_ms: u32,
    pub frame_window_ms: u32,
    pub source_rate: u32,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Sample index of the centre of frame `f`.
    pub fn frame_center(&self, f: usize) -> f64 {
        let rate = self.source_rate as f64;
        f as f64 * self.frame_hop_ms as f64 * rate / 1000.0
            + self.frame_window_ms as f64 * rate / 2000.0
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale, evaluated at the
/// exact frequency of every FFT bin.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_bands: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_bands + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..n_bands)
            .map(|b| {
                let (l, c, u) = (edges[b], edges[b + 1], edges[b + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - l) / (c - l);
                        let down = (u - f) / (u - c);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            centers: edges[1..=n_bands].to_vec(),
        }
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Deterministic log-mel filterbank encoder.
pub struct FeatureEncoder {
    config: EncoderConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self, PerceptionError> {
        let win = config.window_samples();
        if win == 0 || config.hop_samples() == 0 || config.n_bands == 0 || config.n_fft < win {
            return Err(PerceptionError::InvalidConfig(format!("{config:?}")));
        }
        let filterbank = MelFilterbank::new(
            config.n_bands,
            config.n_fft,
            config.sample_rate,
            config.fmin_hz,
            config.fmax(),
        );
        // symmetric Hann
        let window = (0..win)
            .map(|i| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1).max(1) as f64).cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            config,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn encode(&self, buf: &AudioBuffer) -> Result<FeatureSequence, PerceptionError> {
        if buf.sample_rate() != self.config.sample_rate {
            return Err(PerceptionError::RateMismatch {
                expected: self.config.sample_rate,
                actual: buf.sample_rate(),
            });
        }
        let n_frames = self.config.frame_count(buf.len());
        if n_frames == 0 {
            return Err(PerceptionError::TooShort {
                samples: buf.len(),
                needed: self.config.window_samples(),
            });
        }
        let (win, hop, n_fft) = (
            self.config.window_samples(),
            self.config.hop_samples(),
            self.config.n_fft,
        );
        let samples = buf.samples();
        let mut spectrum = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let frames = (0..n_frames)
            .map(|f| {
                let frame = &samples[f * hop..f * hop + win];
                spectrum
                    .iter_mut()
                    .for_each(|c| *c = Complex::new(0.0, 0.0));
                for (i, (&s, &w)) in frame.iter().zip(&self.window).enumerate() {
                    spectrum[i].re = s as f64 * w;
                }
                self.fft.process(&mut spectrum);
                for (p, c) in power.iter_mut().zip(&spectrum) {
                    *p = c.norm_sqr();
                }
                self.filterbank
                    .apply(&power)
                    .into_iter()
                    .map(|e| e.max(LOG_FLOOR).ln() as f32)
                    .collect()
            })
            .collect();
        Ok(FeatureSequence {
            frames,
            dim: self.config.n_bands,
            frame_hop_ms: self.config.hop_ms,
            frame_window_ms: self.config.window_ms,
            source_rate: self.config.sample_rate,
        })
    }
}

/// One-shot convenience over [`FeatureEncoder`].
pub fn encode_features(
    buf: &AudioBuffer,
    config: &EncoderConfig,
) -> Result<FeatureSequence, PerceptionError> {
    FeatureEncoder::new(config.clone())?.encode(buf)
}

/// Writes the text feature-matrix format: a `D=<int> hop_ms=<int> rate=<int>`
/// header followed by one whitespace-separated row per frame.
pub fn export_features(
    features: &FeatureSequence,
    path: impl AsRef<Path>,
) -> Result<(), PerceptionError> {
    let mut out = format!(
        "D={} hop_ms={} rate={}\n",
        features.dim, features.frame_hop_ms, features.source_rate
    );
    for row in &features.frames {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| PerceptionError::io(path, e))
}

/// Reads the feature-matrix format. The analysis window is not part of the
/// header; imported frames are assumed to use the default 25 ms window.
pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureSequence, PerceptionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PerceptionError::io(path, e))?;
    parse_features(&text)
}

pub fn parse_features(text: &str) -> Result<FeatureSequence, PerceptionError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PerceptionError::Format("missing header line".into()))?;
    let (mut dim, mut hop, mut rate) = (None, None, None);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| PerceptionError::Format(format!("bad header field {field:?}")))?;
        let parsed: u64 = value
            .parse()
            .map_err(|_| PerceptionError::Format(format!("non-integer header value {field:?}")))?;
        match key {
            "D" => dim = Some(parsed as usize),
            "hop_ms" => hop = Some(parsed as u32),
            "rate" => rate = Some(parsed as u32),
            other => {
                return Err(PerceptionError::Format(format!(
                    "unknown header key {other:?}"
                )))
            }
        }
    }
    let (Some(dim), Some(hop), Some(rate)) = (dim, hop, rate) else {
        return Err(PerceptionError::Format(format!(
            "incomplete header {header:?}"
        )));
    };
    let mut frames = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f32>())
            .collect::<Result<Vec<f32>, _>>()
            .map_err(|e| PerceptionError::Format(format!("row {n}: {e}")))?;
        if row.len() != dim {
            return Err(PerceptionError::DimensionMismatch {
                expected: dim,
                actual: row.len(),
                context: format!("feature row {n}"),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PerceptionError::Format(format!(
                "row {n}: non-finite value"
            )));
        }
        frames.push(row);
    }
    Ok(FeatureSequence {
        frames,
        dim,
        frame_hop_ms: hop,
        frame_window_ms: EncoderConfig::default().window_ms,
        source_rate: rate,
    })
}
