//! Audio to symbols: frame features, per-segment temporal average, and
//! nearest-centroid quantization against a k-means codebook.

mod codebook;
mod features;
pub mod kmeans;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{segment_uniform, AudioBuffer, AudioError, SegmentSpan};

pub use codebook::{fit_codebook, quantize, Codebook, CODEBOOK_MAGIC, CODEBOOK_VERSION};
pub use features::{
    encode_features, export_features, import_features, parse_features, EncoderConfig,
    FeatureEncoder, FeatureSequence, MelFilterbank, LOG_FLOOR,
};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("audio at {actual} Hz, encoder expects {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("input of {samples} samples is shorter than one analysis window ({needed})")]
    TooShort { samples: usize, needed: usize },
    #[error("{context}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },
    #[error("span #{index} (samples {start}..{end}) covers no feature frame")]
    EmptySpan {
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("only {distinct} distinct rows available for {k} clusters")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("token id {id} outside alphabet of size {k}")]
    TokenOutOfRange { id: usize, k: usize },
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

impl PerceptionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One averaged feature vector per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedSequence {
    pub vectors: Vec<Vec<f32>>,
    pub segment_ms: u32,
}

/// Class ids over an alphabet of size `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<usize>,
    k: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, k: usize) -> Result<Self, PerceptionError> {
        if let Some(&id) = ids.iter().find(|&&id| id >= k) {
            return Err(PerceptionError::TokenOutOfRange { id, k });
        }
        Ok(Self { ids, k })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.ids
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Averages the frames whose centres fall inside each span.
pub fn condense(
    features: &FeatureSequence,
    spans: &[SegmentSpan],
    segment_ms: u32,
) -> Result<CondensedSequence, PerceptionError> {
    let centers: Vec<f64> = (0..features.len())
        .map(|f| features.frame_center(f))
        .collect();
    let mut vectors = Vec::with_capacity(spans.len());
    let mut first = 0;
    for span in spans {
        let (start, end) = (span.start as f64, span.end() as f64);
        while first < centers.len() && centers[first] < start {
            first += 1;
        }
        let mut acc = vec![0.0f64; features.dim];
        let mut count = 0usize;
        let mut f = first;
        while f < centers.len() && centers[f] < end {
            for (a, &v) in acc.iter_mut().zip(&features.frames[f]) {
                *a += v as f64;
            }
            count += 1;
            f += 1;
        }
        if count == 0 {
            return Err(PerceptionError::EmptySpan {
                index: span.index,
                start: span.start,
                end: span.end(),
            });
        }
        vectors.push(acc.into_iter().map(|a| (a / count as f64) as f32).collect());
    }
    Ok(CondensedSequence {
        vectors,
        segment_ms,
    })
}

/// Feature extraction, uniform segmentation and condensation of one buffer.
/// A zero-padded final span is encoded over zero-padded audio.
pub fn encode_segments(
    encoder: &FeatureEncoder,
    buf: &AudioBuffer,
    segment_ms: u32,
) -> Result<(Vec<SegmentSpan>, CondensedSequence), PerceptionError> {
    let spans = segment_uniform(buf, segment_ms as f64)?;
    if spans.is_empty() {
        return Err(PerceptionError::TooShort {
            samples: buf.len(),
            needed: buf.ms_to_samples(segment_ms as f64 / 2.0),
        });
    }
    let seg_len = spans[0].length;
    let hop = encoder.config().hop_samples();
    if seg_len < hop {
        return Err(PerceptionError::InvalidConfig(format!(
            "segment of {seg_len} samples is shorter than the {hop}-sample frame hop"
        )));
    }
    let end = spans.last().map_or(0, SegmentSpan::end);
    let padded = buf.padded_to(end);
    let features = encoder.encode(&padded)?;
    let cond = condense(&features, &spans, segment_ms)?;
    Ok((spans, cond))
}

/// Full perception: encode, segment, condense, quantize.
pub fn perceive(
    encoder: &FeatureEncoder,
    buf: &AudioBuffer,
    cb: &Codebook,
) -> Result<TokenSequence, PerceptionError> {
    Ok(perceive_with_spans(encoder, buf, cb)?.1)
}

pub fn perceive_with_spans(
    encoder: &FeatureEncoder,
    buf: &AudioBuffer,
    cb: &Codebook,
) -> Result<(Vec<SegmentSpan>, TokenSequence), PerceptionError> {
    let expected = encoder.config().encoder_id();
    if cb.encoder_id() != expected {
        return Err(PerceptionError::CodebookMismatch(format!(
            "codebook encoder {:?} != pipeline encoder {expected:?}",
            cb.encoder_id()
        )));
    }
    let (spans, cond) = encode_segments(encoder, buf, cb.segment_ms())?;
    Ok((spans, quantize(&cond, cb)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::segment_uniform_samples;

    fn feats(frames: Vec<Vec<f32>>) -> FeatureSequence {
        FeatureSequence {
            dim: frames.first().map_or(0, Vec::len),
            frames,
            frame_hop_ms: 20,
            frame_window_ms: 25,
            source_rate: 16000,
        }
    }

    #[test]
    fn condense_constant_and_midpoint() {
        let f = feats(vec![vec![1.5, -2.0]; 49]);
        let spans = segment_uniform_samples(16000, 4000);
        let c = condense(&f, &spans, 250).unwrap();
        assert_eq!(c.vectors.len(), 4);
        assert!(c.vectors.iter().all(|v| v == &vec![1.5, -2.0]));

        let f2 = feats(vec![vec![0.0, 0.0], vec![2.0, 2.0]]);
        let span = SegmentSpan {
            start: 0,
            length: 800,
            index: 0,
        };
        let c2 = condense(&f2, &[span], 250).unwrap();
        assert_eq!(c2.vectors[0], vec![1.0, 1.0]);
    }

    #[test]
    fn condense_frame_counts_match_enumeration() {
        // frame f centred at 320 f + 200; count per 4000-sample span by brute force
        let n_frames = EncoderConfig::default().frame_count(15 * 16000);
        let frames: Vec<Vec<f32>> = (0..n_frames).map(|f| vec![f as f32]).collect();
        let f = feats(frames);
        let spans = segment_uniform_samples(15 * 16000, 4000);
        let c = condense(&f, &spans, 250).unwrap();
        for (span, v) in spans.iter().zip(&c.vectors) {
            let members: Vec<usize> = (0..n_frames)
                .filter(|&fi| {
                    let center = 320 * fi + 200;
                    center >= span.start && center < span.end()
                })
                .collect();
            assert!(
                members.len() == 12 || members.len() == 13,
                "{}",
                members.len()
            );
            let mean = members.iter().sum::<usize>() as f32 / members.len() as f32;
            assert!((v[0] - mean).abs() < 1e-4);
        }
    }

    #[test]
    fn condense_reports_empty_span() {
        let f = feats(vec![vec![0.0]; 3]);
        let span = SegmentSpan {
            start: 5000,
            length: 100,
            index: 7,
        };
        let err = condense(&f, &[span], 250).unwrap_err();
        assert!(matches!(err, PerceptionError::EmptySpan { index: 7, .. }));
    }

    #[test]
    fn token_sequence_range() {
        assert!(TokenSequence::new(vec![0, 3], 4).is_ok());
        assert!(matches!(
            TokenSequence::new(vec![4], 4),
            Err(PerceptionError::TokenOutOfRange { id: 4, k: 4 })
        ));
    }

    fn tone(freq: f64, secs: f64) -> Vec<f32> {
        (0..(secs * 16000.0) as usize)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
            .collect()
    }

    #[test]
    fn perceive_lengths_and_determinism() {
        let enc = FeatureEncoder::new(EncoderConfig::default()).unwrap();
        let mut samples = Vec::new();
        for i in 0..30 {
            samples.extend(tone(if i % 2 == 0 { 300.0 } else { 1200.0 }, 0.5));
        }
        let buf = AudioBuffer::new(samples, 16000).unwrap();
        let (_, cond) = encode_segments(&enc, &buf, 500).unwrap();
        let (cb, _) = fit_codebook(&cond.vectors, 2, 0, &enc.config().encoder_id(), 500).unwrap();
        let toks = perceive(&enc, &buf, &cb).unwrap();
        assert_eq!(toks.len(), 30);
        assert_eq!(toks, perceive(&enc, &buf, &cb).unwrap());
        // alternating tones -> alternating labels
        assert!(toks.ids().windows(2).all(|w| w[0] != w[1]));

        let silence = AudioBuffer::silence(16000 * 3, 16000).unwrap();
        let st = perceive(&enc, &silence, &cb).unwrap();
        assert!(st.ids().iter().all(|&id| id == st.ids()[0]));

        let other = Codebook::new(cb.centroids().to_vec(), "other", 500, 0.0).unwrap();
        assert!(matches!(
            perceive(&enc, &buf, &other),
            Err(PerceptionError::CodebookMismatch(_))
        ));
    }

    #[test]
    fn perceive_length_follows_segment_count() {
        let enc = FeatureEncoder::new(EncoderConfig::default()).unwrap();
        let cb = Codebook::new(
            vec![vec![0.0; 64], vec![1.0; 64]],
            enc.config().encoder_id(),
            250,
            0.0,
        )
        .unwrap();
        for secs in [0.2, 1.0, 2.6, 7.3, 15.0] {
            let n = (secs * 16000.0) as usize;
            let buf = AudioBuffer::silence(n, 16000).unwrap();
            let expected = segment_uniform_samples(n, 4000).len();
            assert_eq!(
                perceive(&enc, &buf, &cb).unwrap().len(),
                expected,
                "{secs}s"
            );
        }
    }
}
