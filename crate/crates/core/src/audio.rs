//! Audio-rate boundary of the pipeline: WAV I/O, resampling, uniform
//! segmentation and crossfaded concatenation.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default crossfade between concatenated segments.
pub const DEFAULT_CROSSFADE_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read WAV {path}: {source}")]
    Read { path: String, source: hound::Error },
    #[error("cannot write WAV {path}: {source}")]
    Write { path: String, source: hound::Error },
    #[error("unsupported WAV encoding in {path}: {detail}")]
    Unsupported { path: String, detail: String },
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("segment duration must be positive, got {0} ms")]
    InvalidDuration(f64),
    #[error(
        "crossfade {crossfade} samples must be shorter than half a segment ({segment} samples)"
    )]
    InvalidCrossfade { crossfade: usize, segment: usize },
    #[error("span #{index} (start {start}, length {length}) is out of bounds for a source of {source_len} samples")]
    SpanOutOfBounds {
        index: usize,
        start: usize,
        length: usize,
        source_len: usize,
    },
    #[error("span #{index} has length {length}, expected uniform length {expected}")]
    NonUniformSpan {
        index: usize,
        length: usize,
        expected: usize,
    },
}

/// Mono sample sequence in [-1, 1] with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of samples covering `ms` milliseconds at this rate.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate)
    }

    /// Copy of `[start, start + len)`, zero-filled past the end of the buffer.
    pub fn slice_padded(&self, start: usize, len: usize) -> AudioBuffer {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        AudioBuffer {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads the buffer to at least `len` samples.
    pub fn padded_to(&self, len: usize) -> AudioBuffer {
        let mut samples = self.samples.clone();
        if samples.len() < len {
            samples.resize(len, 0.0);
        }
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Scales the buffer so its absolute peak sits at `dbfs` (e.g. -3.0).
    /// Silent buffers are returned unchanged.
    pub fn peak_normalized(&self, dbfs: f64) -> AudioBuffer {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        let target = 10f64.powf(dbfs / 20.0) as f32;
        let gain = target / peak;
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Contiguous run of samples inside a source buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: usize,
    pub length: usize,
    pub index: usize,
}

impl SegmentSpan {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// One element of a concatenation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Span(SegmentSpan),
    Silence,
}

/// Reads a 16-bit PCM or 32-bit float WAV with one or two channels.
/// Stereo input is downmixed by channel mean.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = WavReader::open(path).map_err(|source| AudioError::Read {
        path: shown.clone(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::Unsupported {
            path: shown,
            detail: format!("{} channels", spec.channels),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>(),
        (fmt, bits) => {
            return Err(AudioError::Unsupported {
                path: shown,
                detail: format!("{bits}-bit {fmt:?}"),
            })
        }
    }
    .map_err(|source| AudioError::Read {
        path: shown.clone(),
        source,
    })?;

    let channels = spec.channels as usize;
    if !interleaved.len().is_multiple_of(channels) {
        return Err(AudioError::Unsupported {
            path: shown,
            detail: "truncated final frame".into(),
        });
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a 16-bit PCM mono WAV. Returns the number of samples that had to
/// be clipped into [-1, 1].
pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<usize, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let werr = |source| AudioError::Write {
        path: shown.clone(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(werr)?;
    let mut clipped = 0;
    for &s in &buf.samples {
        let (q, c) = quantize_i16(s);
        clipped += c as usize;
        writer.write_sample(q).map_err(werr)?;
    }
    writer.finalize().map_err(werr)?;
    if clipped > 0 {
        log::warn!("{shown}: clipped {clipped} samples outside [-1, 1]");
    }
    Ok(clipped)
}

fn quantize_i16(s: f32) -> (i16, bool) {
    let clipped = !(-1.0..=1.0).contains(&s);
    let v = (s.clamp(-1.0, 1.0) * 32768.0).round();
    (v.clamp(-32768.0, 32767.0) as i16, clipped)
}

/// Linear-interpolation resampler. Output length is
/// `round(len * target / source)`.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidRate(target_rate));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let n_in = buf.samples.len();
    let n_out = (n_in as f64 * target_rate as f64 / buf.sample_rate as f64).round() as usize;
    let step = buf.sample_rate as f64 / target_rate as f64;
    let src = &buf.samples;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = src.get(i0).copied().unwrap_or(0.0) as f64;
            let b = src.get(i0 + 1).map_or(a, |&v| v as f64);
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioBuffer::new(samples, target_rate)
}

/// Cuts the buffer into equal spans of `duration_ms`. A trailing remainder of
/// at least half a window becomes a final (zero-padded) span; shorter
/// remainders are dropped.
pub fn segment_uniform(
    buf: &AudioBuffer,
    duration_ms: f64,
) -> Result<Vec<SegmentSpan>, AudioError> {
    if duration_ms.is_nan() || duration_ms <= 0.0 {
        return Err(AudioError::InvalidDuration(duration_ms));
    }
    let window = buf.ms_to_samples(duration_ms).max(1);
    Ok(segment_uniform_samples(buf.len(), window))
}

pub fn segment_uniform_samples(len: usize, window: usize) -> Vec<SegmentSpan> {
    let full = len / window;
    let remainder = len - full * window;
    let count = if remainder * 2 >= window && remainder > 0 {
        full + 1
    } else {
        full
    };
    (0..count)
        .map(|index| SegmentSpan {
            start: index * window,
            length: window,
            index,
        })
        .collect()
}

/// Joins pieces of `segment_len` samples with an equal-power crossfade of
/// `crossfade_ms`. Silence pieces contribute zeros. Samples of a span that
/// fall past the end of `source` read as zero (padded final span).
pub fn concat_with_crossfade(
    source: &AudioBuffer,
    pieces: &[Piece],
    segment_len: usize,
    crossfade_ms: f64,
) -> Result<AudioBuffer, AudioError> {
    let fade = source.ms_to_samples(crossfade_ms.max(0.0));
    if segment_len > 0 && fade * 2 >= segment_len && fade > 0 {
        return Err(AudioError::InvalidCrossfade {
            crossfade: fade,
            segment: segment_len,
        });
    }
    for (i, piece) in pieces.iter().enumerate() {
        if let Piece::Span(span) = piece {
            if span.length != segment_len {
                return Err(AudioError::NonUniformSpan {
                    index: i,
                    length: span.length,
                    expected: segment_len,
                });
            }
            if span.start >= source.len() {
                return Err(AudioError::SpanOutOfBounds {
                    index: i,
                    start: span.start,
                    length: span.length,
                    source_len: source.len(),
                });
            }
        }
    }
    let n = pieces.len();
    if n == 0 {
        return AudioBuffer::new(Vec::new(), source.sample_rate);
    }
    let out_len = n * segment_len - (n - 1) * fade;
    let mut out = vec![0.0f32; out_len];
    let stride = segment_len - fade;
    for (k, piece) in pieces.iter().enumerate() {
        let Piece::Span(span) = piece else { continue };
        let offset = k * stride;
        for i in 0..segment_len {
            let s = source.samples.get(span.start + i).copied().unwrap_or(0.0);
            let mut gain = 1.0f64;
            if fade > 0 {
                if k > 0 && i < fade {
                    gain *= fade_in(i, fade);
                }
                if k + 1 < n && i >= segment_len - fade {
                    gain *= fade_out(i - (segment_len - fade), fade);
                }
            }
            out[offset + i] += (s as f64 * gain) as f32;
        }
    }
    AudioBuffer::new(out, source.sample_rate)
}

fn fade_position(i: usize, fade: usize) -> f64 {
    (i as f64 + 1.0) / (fade as f64 + 1.0)
}

fn fade_in(i: usize, fade: usize) -> f64 {
    (std::f64::consts::FRAC_PI_2 * fade_position(i, fade)).sin()
}

fn fade_out(i: usize, fade: usize) -> f64 {
    (std::f64::consts::FRAC_PI_2 * fade_position(i, fade)).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f32, len: usize, rate: u32) -> AudioBuffer {
        AudioBuffer::new(vec![v; len], rate).unwrap()
    }

    fn write_raw<T: hound::Sample + Copy>(path: &Path, spec: WavSpec, data: &[T]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn loads_16bit_silence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        write_raw(&path, spec, &vec![0i16; 44100]);
        let buf = load_wav(&path).unwrap();
        assert_eq!(buf.sample_rate(), 44100);
        assert_eq!(buf.len(), 44100);
        assert!(buf.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_downmix_cancels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let data: Vec<f32> = (0..200)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        write_raw(&path, spec, &data);
        let buf = load_wav(&path).unwrap();
        assert_eq!(buf.len(), 100);
        assert!(buf.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_16bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fs.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        write_raw(&path, spec, &[32767i16, -32768]);
        let buf = load_wav(&path).unwrap();
        assert_eq!(buf.samples()[0], (32767.0f64 / 32768.0) as f32);
        assert_eq!(buf.samples()[1], -1.0);
    }

    #[test]
    fn rejects_unsupported_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        write_raw(&path, spec, &[0i32, 1, 2]);
        let err = load_wav(&path).unwrap_err();
        assert!(matches!(err, AudioError::Unsupported { .. }), "{err}");
        assert!(load_wav(dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn resample_identity_and_constant() {
        let buf =
            AudioBuffer::new((0..100).map(|i| (i as f32 * 0.37).sin()).collect(), 8000).unwrap();
        assert_eq!(resample(&buf, 8000).unwrap(), buf);

        let c = constant(0.3, 8000, 8000);
        let up = resample(&c, 16000).unwrap();
        assert_eq!(up.len(), 16000);
        assert!(up.samples().iter().all(|&s| (s - 0.3).abs() < 1e-7));
        assert!(resample(&c, 0).is_err());
    }

    #[test]
    fn resample_preserves_sine_rms() {
        let rate = 44100;
        let sine: Vec<f32> = (0..rate)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate as f64).sin() as f32)
            .collect();
        let buf = AudioBuffer::new(sine, rate).unwrap();
        let out = resample(&buf, 16000).unwrap();
        assert_eq!(out.len(), 16000);
        let rms = (out
            .samples()
            .iter()
            .map(|&s| (s as f64).powi(2))
            .sum::<f64>()
            / out.len() as f64)
            .sqrt();
        let expected = 1.0 / 2f64.sqrt();
        assert!((rms - expected).abs() / expected < 0.01, "rms {rms}");
    }

    #[test]
    fn segment_counts() {
        let buf = AudioBuffer::silence(15 * 16000, 16000).unwrap();
        let spans = segment_uniform(&buf, 250.0).unwrap();
        assert_eq!(spans.len(), 60);
        assert!(spans.iter().all(|s| s.length == 4000));
        assert_eq!(segment_uniform(&buf, 500.0).unwrap().len(), 30);

        let short = AudioBuffer::silence(1600, 16000).unwrap();
        assert!(segment_uniform(&short, 250.0).unwrap().is_empty());
        assert!(segment_uniform(&buf, 0.0).is_err());
    }

    #[test]
    fn trailing_remainder_rule() {
        // 2.5 windows -> third span padded, 2.4 windows -> dropped
        assert_eq!(segment_uniform_samples(250, 100).len(), 3);
        assert_eq!(segment_uniform_samples(249, 100).len(), 2);
        assert_eq!(segment_uniform_samples(50, 100).len(), 1);
        assert_eq!(segment_uniform_samples(49, 100).len(), 0);
    }

    #[test]
    fn concat_single_span_verbatim() {
        let src = AudioBuffer::new((0..400).map(|i| i as f32 / 400.0).collect(), 1000).unwrap();
        let span = SegmentSpan {
            start: 100,
            length: 200,
            index: 0,
        };
        let out = concat_with_crossfade(&src, &[Piece::Span(span)], 200, 10.0).unwrap();
        assert_eq!(out.samples(), &src.samples()[100..300]);
    }

    #[test]
    fn equal_power_junction_bounds() {
        let src = constant(0.5, 2000, 1000);
        let a = SegmentSpan {
            start: 0,
            length: 1000,
            index: 0,
        };
        let b = SegmentSpan {
            start: 1000,
            length: 1000,
            index: 1,
        };
        let out =
            concat_with_crossfade(&src, &[Piece::Span(a), Piece::Span(b)], 1000, 100.0).unwrap();
        assert_eq!(out.len(), 2 * 1000 - 100);
        let hi = 0.5 * 2f32.sqrt() + 1e-6;
        for &s in out.samples() {
            assert!((0.5 - 1e-6..=hi).contains(&s), "{s}");
        }
        let max_jump = out
            .samples()
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0f32, f32::max);
        assert!(max_jump < 0.01, "discontinuity {max_jump}");
    }

    #[test]
    fn silence_pieces_are_zero() {
        let src = constant(0.7, 100, 1000);
        let out =
            concat_with_crossfade(&src, &[Piece::Silence, Piece::Silence], 100, 10.0).unwrap();
        assert_eq!(out.len(), 2 * 100 - 10);
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn concat_errors() {
        let src = constant(0.1, 100, 1000);
        let oob = SegmentSpan {
            start: 100,
            length: 50,
            index: 0,
        };
        assert!(matches!(
            concat_with_crossfade(&src, &[Piece::Span(oob)], 50, 0.0),
            Err(AudioError::SpanOutOfBounds { .. })
        ));
        let ok = SegmentSpan {
            start: 0,
            length: 50,
            index: 0,
        };
        assert!(matches!(
            concat_with_crossfade(&src, &[Piece::Span(ok)], 50, 25.0),
            Err(AudioError::InvalidCrossfade { .. })
        ));
    }

    #[test]
    fn write_wav_clips_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let buf = AudioBuffer::new(vec![0.0, 1.5, -2.0, 0.5], 8000).unwrap();
        assert_eq!(write_wav(&buf, &path).unwrap(), 2);
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples()[1], 32767.0 / 32768.0);
        assert_eq!(back.samples()[2], -1.0);

        let zero = AudioBuffer::silence(50, 8000).unwrap();
        write_wav(&zero, &path).unwrap();
        assert!(load_wav(&path).unwrap().samples().iter().all(|&s| s == 0.0));
    }

    proptest! {
        #[test]
        fn wav_round_trip_within_one_lsb(data in proptest::collection::vec(-1.0f32..=1.0, 1..300)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.wav");
            let buf = AudioBuffer::new(data, 16000).unwrap();
            write_wav(&buf, &path).unwrap();
            let back = load_wav(&path).unwrap();
            prop_assert_eq!(back.len(), buf.len());
            for (a, b) in buf.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
            }
        }

        #[test]
        fn spans_tile_in_order(len in 0usize..5000, window in 1usize..700) {
            let spans = segment_uniform_samples(len, window);
            for (i, s) in spans.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert_eq!(s.start, i * window);
                prop_assert_eq!(s.length, window);
            }
            let covered = spans.len() * window;
            prop_assert!(covered + window >= len);
        }

        #[test]
        fn zero_crossfade_is_plain_concat(
            data in proptest::collection::vec(-1.0f32..1.0, 40..200),
            picks in proptest::collection::vec(0usize..4, 1..8),
        ) {
            let seg = data.len() / 4;
            let src = AudioBuffer::new(data, 1000).unwrap();
            let pieces: Vec<Piece> = picks
                .iter()
                .map(|&p| Piece::Span(SegmentSpan { start: p * seg, length: seg, index: p }))
                .collect();
            let out = concat_with_crossfade(&src, &pieces, seg, 0.0).unwrap();
            let expected: Vec<f32> = picks
                .iter()
                .flat_map(|&p| src.samples()[p * seg..(p + 1) * seg].to_vec())
                .collect();
            prop_assert_eq!(out.samples(), &expected[..]);
        }
    }
}
