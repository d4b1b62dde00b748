//! Concatenative rendering of a symbolic specification from a labelled
//! segment corpus.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{concat_with_crossfade, AudioBuffer, AudioError, Piece, SegmentSpan};
use crate::perception::{
    perceive_with_spans, Codebook, FeatureEncoder, PerceptionError, TokenSequence,
};

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("specification alphabet {spec} does not match corpus alphabet {corpus}")]
    AlphabetMismatch { spec: usize, corpus: usize },
    #[error("selection refers to entry {index} of a {len}-entry corpus")]
    BadIndex { index: usize, len: usize },
    #[error("source at {actual} Hz, corpus built at {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("malformed corpus: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub start: usize,
    pub length: usize,
    pub label: usize,
}

/// Segments of one audio file paired with their class ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub source_path: String,
    pub sample_rate: u32,
    pub segment_duration_ms: u32,
    pub codebook_id: String,
    pub k: usize,
    /// Peak level the source was normalized to before analysis, if any.
    #[serde(default)]
    pub peak_dbfs: Option<f64>,
    pub entries: Vec<CorpusEntry>,
}

/// Short content hash identifying a codebook.
pub fn codebook_id(cb: &Codebook) -> String {
    let digest = Sha256::digest(cb.to_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl Corpus {
    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn label_set(&self) -> std::collections::BTreeSet<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn segment_len(&self) -> usize {
        crate::audio::ms_to_samples(self.segment_duration_ms as f64, self.sample_rate)
    }

    pub fn span(&self, index: usize) -> SegmentSpan {
        let e = self.entries[index];
        SegmentSpan {
            start: e.start,
            length: e.length,
            index,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ActionError> {
        let c: Corpus =
            serde_json::from_str(text).map_err(|e| ActionError::Format(e.to_string()))?;
        if let Some(e) = c.entries.iter().find(|e| e.label >= c.k) {
            return Err(ActionError::Format(format!(
                "label {} outside alphabet of size {}",
                e.label, c.k
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ActionError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ActionError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ActionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ActionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Perceives `buf` and pairs every span with its label.
pub fn build_corpus(
    encoder: &FeatureEncoder,
    buf: &AudioBuffer,
    cb: &Codebook,
    source_path: &str,
) -> Result<Corpus, ActionError> {
    let (spans, tokens) = perceive_with_spans(encoder, buf, cb)?;
    Ok(Corpus {
        source_path: source_path.to_string(),
        sample_rate: buf.sample_rate(),
        segment_duration_ms: cb.segment_ms(),
        codebook_id: codebook_id(cb),
        k: cb.k(),
        peak_dbfs: None,
        entries: spans
            .iter()
            .zip(tokens.ids())
            .map(|(s, &label)| CorpusEntry {
                start: s.start,
                length: s.length,
                label,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Entry(usize),
    Silence,
}

/// Picks one corpus entry per specification token. Preference order: the
/// entry following the previous pick, the entry at the same position, then a
/// seeded uniform draw among entries with the label. Labels absent from the
/// corpus become silence.
pub fn select_segments(
    corpus: &Corpus,
    spec: &TokenSequence,
    seed: u64,
) -> Result<Vec<Choice>, ActionError> {
    if spec.k() != corpus.k {
        return Err(ActionError::AlphabetMismatch {
            spec: spec.k(),
            corpus: corpus.k,
        });
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); corpus.k];
    for (i, e) in corpus.entries.iter().enumerate() {
        by_label[e.label].push(i);
    }
    let label_at = |i: usize| corpus.entries.get(i).map(|e| e.label);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev: Option<usize> = None;
    let mut out = Vec::with_capacity(spec.len());
    for (pos, &label) in spec.ids().iter().enumerate() {
        let pick = if let Some(next) = prev.map(|j| j + 1).filter(|&j| label_at(j) == Some(label)) {
            Some(next)
        } else if label_at(pos) == Some(label) {
            Some(pos)
        } else {
            by_label[label].choose(&mut rng).copied()
        };
        prev = pick;
        out.push(pick.map_or(Choice::Silence, Choice::Entry));
    }
    Ok(out)
}

/// Concatenates the selected segments of `source`.
pub fn render(
    source: &AudioBuffer,
    corpus: &Corpus,
    selection: &[Choice],
    crossfade_ms: f64,
) -> Result<AudioBuffer, ActionError> {
    if source.sample_rate() != corpus.sample_rate {
        return Err(ActionError::RateMismatch {
            expected: corpus.sample_rate,
            actual: source.sample_rate(),
        });
    }
    let pieces = selection
        .iter()
        .map(|c| match *c {
            Choice::Silence => Ok(Piece::Silence),
            Choice::Entry(i) if i < corpus.entries.len() => Ok(Piece::Span(corpus.span(i))),
            Choice::Entry(index) => Err(ActionError::BadIndex {
                index,
                len: corpus.entries.len(),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(concat_with_crossfade(
        source,
        &pieces,
        corpus.segment_len(),
        crossfade_ms,
    )?)
}
