use std::io::{Read, Write};
use std::path::Path;

use super::kmeans::{kmeans, nearest, KMeansFit};
use super::{CondensedSequence, PerceptionError, TokenSequence};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"STLK";
pub const CODEBOOK_VERSION: u16 = 1;

/// The musical alphabet: `K` centroids in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec<f32>>,
    encoder_id: String,
    segment_ms: u32,
    training_inertia: f64,
}

impl Codebook {
    pub fn new(
        centroids: Vec<Vec<f32>>,
        encoder_id: impl Into<String>,
        segment_ms: u32,
        training_inertia: f64,
    ) -> Result<Self, PerceptionError> {
        if centroids.len() < 2 {
            return Err(PerceptionError::InvalidConfig(format!(
                "codebook needs K >= 2, got {}",
                centroids.len()
            )));
        }
        let dim = centroids[0].len();
        if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
            return Err(PerceptionError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
                context: "codebook centroid".into(),
            });
        }
        Ok(Self {
            centroids,
            encoder_id: encoder_id.into(),
            segment_ms,
            training_inertia,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    pub fn centroid(&self, id: usize) -> &[f32] {
        &self.centroids[id]
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn segment_ms(&self) -> u32 {
        self.segment_ms
    }

    pub fn training_inertia(&self) -> f64 {
        self.training_inertia
    }

    /// Binary layout: `STLK`, version u16, K u32, D u32, segment_ms u32,
    /// encoder id (u32 byte length + UTF-8), K×D f32 centroids, then the
    /// training inertia as f64. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(22 + self.encoder_id.len() + self.k() * self.dim() * 4 + 8);
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.segment_ms.to_le_bytes());
        out.extend_from_slice(&(self.encoder_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.encoder_id.as_bytes());
        for v in self.centroids.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.training_inertia.to_le_bytes());
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, PerceptionError> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(PerceptionError::Format(format!(
                "bad codebook magic {magic:?}"
            )));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != CODEBOOK_VERSION {
            return Err(PerceptionError::Format(format!(
                "unsupported codebook version {version}"
            )));
        }
        let k = u32::from_le_bytes(read_array(r)?) as usize;
        let dim = u32::from_le_bytes(read_array(r)?) as usize;
        let segment_ms = u32::from_le_bytes(read_array(r)?);
        let id_len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut id = vec![0u8; id_len];
        read_exact(r, &mut id)?;
        let encoder_id = String::from_utf8(id)
            .map_err(|_| PerceptionError::Format("encoder id is not UTF-8".into()))?;
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            let row = (0..dim)
                .map(|_| read_array(r).map(f32::from_le_bytes))
                .collect::<Result<Vec<_>, _>>()?;
            centroids.push(row);
        }
        let inertia = if r.is_empty() {
            f64::NAN
        } else {
            f64::from_le_bytes(read_array(r)?)
        };
        Self::new(centroids, encoder_id, segment_ms, inertia)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PerceptionError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| PerceptionError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| PerceptionError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PerceptionError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| PerceptionError::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], out: &mut [u8]) -> Result<(), PerceptionError> {
    r.read_exact(out)
        .map_err(|_| PerceptionError::Format("codebook file truncated".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], PerceptionError> {
    let mut a = [0u8; N];
    read_exact(r, &mut a)?;
    Ok(a)
}

/// Fits a `k`-symbol codebook on condensed segment vectors.
pub fn fit_codebook(
    vectors: &[Vec<f32>],
    k: usize,
    seed: u64,
    encoder_id: &str,
    segment_ms: u32,
) -> Result<(Codebook, KMeansFit), PerceptionError> {
    if vectors.len() < k {
        return Err(PerceptionError::TooFewDistinct {
            distinct: vectors.len(),
            k,
        });
    }
    let points: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .collect();
    let fit = kmeans(&points, k, seed)?;
    let centroids = fit
        .centroids
        .iter()
        .map(|c| c.iter().map(|&x| x as f32).collect())
        .collect();
    let cb = Codebook::new(centroids, encoder_id, segment_ms, fit.inertia)?;
    Ok((cb, fit))
}

/// Nearest-centroid labels, lowest index on ties.
pub fn quantize(cond: &CondensedSequence, cb: &Codebook) -> Result<TokenSequence, PerceptionError> {
    let centroids: Vec<Vec<f64>> = cb
        .centroids
        .iter()
        .map(|c| c.iter().map(|&x| x as f64).collect())
        .collect();
    let ids = cond
        .vectors
        .iter()
        .map(|v| {
            if v.len() != cb.dim() {
                return Err(PerceptionError::DimensionMismatch {
                    expected: cb.dim(),
                    actual: v.len(),
                    context: "quantize".into(),
                });
            }
            let p: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            Ok(nearest(&p, &centroids).0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    TokenSequence::new(ids, cb.k())
}
