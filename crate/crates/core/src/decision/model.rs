use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sampling::{sample_top_p_traced, softmax_prefix, NucleusDraw};
use super::DecisionError;
use crate::numerics::{causal_mask, Graph, NumericsError, Real, Tensor, Var};
use crate::perception::TokenSequence;

pub const N_SPECIAL: usize = 2;
pub const INIT_STD: f64 = 0.02;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STLM";
pub const CHECKPOINT_VERSION: u16 = 1;

const PER_LAYER: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Length of the positional table, i.e. the longest input layout.
    pub max_len: usize,
}

impl Hyperparams {
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            dropout: 0.1,
            max_len: 512,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            n_layers: 6,
            d_model: 768,
            n_heads: 12,
            d_ff: 2048,
            dropout: 0.1,
            max_len: 512,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        let bad = |msg: String| Err(DecisionError::InvalidHyperparams(msg));
        if self.n_layers == 0 {
            return bad("n_layers must be positive".into());
        }
        if self.d_model == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad(format!(
                "d_model {}, d_ff {} and max_len {} must be positive",
                self.d_model, self.d_ff, self.max_len
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::desk()
    }
}

/// Sampling settings for [`DecisionModel::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub top_p: f64,
    pub constrained: bool,
    pub corpus_labels: Option<BTreeSet<usize>>,
    pub seed: u64,
    /// Defaults to the guide length.
    pub output_length: Option<usize>,
}

impl GenerationConfig {
    pub fn new(top_p: f64, seed: u64) -> Self {
        Self {
            top_p,
            constrained: false,
            corpus_labels: None,
            seed,
            output_length: None,
        }
    }

    pub fn constrained_to(mut self, labels: BTreeSet<usize>) -> Self {
        self.constrained = true;
        self.corpus_labels = Some(labels);
        self
    }
}

/// Decoder-only transformer over `[BOS, guide…, SEP, response…]`. Keys are
/// projected without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionModel<T> {
    k: usize,
    hp: Hyperparams,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    positions: Tensor<T>,
}

fn param_layout(k: usize, hp: &Hyperparams) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (hp.d_model, hp.d_ff, k + N_SPECIAL);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("seg_emb".to_string(), vec![2, d]),
    ];
    for l in 0..hp.n_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            (p("ln1.gamma"), vec![d]),
            (p("ln1.beta"), vec![d]),
            (p("attn.wq"), vec![d, d]),
            (p("attn.bq"), vec![d]),
            (p("attn.wk"), vec![d, d]),
            (p("attn.wv"), vec![d, d]),
            (p("attn.bv"), vec![d]),
            (p("attn.wo"), vec![d, d]),
            (p("attn.bo"), vec![d]),
            (p("ln2.gamma"), vec![d]),
            (p("ln2.beta"), vec![d]),
            (p("ff.w1"), vec![d, f]),
            (p("ff.b1"), vec![f]),
            (p("ff.w2"), vec![f, d]),
            (p("ff.b2"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.gamma".to_string(), vec![d]),
        ("ln_f.beta".to_string(), vec![d]),
        ("out.w".to_string(), vec![d, v]),
        ("out.b".to_string(), vec![v]),
    ]);
    out
}

fn sinusoid_table<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = T::c(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, d], data).expect("table shape")
}

fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

impl<T: Real> DecisionModel<T> {
    /// Seeded initialization: normal(0, 0.02) weights, zero biases, unit
    /// layer-norm scales.
    pub fn init(k: usize, hp: Hyperparams, seed: u64) -> Result<Self, DecisionError> {
        hp.validate()?;
        if k < 2 {
            return Err(DecisionError::InvalidHyperparams(format!(
                "alphabet size {k} < 2"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in param_layout(k, &hp) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gamma") {
                vec![T::one(); n]
            } else if name.ends_with(".beta") || shape.len() == 1 {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::c(normal.sample(&mut rng))).collect()
            };
            params.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Ok(Self {
            k,
            hp,
            names,
            params,
            positions: sinusoid_table(hp.max_len, hp.d_model),
        })
    }

    fn from_parts(
        k: usize,
        hp: Hyperparams,
        named: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, DecisionError> {
        hp.validate()?;
        let layout = param_layout(k, &hp);
        if layout.len() != named.len() {
            return Err(DecisionError::Format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(DecisionError::Format(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self {
            k,
            hp,
            names,
            params,
            positions: sinusoid_table(hp.max_len, hp.d_model),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bos(&self) -> usize {
        self.k
    }

    pub fn sep(&self) -> usize {
        self.k + 1
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> DecisionModel<U> {
        DecisionModel {
            k: self.k,
            hp: self.hp,
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            positions: self.positions.cast(),
        }
    }

    /// Input layout `[BOS, guide…, SEP, prefix…]`.
    pub fn layout(&self, guide: &[usize], prefix: &[usize]) -> Result<Vec<usize>, DecisionError> {
        if let Some(&id) = guide.iter().chain(prefix).find(|&&id| id >= self.k) {
            return Err(DecisionError::TokenOutOfRange { id, k: self.k });
        }
        let len = guide.len() + prefix.len() + 2;
        if len > self.hp.max_len {
            return Err(DecisionError::TooLong {
                len,
                limit: self.hp.max_len,
            });
        }
        let mut seq = Vec::with_capacity(len);
        seq.push(self.bos());
        seq.extend_from_slice(guide);
        seq.push(self.sep());
        seq.extend_from_slice(prefix);
        Ok(seq)
    }

    /// Pushes the parameters as graph leaves, in [`Self::names`] order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Logits (`(prefix + 1) × (K + 2)`) of the rows predicting response
    /// tokens `1..=prefix.len() + 1`, computed from bound parameters `vars`.
    pub fn forward_vars(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        guide: &[usize],
        prefix: &[usize],
    ) -> Result<Var, DecisionError> {
        let tokens = self.layout(guide, prefix)?;
        let len = tokens.len();
        let d = self.hp.d_model;
        let p = self.hp.dropout;
        let segments: Vec<usize> = (0..len).map(|i| usize::from(i > guide.len())).collect();

        let tok = g.embedding(vars[0], &tokens)?;
        let seg = g.embedding(vars[1], &segments)?;
        let pos = g.constant(Tensor::new(
            vec![len, d],
            self.positions.data()[..len * d].to_vec(),
        )?);
        let h = g.add(tok, seg)?;
        let h = g.add(h, pos)?;
        let mut h = g.dropout(h, p)?;
        let mask = causal_mask::<T>(len);
        for layer in 0..self.hp.n_layers {
            let b = |j: usize| vars[2 + layer * PER_LAYER + j];
            let a = g.layer_norm(h, b(0), b(1))?;
            let q = linear(g, a, b(2), b(3))?;
            let k = g.matmul(a, b(4))?;
            let v = linear(g, a, b(5), b(6))?;
            let att = g.attention(q, k, v, self.hp.n_heads, &mask)?;
            let o = linear(g, att, b(7), b(8))?;
            let o = g.dropout(o, p)?;
            h = g.add(h, o)?;
            let f = g.layer_norm(h, b(9), b(10))?;
            let f = linear(g, f, b(11), b(12))?;
            let f = g.gelu(f);
            let f = linear(g, f, b(13), b(14))?;
            let f = g.dropout(f, p)?;
            h = g.add(h, f)?;
        }
        let tail = 2 + self.hp.n_layers * PER_LAYER;
        let h = g.layer_norm(h, vars[tail], vars[tail + 1])?;
        let rows = g.slice_rows(h, guide.len() + 1, prefix.len() + 1)?;
        Ok(linear(g, rows, vars[tail + 2], vars[tail + 3])?)
    }

    /// Evaluation-mode logits; see [`Self::forward_vars`].
    pub fn logits(&self, guide: &[usize], prefix: &[usize]) -> Result<Tensor<T>, DecisionError> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let out = self.forward_vars(&mut g, &vars, guide, prefix)?;
        Ok(g.value(out).clone())
    }

    fn bind_constants(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Distribution over the `K` symbols for the next response token.
    pub fn next_distribution(
        &self,
        guide: &[usize],
        prefix: &[usize],
    ) -> Result<Vec<f64>, DecisionError> {
        let logits = self.logits(guide, prefix)?;
        let (rows, cols) = logits.dims2();
        let last: Vec<f64> = logits.data()[(rows - 1) * cols..]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        Ok(softmax_prefix(&last, self.k))
    }

    pub fn generate(
        &self,
        guide: &TokenSequence,
        cfg: &GenerationConfig,
    ) -> Result<TokenSequence, DecisionError> {
        Ok(self.generate_with_trace(guide, cfg)?.0)
    }

    /// Autoregressive top-p generation, also returning every draw.
    pub fn generate_with_trace(
        &self,
        guide: &TokenSequence,
        cfg: &GenerationConfig,
    ) -> Result<(TokenSequence, Vec<NucleusDraw>), DecisionError> {
        if guide.k() != self.k {
            return Err(DecisionError::AlphabetMismatch {
                model: self.k,
                input: guide.k(),
            });
        }
        let allowed = match (cfg.constrained, &cfg.corpus_labels) {
            (true, None) => {
                return Err(DecisionError::InvalidGeneration(
                    "constrained generation needs corpus labels".into(),
                ))
            }
            (true, Some(labels)) => Some(labels),
            (false, _) => None,
        };
        let n = cfg.output_length.unwrap_or(guide.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::with_capacity(n);
        let mut trace = Vec::with_capacity(n);
        for _ in 0..n {
            let dist = self.next_distribution(guide.ids(), &out)?;
            let draw = sample_top_p_traced(&dist, cfg.top_p, allowed, &mut rng)?;
            out.push(draw.token);
            trace.push(draw);
        }
        Ok((TokenSequence::new(out, self.k)?, trace))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], DecisionError> {
    let mut a = [0u8; N];
    r.read_exact(&mut a)
        .map_err(|_| DecisionError::Format("checkpoint truncated".into()))?;
    Ok(a)
}

fn take_u32(r: &mut &[u8]) -> Result<usize, DecisionError> {
    Ok(u32::from_le_bytes(take(r)?) as usize)
}

impl DecisionModel<f32> {
    /// `STLM`, version u16, hyperparameters (n_layers, d_model, n_heads,
    /// d_ff as u32, dropout f32, max_len u32), K u32, tensor count u32, then
    /// per tensor: name (u32 length + UTF-8), rank u32, dims u32, f32 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 4 + 1024);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, self.hp.n_layers);
        put_u32(&mut out, self.hp.d_model);
        put_u32(&mut out, self.hp.n_heads);
        put_u32(&mut out, self.hp.d_ff);
        out.extend_from_slice(&(self.hp.dropout as f32).to_le_bytes());
        put_u32(&mut out, self.hp.max_len);
        put_u32(&mut out, self.k);
        put_u32(&mut out, self.params.len());
        for (name, t) in self.names.iter().zip(&self.params) {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &dim in t.shape() {
                put_u32(&mut out, dim);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, DecisionError> {
        let r = &mut bytes;
        let magic: [u8; 4] = take(r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(DecisionError::Format(format!(
                "bad checkpoint magic {magic:?}"
            )));
        }
        let version = u16::from_le_bytes(take(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(DecisionError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_layers = take_u32(r)?;
        let d_model = take_u32(r)?;
        let n_heads = take_u32(r)?;
        let d_ff = take_u32(r)?;
        let dropout = f32::from_le_bytes(take(r)?) as f64;
        let max_len = take_u32(r)?;
        let hp = Hyperparams {
            n_layers,
            d_model,
            n_heads,
            d_ff,
            dropout,
            max_len,
        };
        let k = take_u32(r)?;
        let count = take_u32(r)?;
        let mut named = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = take_u32(r)?;
            if len > r.len() {
                return Err(DecisionError::Format("checkpoint truncated".into()));
            }
            let (name, rest) = r.split_at(len);
            let name = String::from_utf8(name.to_vec())
                .map_err(|_| DecisionError::Format("parameter name is not UTF-8".into()))?;
            *r = rest;
            let rank = take_u32(r)?;
            let shape = (0..rank)
                .map(|_| take_u32(r))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            if n * 4 > r.len() {
                return Err(DecisionError::Format(format!("tensor {name} truncated")));
            }
            let data = (0..n)
                .map(|_| take(r).map(f32::from_le_bytes))
                .collect::<Result<Vec<_>, _>>()?;
            named.push((name, Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(DecisionError::Format(format!(
                "{} trailing bytes in checkpoint",
                r.len()
            )));
        }
        Self::from_parts(k, hp, named)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DecisionError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| DecisionError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DecisionError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DecisionError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Hyperparams {
        Hyperparams {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 24,
            dropout: 0.0,
            max_len: 64,
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = DecisionModel::<f32>::init(8, tiny(), 3).unwrap();
        assert_eq!(a, DecisionModel::<f32>::init(8, tiny(), 3).unwrap());
        assert_ne!(a, DecisionModel::<f32>::init(8, tiny(), 4).unwrap());
        assert!(a.is_finite());
        let gamma = a
            .names()
            .iter()
            .position(|n| n == "blocks.0.ln1.gamma")
            .unwrap();
        assert!(a.params()[gamma].data().iter().all(|&v| v == 1.0));
        let tok = &a.params()[0];
        assert_eq!(tok.shape(), &[10, 16]);
        let n = tok.len() as f64;
        let var = tok.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - INIT_STD).abs() < 0.005, "{}", var.sqrt());
    }

    #[test]
    fn hyperparameter_validation() {
        assert_eq!(Hyperparams::full_scale().head_dim(), 64);
        assert_eq!(Hyperparams::desk().head_dim(), 16);
        let bad = Hyperparams {
            d_model: 10,
            n_heads: 3,
            ..tiny()
        };
        assert!(matches!(
            DecisionModel::<f32>::init(8, bad, 0),
            Err(DecisionError::InvalidHyperparams(_))
        ));
        assert!(DecisionModel::<f32>::init(1, tiny(), 0).is_err());
    }

    #[test]
    fn layout_and_row_counts() {
        let m = DecisionModel::<f32>::init(8, tiny(), 0).unwrap();
        assert_eq!(m.layout(&[1, 2], &[3]).unwrap(), vec![8, 1, 2, 9, 3]);
        assert_eq!(m.logits(&[1, 2, 3], &[]).unwrap().shape(), &[1, 10]);
        assert_eq!(m.logits(&[1, 2, 3], &[4, 5]).unwrap().shape(), &[3, 10]);
        assert!(matches!(
            m.logits(&[8], &[]),
            Err(DecisionError::TokenOutOfRange { id: 8, k: 8 })
        ));
        let long = vec![0; 63];
        assert!(matches!(
            m.logits(&long, &[]),
            Err(DecisionError::TooLong { len: 65, limit: 64 })
        ));
    }

    #[test]
    fn logits_reproducible_and_causal() {
        let m = DecisionModel::<f32>::init(8, tiny(), 1).unwrap();
        let guide = [1, 5, 2, 7, 0];
        let a = m.logits(&guide, &[3, 3, 4, 6]).unwrap();
        assert_eq!(a, m.logits(&guide, &[3, 3, 4, 6]).unwrap());
        let b = m.logits(&guide, &[3, 3, 1, 1]).unwrap();
        let cols = a.dims2().1;
        // rows 0..=2 see prefix tokens 0..2 only
        assert_eq!(a.data()[..3 * cols], b.data()[..3 * cols]);
        assert_ne!(a.data()[3 * cols..], b.data()[3 * cols..]);
        let c = m.logits(&[1, 5, 2, 7, 1], &[3, 3, 4, 6]).unwrap();
        assert_ne!(a.row(0), c.row(0));
    }

    #[test]
    fn generation_contracts() {
        let m = DecisionModel::<f32>::init(8, tiny(), 2).unwrap();
        let guide = TokenSequence::new(vec![1, 2, 3, 4, 5, 6, 7], 8).unwrap();
        let cfg = GenerationConfig::new(0.8, 11);
        let y = m.generate(&guide, &cfg).unwrap();
        assert_eq!(y.len(), guide.len());
        assert_eq!(y, m.generate(&guide, &cfg).unwrap());
        let short = GenerationConfig {
            output_length: Some(3),
            ..cfg.clone()
        };
        assert_eq!(m.generate(&guide, &short).unwrap().len(), 3);

        let (y, trace) = m
            .generate_with_trace(&guide, &cfg.clone().constrained_to([5].into()))
            .unwrap();
        for (t, d) in y.ids().iter().zip(&trace) {
            assert!(*t < 8);
            if d.nucleus.contains(&5) {
                assert_eq!(*t, 5);
            }
        }
        let missing = GenerationConfig {
            constrained: true,
            ..cfg
        };
        assert!(m.generate(&guide, &missing).is_err());
        let wrong_k = TokenSequence::new(vec![1], 16).unwrap();
        assert!(m
            .generate(&wrong_k, &GenerationConfig::new(0.8, 0))
            .is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DecisionModel::<f32>::init(6, tiny(), 5).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"STLM");
        let back = DecisionModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(DecisionModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DecisionModel::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(DecisionModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn f32_and_f64_models_agree() {
        let m = DecisionModel::<f64>::init(8, tiny(), 9).unwrap();
        let m32: DecisionModel<f32> = m.cast();
        let a = m.logits(&[1, 2, 3], &[4, 5]).unwrap();
        let b = m32.logits(&[1, 2, 3], &[4, 5]).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}
