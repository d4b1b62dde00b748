use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use super::EvalError;
use crate::perception::TokenSequence;

fn check_aligned(a: &TokenSequence, b: &TokenSequence) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.k() != b.k() {
        return Err(EvalError::AlphabetMismatch {
            left: a.k(),
            right: b.k(),
        });
    }
    Ok(())
}

/// True positive percentage: share of positions where `pred` equals `gt`, in percent.
pub fn tpp(pred: &TokenSequence, gt: &TokenSequence) -> Result<f64, EvalError> {
    check_aligned(pred, gt)?;
    if gt.is_empty() {
        return Err(EvalError::Empty("ground truth"));
    }
    let hits = pred
        .ids()
        .iter()
        .zip(gt.ids())
        .filter(|(a, b)| a == b)
        .count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Length of the common run starting at every aligned position `i`, computed
/// right to left: `lcp[i] = lcp[i + 1] + 1` when `s[i] == t[i]`, else 0.
pub fn lcp_profile(s: &TokenSequence, t: &TokenSequence) -> Result<Vec<usize>, EvalError> {
    if s.len() != t.len() {
        return Err(EvalError::LengthMismatch {
            left: s.len(),
            right: t.len(),
        });
    }
    Ok(lcp_ids(s.ids(), t.ids()))
}

pub(crate) fn lcp_ids(s: &[usize], t: &[usize]) -> Vec<usize> {
    let n = s.len();
    let mut out = vec![0; n];
    let mut run = 0;
    for i in (0..n).rev() {
        run = if s[i] == t[i] { run + 1 } else { 0 };
        out[i] = run;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Entropy {
    pub bits: f64,
    /// `bits / log2(K)`.
    pub normalized: f64,
}

/// Shannon entropy (base 2) of the empirical token distribution.
pub fn entropy(seq: &TokenSequence) -> Result<Entropy, EvalError> {
    if seq.is_empty() {
        return Err(EvalError::Empty("sequence"));
    }
    let mut counts = vec![0usize; seq.k()];
    for &id in seq.ids() {
        counts[id] += 1;
    }
    let n = seq.len() as f64;
    let bits = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    let max = (seq.k() as f64).log2();
    Ok(Entropy {
        bits,
        normalized: if max > 0.0 { bits / max } else { 0.0 },
    })
}

/// Uniform random tokens over `[0, k)` or over `allowed` when given.
pub fn random_baseline(
    length: usize,
    k: usize,
    allowed: Option<&BTreeSet<usize>>,
    seed: u64,
) -> Result<TokenSequence, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = match allowed {
        Some(set) => {
            if set.is_empty() {
                return Err(EvalError::Empty("allowed label set"));
            }
            if let Some(&bad) = set.iter().find(|&&id| id >= k) {
                return Err(EvalError::LabelOutOfRange { id: bad, k });
            }
            let pool: Vec<usize> = set.iter().copied().collect();
            (0..length)
                .map(|_| *pool.choose(&mut rng).expect("non-empty pool"))
                .collect()
        }
        None => (0..length).map(|_| rng.random_range(0..k)).collect(),
    };
    Ok(TokenSequence::new(ids, k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MannWhitney {
    /// `R_a - n_a (n_a + 1) / 2`: pairs where the `a` value exceeds the `b`
    /// value, ties counting one half.
    pub u: f64,
    /// Two-sided p-value from the tie- and continuity-corrected normal
    /// approximation.
    pub p: f64,
}

/// Midranks (1-based) of `values`.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// Mann-Whitney U test. The normal approximation is meant for samples of
/// eight or more; smaller samples are still accepted.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("Mann-Whitney sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("Mann-Whitney sample"));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let joined: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&joined);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0 });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(MannWhitney { u, p })
}
