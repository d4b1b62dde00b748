use std::collections::BTreeSet;

use rand::Rng;

use super::DecisionError;

/// Slack on the cumulative mass when closing the nucleus.
pub const NUCLEUS_TOLERANCE: f64 = 1e-9;

fn validate(dist: &[f64]) -> Result<(), DecisionError> {
    if dist.is_empty() {
        return Err(DecisionError::InvalidDistribution(
            "empty distribution".into(),
        ));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(DecisionError::InvalidDistribution(format!(
            "entry {bad} is not a probability"
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(DecisionError::InvalidDistribution(format!(
            "mass {total} != 1"
        )));
    }
    Ok(())
}

/// Smallest set of ids, by descending probability and then ascending id,
/// whose cumulative mass reaches `p`. Returned in that order.
pub fn nucleus(dist: &[f64], p: f64) -> Result<Vec<usize>, DecisionError> {
    validate(dist)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(DecisionError::InvalidDistribution(format!(
            "top-p {p} outside (0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut out = Vec::new();
    for id in order {
        out.push(id);
        cum += dist[id];
        if cum >= p - NUCLEUS_TOLERANCE {
            break;
        }
    }
    Ok(out)
}

/// Draws from `support` with probability proportional to `dist`.
fn draw<R: Rng + ?Sized>(dist: &[f64], support: &[usize], rng: &mut R) -> usize {
    let total: f64 = support.iter().map(|&i| dist[i]).sum();
    if total <= 0.0 {
        return support[rng.random_range(0..support.len())];
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &i in support {
        acc += dist[i];
        if acc > target {
            return i;
        }
    }
    *support.last().expect("non-empty support")
}

/// Outcome of one nucleus draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NucleusDraw {
    pub token: usize,
    pub nucleus: Vec<usize>,
    /// Whether the draw was restricted to `nucleus ∩ allowed`.
    pub constrained: bool,
}

/// Top-p sampling. With `allowed`, draws from the part of the nucleus inside
/// `allowed`; if they do not intersect, draws from the whole nucleus.
pub fn sample_top_p_traced<R: Rng + ?Sized>(
    dist: &[f64],
    p: f64,
    allowed: Option<&BTreeSet<usize>>,
    rng: &mut R,
) -> Result<NucleusDraw, DecisionError> {
    let nuc = nucleus(dist, p)?;
    let restricted: Vec<usize> = match allowed {
        Some(set) => nuc.iter().copied().filter(|id| set.contains(id)).collect(),
        None => Vec::new(),
    };
    let constrained = !restricted.is_empty();
    let support = if constrained { &restricted } else { &nuc };
    let token = draw(dist, support, rng);
    Ok(NucleusDraw {
        token,
        nucleus: nuc,
        constrained,
    })
}

pub fn sample_top_p<R: Rng + ?Sized>(
    dist: &[f64],
    p: f64,
    allowed: Option<&BTreeSet<usize>>,
    rng: &mut R,
) -> Result<usize, DecisionError> {
    Ok(sample_top_p_traced(dist, p, allowed, rng)?.token)
}

/// Softmax over the first `k` logits, in `f64`.
pub fn softmax_prefix(logits: &[f64], k: usize) -> Vec<f64> {
    let row = &logits[..k];
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIST: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

    #[test]
    fn nucleus_examples() {
        assert_eq!(nucleus(&DIST, 0.8).unwrap(), vec![0, 1]);
        assert_eq!(nucleus(&DIST, 0.5).unwrap(), vec![0]);
        assert_eq!(nucleus(&DIST, 0.81).unwrap(), vec![0, 1, 2]);
        assert_eq!(nucleus(&DIST, 1.0).unwrap(), vec![0, 1, 2, 3]);
        // ties broken by lower id
        assert_eq!(nucleus(&[0.25; 4], 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_top_p(&[0.5, 0.4], 0.8, None, &mut rng).is_err());
        assert!(sample_top_p(&[1.5, -0.5], 0.8, None, &mut rng).is_err());
        assert!(sample_top_p(&DIST, 0.0, None, &mut rng).is_err());
        assert!(sample_top_p(&DIST, 1.2, None, &mut rng).is_err());
        assert!(sample_top_p(&[], 0.5, None, &mut rng).is_err());
    }

    #[test]
    fn constrained_and_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let allowed: BTreeSet<usize> = [1, 3].into();
        for _ in 0..500 {
            assert_eq!(
                sample_top_p(&DIST, 0.8, Some(&allowed), &mut rng).unwrap(),
                1
            );
        }
        let outside: BTreeSet<usize> = [3].into();
        for _ in 0..500 {
            let d = sample_top_p_traced(&DIST, 0.8, Some(&outside), &mut rng).unwrap();
            assert!(!d.constrained);
            assert!(d.token < 2);
        }
    }

    #[test]
    fn full_nucleus_matches_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_top_p(&DIST, 1.0, None, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(DIST) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn softmax_prefix_ignores_tail() {
        let d = softmax_prefix(&[0.0, 0.0, 100.0], 2);
        assert_eq!(d, vec![0.5, 0.5]);
    }

    fn arb_dist() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 1..20).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn nucleus_is_minimal_prefix(dist in arb_dist(), p in 0.01f64..=1.0) {
            let nuc = nucleus(&dist, p).unwrap();
            let mass: f64 = nuc.iter().map(|&i| dist[i]).sum();
            prop_assert!(mass >= p - 1e-6);
            let without_last: f64 = nuc[..nuc.len() - 1].iter().map(|&i| dist[i]).sum();
            prop_assert!(without_last < p);
            let min_in = nuc.iter().map(|&i| dist[i]).fold(f64::INFINITY, f64::min);
            for i in (0..dist.len()).filter(|i| !nuc.contains(i)) {
                prop_assert!(dist[i] <= min_in);
            }
        }

        #[test]
        fn draws_stay_in_support(dist in arb_dist(), p in 0.01f64..=1.0, seed in 0u64..100,
                                 allowed in proptest::collection::btree_set(0usize..20, 0..5)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = sample_top_p_traced(&dist, p, Some(&allowed), &mut rng).unwrap();
            prop_assert!(d.nucleus.contains(&d.token));
            let hits = d.nucleus.iter().any(|t| allowed.contains(t));
            prop_assert_eq!(hits, d.constrained);
            if hits {
                prop_assert!(allowed.contains(&d.token));
            }
        }
    }
}
