//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PerceptionError;

pub const MAX_ITERATIONS: usize = 300;
/// Stop once the relative inertia decrease falls below this.
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub trace: Vec<f64>,
    /// Centroids chosen by k-means++ before any Lloyd step.
    pub initial_centroids: Vec<Vec<f64>>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(
    points: &[Vec<f64>],
    centroids: &[Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (k, d) = nearest(p, centroids);
        labels[i] = k;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn distinct_rows(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
                .collect()
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen =
            pick.expect("a point with positive distance exists while distinct rows remain");
        let c = points[chosen].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `k` groups. Deterministic given `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, PerceptionError> {
    if k < 2 {
        return Err(PerceptionError::InvalidConfig(format!(
            "alphabet size {k} < 2"
        )));
    }
    let dim = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(PerceptionError::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
            context: "k-means input row".into(),
        });
    }
    let distinct = distinct_rows(points);
    if distinct < k {
        return Err(PerceptionError::TooFewDistinct { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = kmeans_pp(points, k, &mut rng);
    let mut centroids = initial.clone();
    let n = points.len();
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut inertia = assign(points, &centroids, &mut labels, &mut dists);
    let mut trace = vec![inertia];

    for _ in 0..MAX_ITERATIONS {
        if inertia == 0.0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // reseed empty clusters at the points farthest from their centroid
        let mut taken = vec![false; n];
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, sq_dist(&points[i], &next[labels[i]])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("more points than clusters");
            taken[far] = true;
            next[c] = points[far].clone();
        }

        let mut next_labels = vec![0; n];
        let next_inertia = assign(points, &next, &mut next_labels, &mut dists);
        if next_inertia > inertia {
            // rounding drift at convergence; keep the better iterate
            break;
        }
        let decrease = (inertia - next_inertia) / inertia;
        centroids = next;
        labels = next_labels;
        inertia = next_inertia;
        trace.push(inertia);
        if decrease < RELATIVE_TOLERANCE {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        inertia,
        trace,
        initial_centroids: initial,
    })
}

/// Sum of squared distances of every point to its nearest centroid.
pub fn inertia_of(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}
