use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;
/// Silhouette scores are computed on at most this many points.
pub const SILHOUETTE_SAMPLE: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Within-cluster sum of squares after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no points to cluster".into()))?;
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points must share one non-zero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }
    Ok(dim)
}

/// Greedy k-means++ seeding: the first centre uniformly, then `2 + ⌊ln k⌋` candidates drawn
/// proportional to squared distance, keeping the one that most lowers the potential.
fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in d2.iter().enumerate() {
                    if r < *d {
                        pick = i;
                        break;
                    }
                    r -= d;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = d2.iter().zip(points).map(|(d, p)| d.min(dist2(p, &points[candidate]))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, candidate, updated));
            }
        }
        let (_, chosen, updated) = best.expect("at least two trials");
        centroids.push(points[chosen].clone());
        d2 = updated;
    }
    centroids
}

/// Index of the nearest centroid (lowest index on ties) and the squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster is moved onto the point
/// farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KMeansResult> {
    let dim = check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!("k = {k} must be in 1..={}", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut distances = vec![0.0; points.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            changed |= assignments[i] != c;
            assignments[i] = c;
            distances[i] = d;
        }
        history.push(distances.iter().sum());
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)))
                .expect("k ≤ n leaves a free point");
            taken[far] = true;
            log::debug!("cluster {c} emptied; reseeding at point {far}");
            centroids[c] = points[far].clone();
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &c)| dist2(p, &centroids[c])).sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
        converged,
    })
}

/// Mean silhouette coefficient; points alone in their cluster score 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    check_points(points)?;
    if assignments.len() != points.len() {
        return Err(Error::Contract("one assignment per point required".into()));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two non-empty clusters".into()));
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (q, &c) in points.iter().zip(assignments) {
            sums[c] += dist2(p, q).sqrt();
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KSelection {
    pub best_k: usize,
    /// `(k, silhouette)` for every candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Picks k by mean silhouette over `candidates` (ties → smallest k). Uses a seeded sample of
/// at most [`SILHOUETTE_SAMPLE`] points for scoring.
pub fn choose_k(points: &[Vec<f64>], candidates: impl IntoIterator<Item = usize>, seed: u64) -> Result<KSelection> {
    check_points(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5113_0e77);
    let idx: Vec<usize> = if points.len() > SILHOUETTE_SAMPLE {
        let mut v = sample(&mut rng, points.len(), SILHOUETTE_SAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..points.len()).collect()
    };
    let sampled: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
    let mut scores = Vec::new();
    for k in candidates {
        if k < 2 || k >= points.len() {
            continue;
        }
        let fit = kmeans(points, k, DEFAULT_MAX_ITER, seed)?;
        let labels: Vec<usize> = idx.iter().map(|&i| fit.assignments[i]).collect();
        let s = silhouette(&sampled, &labels).unwrap_or(-1.0);
        scores.push((k, s));
    }
    let best_k = scores
        .iter()
        .fold(None::<(usize, f64)>, |best, &(k, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidInput("no candidate k in 2..N".into()))?;
    Ok(KSelection { best_k, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)] {
            for i in 0..10 {
                let t = i as f64 * 0.7;
                pts.push(vec![cx + 0.3 * t.cos(), cy + 0.3 * t.sin()]);
            }
        }
        pts
    }

    #[test]
    fn separates_blobs() {
        let r = kmeans(&blobs(), 3, DEFAULT_MAX_ITER, 4).unwrap();
        assert!(r.converged);
        for b in 0..3 {
            let c = r.assignments[b * 10];
            assert!(r.assignments[b * 10..b * 10 + 10].iter().all(|&a| a == c));
        }
        assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        assert!((r.inertia - r.inertia_history.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn duplicate_points_keep_every_cluster_populated() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let r = kmeans(&pts, 3, 50, 1).unwrap();
        let mut used: Vec<usize> = r.assignments.clone();
        used.sort_unstable();
        used.dedup();
        assert!(used.len() >= 2);
    }

    #[test]
    fn silhouette_prefers_true_k() {
        let sel = choose_k(&blobs(), 2..=6, 0).unwrap();
        assert_eq!(sel.best_k, 3);
        assert_eq!(sel.scores.len(), 5);
    }

    #[test]
    fn silhouette_of_two_pairs() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        // a = 1, b = mean(10, 11) or (9, 10) → per point (b − a)/b.
        let expect = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
        assert!((silhouette(&pts, &[0, 0, 1, 1]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        assert!(kmeans(&blobs(), 0, 10, 0).is_err());
        assert!(kmeans(&blobs(), 31, 10, 0).is_err());
    }
}
