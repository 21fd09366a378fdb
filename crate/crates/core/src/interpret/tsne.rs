//! Exact (O(N²)) t-SNE with early exaggeration, momentum and per-coordinate gains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};

const PERPLEXITY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 200;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` scales the step with the dataset: `max(N / (4 · early_exaggeration), 50)`.
    /// A fixed 200 overshoots on a few dozen points and can tear duplicates apart.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// KL divergence is recorded every this many iterations (and at both ends).
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            kl_every: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))`; iteration 0 is the initial layout.
    pub kl_history: Vec<(usize, f64)>,
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-stochastic `p_{j|i}` (row-major `N × N`, zero diagonal) whose rows each have the
/// requested perplexity, found by bisection on the Gaussian precision.
pub fn conditional_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    if !(perplexity > 0.0) {
        return Err(Error::InvalidConfig("perplexity must be positive".into()));
    }
    if (n as f64) < 3.0 * perplexity {
        return Err(Error::InvalidInput(format!(
            "t-SNE with perplexity {perplexity} needs at least {} points, got {n}; use a perplexity of at most {:.1}",
            (3.0 * perplexity).ceil(),
            n as f64 / 3.0
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let d = squared_distances(points);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut probs = vec![0.0; n];
        // Shifting by the nearest-neighbour distance keeps the largest weight at exp(0).
        let dmin = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        for _ in 0..BISECTION_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-beta * (row[j] - dmin)).exp() };
                sum += probs[j];
                weighted += probs[j] * (row[j] - dmin);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for v in probs.iter_mut() {
                *v /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < PERPLEXITY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let s: f64 = probs.iter().sum();
        for (dst, v) in p[i * n..(i + 1) * n].iter_mut().zip(&probs) {
            *dst = v / s;
        }
    }
    Ok(p)
}

/// Symmetric joint probabilities `(p_{j|i} + p_{i|j}) / 2N`, floored away from zero.
pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let cond = conditional_probabilities(points, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    Ok(p)
}

/// KL(P‖Q) for a layout `y` under joint probabilities `p`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / z).max(P_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Embeds `points` in two dimensions.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = points.len();
    let learning_rate = cfg.learning_rate.unwrap_or((n as f64 / (4.0 * cfg.early_exaggeration)).max(50.0));
    if !(learning_rate > 0.0) || cfg.early_exaggeration < 1.0 || cfg.kl_every == 0 {
        return Err(Error::InvalidConfig("invalid t-SNE optimizer settings".into()));
    }
    let p = joint_probabilities(points, cfg.perplexity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = vec![(0, kl_divergence(&p, &y))];
    let mut num = vec![0.0; n * n];
    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - w / z) * w;
                grad[0] += 4.0 * m * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                gains[i][d] = if (grad[d] > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - learning_rate * gains[i][d] * grad[d];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        for yi in y.iter_mut() {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE layout at iteration {}", iter + 1)));
        }
        let done = iter + 1;
        if done % cfg.kl_every == 0 || done == cfg.iterations {
            kl_history.push((done, kl_divergence(&p, &y)));
        }
    }
    Ok(TsneResult { embedding: y, kl_history })
}
