//! TF-IDF bag-of-words features with logistic-regression and Gaussian naive Bayes classifiers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::logistic;

/// Sparse feature vector as sorted `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Smoothed TF-IDF with raw term counts and L2-normalized rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TfIdf {
    index: HashMap<String, usize>,
    terms: Vec<String>,
    idf: Vec<f64>,
}

impl TfIdf {
    /// Keeps the `max_features` most frequent terms (ties lexicographic).
    pub fn fit<S: AsRef<str>>(docs: &[Vec<S>], max_features: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("TF-IDF needs at least one document".into()));
        }
        let mut freq: HashMap<&str, (usize, usize)> = HashMap::new();
        for doc in docs {
            let mut seen = std::collections::HashSet::new();
            for t in doc {
                let e = freq.entry(t.as_ref()).or_default();
                e.0 += 1;
                if seen.insert(t.as_ref()) {
                    e.1 += 1;
                }
            }
        }
        let mut ranked: Vec<_> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_features);
        let n = docs.len() as f64;
        let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let idf = ranked.iter().map(|(_, (_, df))| ((1.0 + n) / (1.0 + *df as f64)).ln() + 1.0).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(TfIdf { index, terms, idf })
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for t in doc {
            if let Some(&i) = self.index.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        v.sort_by_key(|e| e.0);
        let norm = v.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|e| e.1 /= norm);
        }
        v
    }
}

fn check_binary(labels: &[bool], n: usize) -> Result<()> {
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidInput("feature and label counts differ or are zero".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::InvalidInput("training set contains a single class".into()));
    }
    Ok(())
}

fn dot(w: &[f64], x: &SparseVec) -> f64 {
    x.iter().map(|&(i, v)| w[i] * v).sum()
}

/// Binary logistic regression minimizing `Σ logloss + ½·l2·‖w‖²` (intercept unpenalized).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticRegression {
    pub const DEFAULT_L2: f64 = 1.0;

    /// Full-batch Adam on the convex objective until the gradient norm is tiny.
    pub fn fit(x: &[SparseVec], y: &[bool], dim: usize, l2: f64) -> Result<Self> {
        check_binary(y, x.len())?;
        let n = dim + 1;
        let mut theta = vec![0.0; n];
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let (lr, b1, b2, eps) = (0.05, 0.9f64, 0.999f64, 1e-8);
        let tol = 1e-6 * x.len() as f64;
        for step in 1..=5000 {
            let mut grad: Vec<f64> = theta[..dim].iter().map(|w| l2 * w).collect();
            grad.push(0.0);
            for (xi, &yi) in x.iter().zip(y) {
                let r = logistic(dot(&theta, xi) + theta[dim]) - f64::from(u8::from(yi));
                for &(j, val) in xi {
                    grad[j] += r * val;
                }
                grad[dim] += r;
            }
            if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < tol {
                break;
            }
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            for j in 0..n {
                m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                theta[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        let intercept = theta.pop().expect("intercept slot");
        Ok(LogisticRegression {
            weights: theta,
            intercept,
        })
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &SparseVec) -> f64 {
        logistic(dot(&self.weights, x) + self.intercept)
    }

    pub fn predict(&self, x: &SparseVec) -> bool {
        self.predict_proba(x) >= 0.5
    }
}

/// Gaussian naive Bayes with per-class feature means and floored variances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Index 0 = negative class, 1 = positive.
    pub log_prior: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    /// Log-likelihood of the all-zero vector per class, cached for sparse scoring.
    zero_loglik: [f64; 2],
}

impl GaussianNb {
    pub const VAR_FLOOR: f64 = 1e-9;

    pub fn fit(x: &[SparseVec], y: &[bool], dim: usize) -> Result<Self> {
        check_binary(y, x.len())?;
        let mut counts = [0.0f64; 2];
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut sq = [vec![0.0; dim], vec![0.0; dim]];
        for (xi, &yi) in x.iter().zip(y) {
            let c = usize::from(yi);
            counts[c] += 1.0;
            for &(j, v) in xi {
                sums[c][j] += v;
                sq[c][j] += v * v;
            }
        }
        let total = counts[0] + counts[1];
        let mut means = [vec![0.0; dim], vec![0.0; dim]];
        let mut variances = [vec![0.0; dim], vec![0.0; dim]];
        for c in 0..2 {
            for j in 0..dim {
                let mu = sums[c][j] / counts[c];
                means[c][j] = mu;
                variances[c][j] = (sq[c][j] / counts[c] - mu * mu).max(Self::VAR_FLOOR);
            }
        }
        let zero_loglik = [0, 1].map(|c| {
            means[c]
                .iter()
                .zip(&variances[c])
                .map(|(mu, var)| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - mu * mu / (2.0 * var))
                .sum()
        });
        Ok(GaussianNb {
            log_prior: [(counts[0] / total).ln(), (counts[1] / total).ln()],
            means,
            variances,
            zero_loglik,
        })
    }

    /// Joint log-likelihood per class.
    pub fn log_joint(&self, x: &SparseVec) -> [f64; 2] {
        [0, 1].map(|c| {
            let mut ll = self.log_prior[c] + self.zero_loglik[c];
            for &(j, v) in x {
                let (mu, var) = (self.means[c][j], self.variances[c][j]);
                ll += (mu * mu - (v - mu) * (v - mu)) / (2.0 * var);
            }
            ll
        })
    }

    pub fn predict(&self, x: &SparseVec) -> bool {
        let [neg, pos] = self.log_joint(x);
        pos > neg
    }
}
