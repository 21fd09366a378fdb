use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::explanation::{Explanation, FeatureWeight, Technique};
use crate::error::{Error, Result};

/// Ridge penalty of the surrogate fits.
pub const SURROGATE_L2: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Number of surrogate features kept.
    pub k: usize,
    /// Width of the kernel `exp(−d² / w²)` over cosine distance.
    pub kernel_width: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            k: 10,
            kernel_width: 0.25,
            seed: 0,
        }
    }
}

/// Maps token lists to per-class outputs (probabilities or activations).
pub type PredictFn<'a> = dyn Fn(&[Vec<String>]) -> Result<Vec<Vec<f64>>> + 'a;

/// Weighted ridge regression with an unpenalized intercept. Returns (coefficients, intercept).
fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], cols: &[usize], l2: f64) -> Result<(Vec<f64>, f64)> {
    let wsum: f64 = w.iter().sum();
    let p = cols.len();
    let x_mean: Vec<f64> = cols
        .iter()
        .map(|&j| x.iter().zip(w).map(|(r, wi)| wi * r[j]).sum::<f64>() / wsum)
        .collect();
    let y_mean = y.iter().zip(w).map(|(v, wi)| wi * v).sum::<f64>() / wsum;
    let mut a = DMatrix::<f64>::identity(p, p) * l2;
    let mut b = DVector::<f64>::zeros(p);
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let xc: Vec<f64> = cols.iter().zip(&x_mean).map(|(&j, m)| row[j] - m).collect();
        let yc = yi - y_mean;
        for r in 0..p {
            b[r] += wi * xc[r] * yc;
            for c in 0..p {
                a[(r, c)] += wi * xc[r] * xc[c];
            }
        }
    }
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::NonFinite("surrogate normal equations are not positive definite".into()))?
        .solve(&b);
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok((beta.iter().copied().collect(), intercept))
}

/// Local surrogate explanation of `predict` around `tokens` for output `target_class`.
///
/// Features are the distinct tokens; each perturbation removes a random subset of them.
pub fn lime_explain(predict: &PredictFn<'_>, tokens: &[String], target_class: usize, cfg: &LimeConfig) -> Result<Explanation> {
    if cfg.n_samples < 100 {
        return Err(Error::InvalidConfig(format!("LIME needs at least 100 samples, got {}", cfg.n_samples)));
    }
    if cfg.k == 0 || !(cfg.kernel_width > 0.0) {
        return Err(Error::InvalidConfig("LIME needs K ≥ 1 and a positive kernel width".into()));
    }
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot explain an empty text".into()));
    }
    let mut features: Vec<&str> = Vec::new();
    let mut feature_of: HashMap<&str, usize> = HashMap::new();
    let token_feature: Vec<usize> = tokens
        .iter()
        .map(|t| {
            *feature_of.entry(t.as_str()).or_insert_with(|| {
                features.push(t);
                features.len() - 1
            })
        })
        .collect();
    let d = features.len();
    let k = if cfg.k > d {
        if d == 1 {
            log::warn!("text has a single distinct token; reducing K from {} to 1", cfg.k);
        }
        d
    } else {
        cfg.k
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_samples);
    masks.push(vec![1.0; d]);
    while masks.len() < cfg.n_samples {
        let mut z = vec![1.0; d];
        let remove = rng.random_range(1..=d);
        for j in sample(&mut rng, d, remove) {
            z[j] = 0.0;
        }
        masks.push(z);
    }
    let texts: Vec<Vec<String>> = masks
        .iter()
        .map(|z| {
            tokens
                .iter()
                .zip(&token_feature)
                .filter(|(_, &f)| z[f] == 1.0)
                .map(|(t, _)| t.clone())
                .collect()
        })
        .collect();
    let outputs = predict(&texts)?;
    if outputs.len() != texts.len() || outputs.iter().any(|o| o.len() <= target_class) {
        return Err(Error::Contract("predict function returned the wrong number of outputs".into()));
    }
    let y: Vec<f64> = outputs.iter().map(|o| o[target_class]).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predict function output".into()));
    }
    let weights: Vec<f64> = masks
        .iter()
        .map(|z| {
            let on: f64 = z.iter().sum();
            let distance = if on == 0.0 { 1.0 } else { 1.0 - on / (on.sqrt() * (d as f64).sqrt()) };
            (-(distance * distance) / (cfg.kernel_width * cfg.kernel_width)).exp()
        })
        .collect();

    let all: Vec<usize> = (0..d).collect();
    let (full, _) = weighted_ridge(&masks, &y, &weights, &all, SURROGATE_L2)?;
    let mut ranked = all.clone();
    ranked.sort_by(|&a, &b| full[b].abs().total_cmp(&full[a].abs()).then(a.cmp(&b)));
    let selected: Vec<usize> = ranked[..k].to_vec();
    let (coef, intercept) = weighted_ridge(&masks, &y, &weights, &selected, SURROGATE_L2)?;

    let mut per_feature = vec![0.0; d];
    for (&j, &c) in selected.iter().zip(&coef) {
        per_feature[j] = c;
    }
    let mut feats: Vec<FeatureWeight> = selected
        .iter()
        .zip(&coef)
        .map(|(&j, &c)| FeatureWeight {
            token: features[j].to_string(),
            weight: c,
        })
        .collect();
    feats.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()).then_with(|| a.token.cmp(&b.token)));
    Ok(Explanation {
        technique: Technique::Lime,
        tokens: tokens.to_vec(),
        weights: token_feature.iter().map(|&f| per_feature[f]).collect(),
        target_class,
        probabilities: outputs[0].clone(),
        features: feats,
        intercept: Some(intercept),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn constant_model_has_zero_weights() {
        let predict = |texts: &[Vec<String>]| Ok(texts.iter().map(|_| vec![0.3, 0.7]).collect());
        let e = lime_explain(&predict, &toks("a man touched me on the bus"), 1, &LimeConfig::default()).unwrap();
        assert!(e.weights.iter().all(|w| w.abs() < 1e-6));
        assert!((e.intercept.unwrap() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn additive_model_is_recovered() {
        let predict = |texts: &[Vec<String>]| {
            Ok(texts
                .iter()
                .map(|t| {
                    let s = t.iter().map(|w| if w == "touched" { 0.5 } else if w == "bus" { -0.2 } else { 0.0 }).sum();
                    vec![s]
                })
                .collect())
        };
        let cfg = LimeConfig {
            k: 2,
            ..LimeConfig::default()
        };
        let e = lime_explain(&predict, &toks("a man touched me on the bus"), 0, &cfg).unwrap();
        assert_eq!(e.features[0].token, "touched");
        assert!((e.features[0].weight - 0.5).abs() < 1e-3);
        assert_eq!(e.features[1].token, "bus");
        assert_eq!(e.weights.iter().filter(|w| **w != 0.0).count(), 2);
    }

    #[test]
    fn single_token_reduces_k_and_rejects_few_samples() {
        let predict = |texts: &[Vec<String>]| Ok(texts.iter().map(|t| vec![t.len() as f64]).collect());
        let e = lime_explain(&predict, &toks("groped"), 0, &LimeConfig::default()).unwrap();
        assert_eq!(e.features.len(), 1);
        let cfg = LimeConfig {
            n_samples: 50,
            ..LimeConfig::default()
        };
        assert!(lime_explain(&predict, &toks("groped"), 0, &cfg).is_err());
    }

    #[test]
    fn seeded_runs_repeat() {
        let predict = |texts: &[Vec<String>]| Ok(texts.iter().map(|t| vec![(t.len() as f64).sin()]).collect());
        let t = toks("he stared and whistled at me near the market");
        let a = lime_explain(&predict, &t, 0, &LimeConfig::default()).unwrap();
        let b = lime_explain(&predict, &t, 0, &LimeConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
