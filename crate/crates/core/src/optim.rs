//! Adam optimization and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, ParamGrad};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// One bias-corrected Adam update of every parameter, in place.
///
/// Parameters without a gradient are treated as having a zero gradient, so their
/// moments still decay, as with a dense update.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for id in params.ids() {
        let n = params.get(id).len();
        if state.m[id.index()].len() != n {
            return Err(Error::Contract(format!("adam: moment shape mismatch for {}", params.name(id))));
        }
        if let Some(ParamGrad::Dense(g)) = grads.get(id) {
            if g.len() != n {
                return Err(Error::Contract(format!("adam: gradient shape mismatch for {}", params.name(id))));
            }
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for id in params.ids() {
        let i = id.index();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        m.iter_mut().for_each(|x| *x *= cfg.beta1);
        v.iter_mut().for_each(|x| *x *= cfg.beta2);
        match grads.get(id) {
            Some(ParamGrad::Dense(g)) => {
                for j in 0..g.len() {
                    m[j] += (1.0 - cfg.beta1) * g[j];
                    v[j] += (1.0 - cfg.beta2) * g[j] * g[j];
                }
            }
            Some(ParamGrad::Rows { width, rows }) => {
                for (r, g) in rows {
                    for (k, gv) in g.iter().enumerate() {
                        let j = r * width + k;
                        m[j] += (1.0 - cfg.beta1) * gv;
                        v[j] += (1.0 - cfg.beta2) * gv * gv;
                    }
                }
            }
            None => {}
        }
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Scales all gradients by `max_norm / norm` when their global L2 norm exceeds `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidConfig(format!("clip norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = scalar_params(0.7);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &Gradients::from_dense(vec![vec![0.0]]), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.by_name("x").unwrap().data(), &[0.7]);
        assert_eq!(s.first_moment(0), &[0.0]);
        assert_eq!(s.second_moment(0), &[0.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &Gradients::from_dense(vec![vec![1.0]]), &mut s, &AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((p.by_name("x").unwrap().data()[0] - want).abs() < 1e-18);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        let bad = Gradients::from_dense(vec![vec![1.0, 2.0]]);
        assert!(matches!(adam_step(&mut p, &bad, &mut s, &AdamConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn clipping_examples() {
        let mut g = Gradients::from_dense(vec![vec![3.0, 4.0]]);
        assert_eq!(clip_global_norm(&mut g, 2.0).unwrap(), 5.0);
        let ParamGrad::Dense(v) = g.get(crate::params::ParamId(0)).unwrap() else { unreachable!() };
        assert!((v[0] - 1.2).abs() < 1e-15 && (v[1] - 1.6).abs() < 1e-15);

        let mut g = Gradients::from_dense(vec![vec![0.6], vec![0.8]]);
        clip_global_norm(&mut g, 2.0).unwrap();
        assert_eq!(g, Gradients::from_dense(vec![vec![0.6], vec![0.8]]));

        let mut g = Gradients::from_dense(vec![vec![0.0; 3]]);
        clip_global_norm(&mut g, 2.0).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }
}
