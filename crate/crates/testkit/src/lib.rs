//! Reference oracles for tests. Nothing here calls into the library under test.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Denominator floor for [`relative_error`]; below it the comparison is absolute-scaled.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

/// Exact-match ratio and Hamming score by comparing label bits one at a time.
pub fn brute_force_multilabel(gold: &[[bool; 3]], pred: &[[bool; 3]]) -> (f64, f64) {
    assert_eq!(gold.len(), pred.len());
    let mut exact = 0usize;
    let mut disagreements = 0usize;
    for (y, z) in gold.iter().zip(pred) {
        let mut all = true;
        for bit in 0..3 {
            if y[bit] != z[bit] {
                disagreements += 1;
                all = false;
            }
        }
        if all {
            exact += 1;
        }
    }
    let d = gold.len() as f64;
    (exact as f64 / d, 1.0 - disagreements as f64 / (3.0 * d))
}

/// Valid sliding-window convolution followed by max over positions, written with plain loops.
///
/// `seq` is `t × d` row-major; `weights` is `w × d × f`. Returns the `f` pooled maxima.
pub fn sliding_window_max(seq: &[f64], t: usize, d: usize, weights: &[f64], bias: &[f64], w: usize) -> Vec<f64> {
    let f = bias.len();
    let mut padded = seq.to_vec();
    let t_eff = t.max(w);
    padded.resize(t_eff * d, 0.0);
    (0..f)
        .map(|filt| {
            (0..=t_eff - w)
                .map(|p| {
                    let mut s = bias[filt];
                    for k in 0..w {
                        for j in 0..d {
                            s += padded[(p + k) * d + j] * weights[(k * d + j) * f + filt];
                        }
                    }
                    s
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Scalar-by-scalar LSTM recurrence (gate order input, forget, candidate, output).
///
/// `wx` is `d × 4h`, `wh` is `h × 4h`. Returns every hidden state, `t × h`.
pub fn scalar_lstm(xs: &[f64], t: usize, d: usize, h: usize, wx: &[f64], wh: &[f64], b: &[f64]) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    let mut out = Vec::with_capacity(t * h);
    for step in 0..t {
        let x = &xs[step * d..(step + 1) * d];
        let gate = |g: usize, j: usize, hs: &[f64]| {
            let col = g * h + j;
            let mut z = b[col];
            for (i, xv) in x.iter().enumerate() {
                z += xv * wx[i * 4 * h + col];
            }
            for (i, hv) in hs.iter().enumerate() {
                z += hv * wh[i * 4 * h + col];
            }
            z
        };
        let mut new_h = vec![0.0; h];
        for j in 0..h {
            let i_g = sig(gate(0, j, &hs));
            let f_g = sig(gate(1, j, &hs));
            let g_g = gate(2, j, &hs).tanh();
            let o_g = sig(gate(3, j, &hs));
            cs[j] = f_g * cs[j] + i_g * g_g;
            new_h[j] = o_g * cs[j].tanh();
        }
        hs = new_h;
        out.extend_from_slice(&hs);
    }
    out
}

/// Bias-corrected Adam on one scalar, returning the parameter after each step.
pub fn scalar_adam_trace(x0: f64, grads: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Vec<f64> {
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    grads
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let t = (i + 1) as i32;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            x -= lr * m_hat / (v_hat.sqrt() + eps);
            x
        })
        .collect()
}
