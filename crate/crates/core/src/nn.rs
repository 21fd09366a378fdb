//! Convolution banks, LSTM stacks and dropout built on top of [`Graph`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{glorot_uniform, ParamId, ParamSet};
use crate::tensor::Tensor;

/// One convolution filter group: `count` filters of a single `width`.
#[derive(Clone, Debug)]
pub struct ConvFilter {
    pub width: usize,
    pub count: usize,
    /// `width × D × count`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvFilter {
    pub fn init(params: &mut ParamSet, prefix: &str, width: usize, in_dim: usize, count: usize, rng: &mut impl Rng) -> Self {
        let weight = params.insert(
            format!("{prefix}.w{width}.weight"),
            glorot_uniform(&[width, in_dim, count], width * in_dim, width * count, rng),
        );
        let bias = params.insert(format!("{prefix}.w{width}.bias"), Tensor::zeros(&[count]));
        ConvFilter {
            width,
            count,
            weight,
            bias,
        }
    }
}

fn max_width(filters: &[ConvFilter]) -> Result<usize> {
    filters
        .iter()
        .map(|f| f.width)
        .max()
        .ok_or_else(|| Error::InvalidConfig("no convolution filters".into()))
}

/// Valid convolution of every filter group followed by max-over-time pooling.
///
/// Sequences shorter than the widest filter are zero-padded to that width. The result
/// is a `1 × ΣF` row with filter groups concatenated in order.
pub fn conv_max_pool(g: &mut Graph<'_>, seq: NodeId, filters: &[ConvFilter]) -> Result<NodeId> {
    if g.value(seq).rows() == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let padded = g.pad_rows(seq, max_width(filters)?);
    let mut pooled = Vec::with_capacity(filters.len());
    for f in filters {
        let w = g.param(f.weight);
        let b = g.param(f.bias);
        let maps = g.conv1d(padded, w, b, f.width, 1)?;
        pooled.push(g.max_pool(maps, 1)?);
    }
    g.concat_cols(&pooled)
}

/// Per-position convolution features without pooling.
///
/// Each filter group's output is aligned at window start positions and truncated to the
/// shortest group (the widest filter), then groups are concatenated per position.
pub fn conv_feature_maps(g: &mut Graph<'_>, seq: NodeId, filters: &[ConvFilter]) -> Result<NodeId> {
    if g.value(seq).rows() == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let widest = max_width(filters)?;
    let padded = g.pad_rows(seq, widest);
    let steps = g.value(padded).rows() - widest + 1;
    let mut maps = Vec::with_capacity(filters.len());
    for f in filters {
        let w = g.param(f.weight);
        let b = g.param(f.bias);
        let m = g.conv1d(padded, w, b, f.width, 1)?;
        maps.push(if g.value(m).rows() > steps { g.slice_rows(m, 0, steps)? } else { m });
    }
    g.concat_cols(&maps)
}

/// Convolution with max-pooling applied independently to `groups` stacked sequences,
/// e.g. the characters of every word in a sentence. Returns `groups × ΣF`.
pub fn grouped_conv_max_pool(g: &mut Graph<'_>, seqs: NodeId, groups: usize, filters: &[ConvFilter]) -> Result<NodeId> {
    let mut pooled = Vec::with_capacity(filters.len());
    for f in filters {
        let w = g.param(f.weight);
        let b = g.param(f.bias);
        let maps = g.conv1d(seqs, w, b, f.width, groups)?;
        pooled.push(g.max_pool(maps, groups)?);
    }
    g.concat_cols(&pooled)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `D × 4H`
    pub wx: ParamId,
    /// `H × 4H`
    pub wh: ParamId,
    /// `4H`, gate order input, forget, candidate, output
    pub bias: ParamId,
}

impl LstmCell {
    /// Glorot weights, zero biases except the forget gate, which starts at 1.
    pub fn init(params: &mut ParamSet, prefix: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let wx = params.insert(
            format!("{prefix}.wx"),
            glorot_uniform(&[in_dim, 4 * hidden], in_dim, 4 * hidden, rng),
        );
        let wh = params.insert(
            format!("{prefix}.wh"),
            glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, rng),
        );
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = params.insert(format!("{prefix}.bias"), b);
        LstmCell { wx, wh, bias }
    }

    fn run(&self, g: &mut Graph<'_>, seq: NodeId, reverse: bool) -> Result<NodeId> {
        let wx = g.param(self.wx);
        let wh = g.param(self.wh);
        let b = g.param(self.bias);
        g.lstm(seq, wx, wh, b, reverse)
    }
}

/// Stacked (optionally bidirectional) LSTM.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub direction: Direction,
    pub hidden: usize,
    /// Per layer: forward-running cell and, for bidirectional stacks, the reverse cell.
    /// A `Backward` stack stores its reverse cell in the first slot.
    pub layers: Vec<(LstmCell, Option<LstmCell>)>,
}

impl LstmStack {
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        direction: Direction,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("LSTM needs at least one layer and one unit".into()));
        }
        let mut cells = Vec::with_capacity(layers);
        let mut dim = in_dim;
        for l in 0..layers {
            match direction {
                Direction::Forward | Direction::Backward => {
                    let cell = LstmCell::init(params, &format!("{prefix}.l{l}"), dim, hidden, rng);
                    cells.push((cell, None));
                    dim = hidden;
                }
                Direction::Bidirectional => {
                    let fwd = LstmCell::init(params, &format!("{prefix}.l{l}.fwd"), dim, hidden, rng);
                    let bwd = LstmCell::init(params, &format!("{prefix}.l{l}.bwd"), dim, hidden, rng);
                    cells.push((fwd, Some(bwd)));
                    dim = 2 * hidden;
                }
            }
        }
        Ok(LstmStack {
            direction,
            hidden,
            layers: cells,
        })
    }

    /// Width of each per-step output (`2H` when bidirectional).
    pub fn output_dim(&self) -> usize {
        match self.direction {
            Direction::Bidirectional => 2 * self.hidden,
            _ => self.hidden,
        }
    }
}

/// Runs the stack over a `T × D` sequence.
///
/// Returns all top-layer hidden states (`T × H`, or `T × 2H` bidirectional) and the final
/// state (`1 × H` or `1 × 2H`): the last step for the forward direction and the first
/// position for the reverse direction, i.e. each direction's state after reading everything.
pub fn lstm_forward(g: &mut Graph<'_>, seq: NodeId, stack: &LstmStack) -> Result<(NodeId, NodeId)> {
    let t_len = g.value(seq).rows();
    if t_len == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let mut x = seq;
    let mut last = None;
    for (cell, reverse_cell) in &stack.layers {
        match stack.direction {
            Direction::Forward => {
                x = cell.run(g, x, false)?;
                last = Some(g.slice_rows(x, t_len - 1, 1)?);
            }
            Direction::Backward => {
                x = cell.run(g, x, true)?;
                last = Some(g.slice_rows(x, 0, 1)?);
            }
            Direction::Bidirectional => {
                let rev = reverse_cell.as_ref().expect("bidirectional layer without reverse cell");
                let f = cell.run(g, x, false)?;
                let b = rev.run(g, x, true)?;
                x = g.concat_cols(&[f, b])?;
                let f_last = g.slice_rows(f, t_len - 1, 1)?;
                let b_last = g.slice_rows(b, 0, 1)?;
                last = Some(g.concat_cols(&[f_last, b_last])?);
            }
        }
    }
    Ok((x, last.expect("at least one layer")))
}

fn check_keep(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidConfig(format!("keep probability {keep_prob} not in (0, 1]")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is `1 / keep_prob` with probability `keep_prob`, else 0.
pub fn dropout_mask(len: usize, keep_prob: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_keep(keep_prob)?;
    let scale = 1.0 / keep_prob;
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 })
        .collect())
}

/// Dropout inside a graph. Identity when not training or when `keep_prob` is 1.
pub fn dropout(g: &mut Graph<'_>, x: NodeId, keep_prob: f64, training: bool, rng: &mut impl Rng) -> Result<NodeId> {
    check_keep(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.value(x).len(), keep_prob, rng)?;
    g.apply_mask(x, mask)
}

/// Standalone inverted dropout of a tensor with a seeded mask.
pub fn dropout_tensor(x: &Tensor, keep_prob: f64, training: bool, seed: u64) -> Result<Tensor> {
    check_keep(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(x.len(), keep_prob, &mut rng)?;
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_max_pool_picks_max_of_copied_column() {
        let mut params = ParamSet::new();
        let mut w = Tensor::zeros(&[1, 2, 1]);
        w.data_mut()[0] = 1.0;
        let weight = params.insert("c.weight", w);
        let bias = params.insert("c.bias", Tensor::zeros(&[1]));
        let filters = [ConvFilter {
            width: 1,
            count: 1,
            weight,
            bias,
        }];
        let mut g = Graph::new(&params);
        let seq = g.input(Tensor::matrix(3, 2, vec![1.0, 9.0, 3.0, 9.0, 2.0, 9.0]).unwrap());
        let out = conv_max_pool(&mut g, seq, &filters).unwrap();
        assert_eq!(g.value(out).data(), &[3.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let filters: Vec<_> = [3, 4, 5]
            .iter()
            .map(|&w| ConvFilter::init(&mut params, "conv", w, 4, 2, &mut rng))
            .collect();
        let mut g = Graph::new(&params);
        let seq = g.input(Tensor::zeros(&[7, 4]));
        let out = conv_max_pool(&mut g, seq, &filters).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 6]);
    }

    #[test]
    fn short_sequences_are_padded_to_widest_filter() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let filters: Vec<_> = [3, 5]
            .iter()
            .map(|&w| ConvFilter::init(&mut params, "conv", w, 3, 4, &mut rng))
            .collect();
        let mut g = Graph::new(&params);
        let seq = g.input(Tensor::matrix(2, 3, vec![0.1; 6]).unwrap());
        let out = conv_max_pool(&mut g, seq, &filters).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 8]);
        let maps = conv_feature_maps(&mut g, seq, &filters).unwrap();
        assert_eq!(g.value(maps).shape(), &[1, 8]);
    }

    #[test]
    fn bidirectional_output_width_is_twice_hidden() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = LstmStack::init(&mut params, "rnn", 5, 300, 1, Direction::Bidirectional, &mut rng).unwrap();
        let mut g = Graph::new(&params);
        let seq = g.input(Tensor::matrix(4, 5, vec![0.3; 20]).unwrap());
        let (all, last) = lstm_forward(&mut g, seq, &stack).unwrap();
        assert_eq!(g.value(all).shape(), &[4, 600]);
        assert_eq!(g.value(last).shape(), &[1, 600]);
    }

    #[test]
    fn lstm_weight_mismatch_is_config_error() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = LstmStack::init(&mut params, "rnn", 5, 3, 1, Direction::Forward, &mut rng).unwrap();
        let mut g = Graph::new(&params);
        let seq = g.input(Tensor::matrix(2, 4, vec![0.0; 8]).unwrap());
        assert!(matches!(lstm_forward(&mut g, seq, &stack), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.5]).unwrap();
        assert_eq!(dropout_tensor(&x, 0.8, false, 7).unwrap(), x);
        assert_eq!(dropout_tensor(&x, 1.0, true, 7).unwrap(), x);
        assert!(matches!(dropout_tensor(&x, 0.0, true, 7), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn dropout_is_unbiased_over_many_seeds() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; 4];
        for seed in 0..n {
            let y = dropout_tensor(&x, 0.8, true, seed).unwrap();
            for (m, v) in mean.iter_mut().zip(y.data()) {
                *m += v / n as f64;
            }
        }
        for (m, v) in mean.iter().zip(x.data()) {
            assert!((m - v).abs() <= 0.02 * v.abs(), "mean {m} vs {v}");
        }
    }
}
