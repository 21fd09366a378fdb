//! Reverse-mode automatic differentiation over a recorded operation graph.
//!
//! A [`Graph`] is built eagerly: every operation computes its value immediately and
//! appends a node, so node order is a topological order by construction. Parameters
//! are referenced in place from a borrowed [`ParamSet`] rather than copied.
//!
//! All values are treated as matrices: a tensor of shape `[r, c, ...]` is an
//! `r × (c·...)` matrix and a vector `[n]` is a `1 × n` row.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::linalg::{gemm, sigmoid, softmax, Strides};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct LstmCache {
    hidden: usize,
    /// Activated gates per position, columns `[i | f | g | o]`.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: NodeId,
        indices: Vec<usize>,
        zero_index: Option<usize>,
    },
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows {
        input: NodeId,
        start: usize,
    },
    PadRows(NodeId),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        width: usize,
        groups: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Lstm {
        input: NodeId,
        wx: NodeId,
        wh: NodeId,
        bias: NodeId,
        reverse: bool,
        cache: LstmCache,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    SoftmaxXent {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: NodeId,
        targets: Vec<f64>,
    },
    Sum(NodeId),
    Pick {
        input: NodeId,
        index: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A single forward computation whose operations can be differentiated in reverse.
pub struct Graph<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl Graph<'static> {
    /// A graph with no parameter set; only [`Graph::input`] leaves are available.
    pub fn detached() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(pid), None) => self.params.expect("param leaf without params").get(*pid),
            _ => unreachable!("node without value"),
        }
    }

    fn shape2(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.needs(*i));
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant or differentiable input leaf, depending on `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(tensor),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf referencing a parameter in place. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes.get(&id) {
            return *n;
        }
        let params = self.params.expect("graph has no parameter set");
        assert!(id.0 < params.len(), "unknown parameter id");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// Row lookup `table[indices[i]]`. Rows whose index equals `zero_index` are zero and
    /// receive no gradient.
    pub fn gather(&mut self, table: NodeId, indices: &[usize], zero_index: Option<usize>) -> Result<NodeId> {
        let (rows, cols) = self.shape2(table);
        if indices.is_empty() {
            return Err(Error::InvalidInput("gather with no indices".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidInput(format!("index {bad} out of range for table of {rows} rows")));
        }
        let t = self.value(table).data();
        let mut out = vec![0.0; indices.len() * cols];
        for (r, &ix) in indices.iter().enumerate() {
            if Some(ix) != zero_index {
                out[r * cols..(r + 1) * cols].copy_from_slice(&t[ix * cols..(ix + 1) * cols]);
            }
        }
        let value = Tensor::from_parts(vec![indices.len(), cols], out);
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
                zero_index,
            },
            value,
            &[table],
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(Error::InvalidConfig(format!("matmul inner dimensions differ: {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Strides::row_major(k),
            self.value(b).data(),
            Strides::row_major(n),
            0.0,
            &mut out,
            Strides::row_major(n),
        );
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m × n` input.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if self.value(bias).len() != n {
            return Err(Error::InvalidConfig(format!(
                "bias of length {} does not match {n} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        Ok(self.push(Op::AddBias(a, bias), Tensor::from_parts(vec![m, n], out), &[a, bias]))
    }

    /// Matrix product followed by a row-broadcast bias.
    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, weight)?;
        self.add_bias(xw, bias)
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::InvalidConfig(format!(
                "shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::from_parts(shape, data), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::from_parts(shape, data), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x * s).collect());
        self.push(Op::Scale(a, s), out, &[a])
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect());
        self.push(op, out, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of nothing".into()));
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::InvalidConfig("concat_cols inputs differ in row count".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![rows, total], out), parts))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("concat of nothing".into()));
        };
        let cols = self.value(first).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(Error::InvalidConfig("concat_rows inputs differ in column count".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rows = out.len() / cols;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(vec![rows, cols], out), parts))
    }

    pub fn slice_rows(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape2(input);
        if len == 0 || start + len > rows {
            return Err(Error::InvalidInput(format!("row slice {start}..{} of {rows} rows", start + len)));
        }
        let data = self.value(input).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(Op::SliceRows { input, start }, Tensor::from_parts(vec![len, cols], data), &[input]))
    }

    /// Appends zero rows until the input has at least `min_rows` rows.
    pub fn pad_rows(&mut self, input: NodeId, min_rows: usize) -> NodeId {
        let (rows, cols) = self.shape2(input);
        if rows >= min_rows {
            return input;
        }
        let mut data = self.value(input).data().to_vec();
        data.resize(min_rows * cols, 0.0);
        self.push(Op::PadRows(input), Tensor::from_parts(vec![min_rows, cols], data), &[input])
    }

    /// Valid 1-D convolution over time.
    ///
    /// `input` holds `groups` stacked sequences of equal length `L` (`groups·L × D`);
    /// `weight` is `width × D × F` and `bias` has length `F`. The output stacks the
    /// `L − width + 1` positions of every group: `groups·(L − width + 1) × F`.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, width: usize, groups: usize) -> Result<NodeId> {
        let (rows, d) = self.shape2(input);
        let w = self.value(weight);
        if width == 0 || groups == 0 || rows % groups != 0 {
            return Err(Error::InvalidConfig(format!("conv1d: {rows} rows in {groups} groups, width {width}")));
        }
        if w.rows() != width || w.len() % (width * d) != 0 {
            return Err(Error::InvalidConfig(format!(
                "conv1d: filter shape {:?} does not match width {width} and input dim {d}",
                w.shape()
            )));
        }
        let f = w.len() / (width * d);
        if self.value(bias).len() != f {
            return Err(Error::InvalidConfig("conv1d: bias length differs from filter count".into()));
        }
        let len = rows / groups;
        if len < width {
            return Err(Error::InvalidInput(format!("conv1d: sequence of {len} is shorter than width {width}")));
        }
        let n = len - width + 1;
        let x = self.value(input).data();
        let mut out = vec![0.0; groups * n * f];
        for g in 0..groups {
            gemm(
                n,
                width * d,
                f,
                &x[g * len * d..(g + 1) * len * d],
                Strides::row_major(d),
                w.data(),
                Strides::row_major(f),
                0.0,
                &mut out[g * n * f..(g + 1) * n * f],
                Strides::row_major(f),
            );
        }
        let b = self.value(bias).data();
        for row in out.chunks_mut(f) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        Ok(self.push(
            Op::Conv1d {
                input,
                weight,
                bias,
                width,
                groups,
            },
            Tensor::from_parts(vec![groups * n, f], out),
            &[input, weight, bias],
        ))
    }

    /// Column-wise maximum within each of `groups` equal row blocks: `groups·n × F → groups × F`.
    pub fn max_pool(&mut self, input: NodeId, groups: usize) -> Result<NodeId> {
        let (rows, f) = self.shape2(input);
        if groups == 0 || rows % groups != 0 {
            return Err(Error::InvalidConfig(format!("max_pool: {rows} rows in {groups} groups")));
        }
        let n = rows / groups;
        let x = self.value(input).data();
        let mut out = vec![f64::NEG_INFINITY; groups * f];
        let mut argmax = vec![0usize; groups * f];
        for g in 0..groups {
            for p in 0..n {
                let r = g * n + p;
                for c in 0..f {
                    let v = x[r * f + c];
                    if v > out[g * f + c] {
                        out[g * f + c] = v;
                        argmax[g * f + c] = r;
                    }
                }
            }
        }
        Ok(self.push(
            Op::MaxPool { input, argmax },
            Tensor::from_parts(vec![groups, f], out),
            &[input],
        ))
    }

    /// One LSTM layer over a `T × D` sequence; returns all hidden states (`T × H`).
    ///
    /// `wx` is `D × 4H`, `wh` is `H × 4H`, `bias` has length `4H`, gate columns are
    /// ordered input, forget, candidate, output. With `reverse` the sequence is consumed
    /// from the last position to the first and row `t` holds the state after reading `t`.
    pub fn lstm(&mut self, input: NodeId, wx: NodeId, wh: NodeId, bias: NodeId, reverse: bool) -> Result<NodeId> {
        let (t_len, d) = self.shape2(input);
        let (wx_r, four_h) = self.shape2(wx);
        let h = four_h / 4;
        if wx_r != d || four_h % 4 != 0 || four_h == 0 {
            return Err(Error::InvalidConfig(format!(
                "lstm: input weights {:?} do not fit input dimension {d}",
                self.value(wx).shape()
            )));
        }
        if self.shape2(wh) != (h, four_h) || self.value(bias).len() != four_h {
            return Err(Error::InvalidConfig(format!(
                "lstm: recurrent weights {:?} / bias {:?} do not fit hidden size {h}",
                self.value(wh).shape(),
                self.value(bias).shape()
            )));
        }
        let mut z = vec![0.0; t_len * four_h];
        gemm(
            t_len,
            d,
            four_h,
            self.value(input).data(),
            Strides::row_major(d),
            self.value(wx).data(),
            Strides::row_major(four_h),
            0.0,
            &mut z,
            Strides::row_major(four_h),
        );
        let b = self.value(bias).data();
        for row in z.chunks_mut(four_h) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let whd = self.value(wh).data();
        let mut gates = vec![0.0; t_len * four_h];
        let mut c_prev = vec![0.0; t_len * h];
        let mut h_prev = vec![0.0; t_len * h];
        let mut tanh_c = vec![0.0; t_len * h];
        let mut out = vec![0.0; t_len * h];
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let zt = &mut z[t * four_h..(t + 1) * four_h];
            gemm(1, h, four_h, &hs, Strides::row_major(h), whd, Strides::row_major(four_h), 1.0, zt, Strides::row_major(four_h));
            h_prev[t * h..(t + 1) * h].copy_from_slice(&hs);
            c_prev[t * h..(t + 1) * h].copy_from_slice(&cs);
            let gt = &mut gates[t * four_h..(t + 1) * four_h];
            for j in 0..h {
                let i_g = sigmoid(zt[j]);
                let f_g = sigmoid(zt[h + j]);
                let g_g = zt[2 * h + j].tanh();
                let o_g = sigmoid(zt[3 * h + j]);
                gt[j] = i_g;
                gt[h + j] = f_g;
                gt[2 * h + j] = g_g;
                gt[3 * h + j] = o_g;
                let c = f_g * cs[j] + i_g * g_g;
                let tc = c.tanh();
                cs[j] = c;
                hs[j] = o_g * tc;
                tanh_c[t * h + j] = tc;
            }
            out[t * h..(t + 1) * h].copy_from_slice(&hs);
        }
        Ok(self.push(
            Op::Lstm {
                input,
                wx,
                wh,
                bias,
                reverse,
                cache: LstmCache {
                    hidden: h,
                    gates,
                    c_prev,
                    h_prev,
                    tanh_c,
                },
            },
            Tensor::from_parts(vec![t_len, h], out),
            &[input, wx, wh, bias],
        ))
    }

    /// Multiplies the input by a fixed mask (already scaled for inverted dropout).
    pub fn apply_mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(input);
        if mask.len() != v.len() {
            return Err(Error::Contract("dropout mask length differs from input".into()));
        }
        let out = Tensor::from_parts(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        Ok(self.push(Op::Dropout { input, mask }, out, &[input]))
    }

    /// Mean over rows of the softmax cross-entropy between `logits` (`n × C`) and class targets.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (n, c) = self.shape2(logits);
        if targets.len() != n || targets.iter().any(|&t| t >= c) {
            return Err(Error::Contract("softmax_cross_entropy: bad targets".into()));
        }
        let z = self.value(logits);
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = z.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            probs.extend(softmax(row));
        }
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss / n as f64),
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets, over all entries.
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let z = self.value(logits);
        if targets.len() != z.len() {
            return Err(Error::Contract("sigmoid_bce: target count differs from logits".into()));
        }
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        Ok(self.push(
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// The single element at flat position `index`, as a scalar node.
    pub fn pick(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(input);
        if index >= v.len() {
            return Err(Error::InvalidInput(format!("pick index {index} out of {}", v.len())));
        }
        let s = v.data()[index];
        Ok(self.push(Op::Pick { input, index }, Tensor::scalar(s), &[input]))
    }

    pub fn ensure_finite(&self, id: NodeId, what: &str) -> Result<()> {
        if self.value(id).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node that needs them.
    pub fn backward(&self, loss: NodeId) -> Result<Backward> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.ensure_finite(loss, "loss")?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut sparse: BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut sparse);
            grads[i] = Some(g);
        }
        let out = Backward { grads, sparse };
        if !out.all_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        sparse: &mut BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>>,
    ) {
        let node = &self.nodes[i];
        if !node.needs_grad {
            return;
        }
        let out_val = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Gather {
                table,
                indices,
                zero_index,
            } => {
                if !self.needs(*table) {
                    return;
                }
                let cols = self.value(*table).cols();
                if let Op::Param(pid) = self.nodes[table.0].op {
                    let rows = sparse.entry(pid).or_default();
                    for (r, &ix) in indices.iter().enumerate() {
                        if Some(ix) == *zero_index {
                            continue;
                        }
                        let acc = rows.entry(ix).or_insert_with(|| vec![0.0; cols]);
                        add_into(acc, &g[r * cols..(r + 1) * cols]);
                    }
                } else {
                    let dt = slot(grads, *table, self.value(*table).len());
                    for (r, &ix) in indices.iter().enumerate() {
                        if Some(ix) == *zero_index {
                            continue;
                        }
                        add_into(&mut dt[ix * cols..(ix + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape2(*a);
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let da = slot(grads, *a, m * k);
                    gemm(m, n, k, g, Strides::row_major(n), bv, Strides::transposed(n), 1.0, da, Strides::row_major(k));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let db = slot(grads, *b, k * n);
                    gemm(k, m, n, av, Strides::transposed(k), g, Strides::row_major(n), 1.0, db, Strides::row_major(n));
                }
            }
            Op::AddBias(a, b) => {
                let n = self.value(*b).len();
                if self.needs(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.needs(*x) {
                        add_into(slot(grads, *x, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    let da = slot(grads, *a, g.len());
                    for j in 0..g.len() {
                        da[j] += g[j] * bv[j];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    let db = slot(grads, *b, g.len());
                    for j in 0..g.len() {
                        db[j] += g[j] * av[j];
                    }
                }
            }
            Op::Scale(a, s) => {
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * s);
            }
            Op::Sigmoid(a) => {
                let y = out_val.unwrap().data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Tanh(a) => {
                let y = out_val.unwrap().data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    if x[j] > 0.0 {
                        da[j] += g[j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out_val.unwrap().cols();
                let rows = out_val.unwrap().rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.needs(*p) {
                        let dp = slot(grads, *p, rows * c);
                        for r in 0..rows {
                            add_into(&mut dp[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.needs(*p) {
                        add_into(slot(grads, *p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows { input, start } => {
                let cols = self.value(*input).cols();
                let len = self.value(*input).len();
                let di = slot(grads, *input, len);
                add_into(&mut di[start * cols..start * cols + g.len()], g);
            }
            Op::PadRows(input) => {
                let len = self.value(*input).len();
                add_into(slot(grads, *input, len), &g[..len]);
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                width,
                groups,
            } => self.backprop_conv(*input, *weight, *bias, *width, *groups, g, grads),
            Op::MaxPool { input, argmax, .. } => {
                let f = out_val.unwrap().cols();
                let len = self.value(*input).len();
                let di = slot(grads, *input, len);
                for (j, &r) in argmax.iter().enumerate() {
                    di[r * f + j % f] += g[j];
                }
            }
            Op::Lstm {
                input,
                wx,
                wh,
                bias,
                reverse,
                cache,
            } => self.backprop_lstm(*input, *wx, *wh, *bias, *reverse, cache, g, grads),
            Op::Dropout { input, mask } => {
                let di = slot(grads, *input, g.len());
                for j in 0..g.len() {
                    di[j] += g[j] * mask[j];
                }
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                let n = targets.len() as f64;
                let dl = slot(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dl[r * c + j] += g[0] * (probs[r * c + j] - onehot) / n;
                    }
                }
            }
            Op::SigmoidBce { logits, targets } => {
                let z = self.value(*logits).data();
                let n = z.len() as f64;
                let dl = slot(grads, *logits, z.len());
                for j in 0..z.len() {
                    dl[j] += g[0] * (sigmoid(z[j]) - targets[j]) / n;
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                slot(grads, *a, len).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Pick { input, index } => {
                let len = self.value(*input).len();
                slot(grads, *input, len)[*index] += g[0];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        width: usize,
        groups: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (rows, d) = self.shape2(input);
        let wv = self.value(weight);
        let f = wv.len() / (width * d);
        let len = rows / groups;
        let n = len - width + 1;
        let wd = width * d;
        let x = self.value(input).data();
        if self.needs(weight) {
            let dw = slot(grads, weight, wd * f);
            for gi in 0..groups {
                gemm(
                    wd,
                    n,
                    f,
                    &x[gi * len * d..(gi + 1) * len * d],
                    Strides::transposed(d),
                    &g[gi * n * f..(gi + 1) * n * f],
                    Strides::row_major(f),
                    1.0,
                    dw,
                    Strides::row_major(f),
                );
            }
        }
        if self.needs(bias) {
            let db = slot(grads, bias, f);
            for row in g.chunks(f) {
                add_into(db, row);
            }
        }
        if self.needs(input) {
            let mut du = vec![0.0; n * wd];
            let dx = slot(grads, input, rows * d);
            for gi in 0..groups {
                gemm(
                    n,
                    f,
                    wd,
                    &g[gi * n * f..(gi + 1) * n * f],
                    Strides::row_major(f),
                    wv.data(),
                    Strides::transposed(f),
                    0.0,
                    &mut du,
                    Strides::row_major(wd),
                );
                for p in 0..n {
                    let start = (gi * len + p) * d;
                    add_into(&mut dx[start..start + wd], &du[p * wd..(p + 1) * wd]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        input: NodeId,
        wx: NodeId,
        wh: NodeId,
        bias: NodeId,
        reverse: bool,
        cache: &LstmCache,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (t_len, d) = self.shape2(input);
        let h = cache.hidden;
        let four_h = 4 * h;
        let whd = self.value(wh).data();
        let mut dz = vec![0.0; t_len * four_h];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for step in (0..t_len).rev() {
            let t = if reverse { t_len - 1 - step } else { step };
            let gates = &cache.gates[t * four_h..(t + 1) * four_h];
            let dzt = &mut dz[t * four_h..(t + 1) * four_h];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = cache.tanh_c[t * h + j];
                let dh = g[t * h + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * cache.c_prev[t * h + j];
                dc_next[j] = dc * f_g;
                dzt[j] = d_i * i_g * (1.0 - i_g);
                dzt[h + j] = d_f * f_g * (1.0 - f_g);
                dzt[2 * h + j] = d_g * (1.0 - g_g * g_g);
                dzt[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            gemm(1, four_h, h, dzt, Strides::row_major(four_h), whd, Strides::transposed(four_h), 0.0, &mut dh_next, Strides::row_major(h));
        }
        if self.needs(wx) {
            let x = self.value(input).data();
            let dwx = slot(grads, wx, d * four_h);
            gemm(d, t_len, four_h, x, Strides::transposed(d), &dz, Strides::row_major(four_h), 1.0, dwx, Strides::row_major(four_h));
        }
        if self.needs(wh) {
            let dwh = slot(grads, wh, h * four_h);
            gemm(h, t_len, four_h, &cache.h_prev, Strides::transposed(h), &dz, Strides::row_major(four_h), 1.0, dwh, Strides::row_major(four_h));
        }
        if self.needs(bias) {
            let db = slot(grads, bias, four_h);
            for row in dz.chunks(four_h) {
                add_into(db, row);
            }
        }
        if self.needs(input) {
            let wxd = self.value(wx).data();
            let dx = slot(grads, input, t_len * d);
            gemm(t_len, four_h, d, &dz, Strides::row_major(four_h), wxd, Strides::transposed(four_h), 1.0, dx, Strides::row_major(d));
        }
    }

    /// Parameter leaves present in this graph, with their node ids.
    fn param_leaves(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.param_nodes.iter().map(|(p, n)| (*p, *n))
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Result of [`Graph::backward`]: per-node gradients plus row-sparse embedding gradients.
#[derive(Debug)]
pub struct Backward {
    grads: Vec<Option<Vec<f64>>>,
    sparse: BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>>,
}

impl Backward {
    /// Gradient of the loss with respect to node `id`'s value, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
            && self
                .sparse
                .values()
                .flat_map(|rows| rows.values())
                .all(|r| r.iter().all(|v| v.is_finite()))
    }

    /// Collects the gradients of every parameter the graph touched.
    pub fn into_param_grads(mut self, graph: &Graph<'_>) -> Gradients {
        let params = graph.params.expect("graph has no parameter set");
        let mut out = Gradients::new(params.len());
        let mut leaves: Vec<_> = graph.param_leaves().collect();
        leaves.sort();
        for (pid, node) in leaves {
            if let Some(dense) = self.grads[node.0].take() {
                out.grads[pid.0] = Some(ParamGrad::Dense(dense));
            }
        }
        for (pid, rows) in std::mem::take(&mut self.sparse) {
            let width = params.get(pid).cols();
            out.accumulate(pid, ParamGrad::Rows { width, rows });
        }
        out
    }
}

/// Gradient of one parameter: dense, or a set of touched rows for embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl ParamGrad {
    fn add(&mut self, other: ParamGrad) {
        match (&mut *self, other) {
            (ParamGrad::Dense(a), ParamGrad::Dense(b)) => add_into(a, &b),
            (ParamGrad::Dense(a), ParamGrad::Rows { width, rows }) => {
                for (r, v) in rows {
                    add_into(&mut a[r * width..(r + 1) * width], &v);
                }
            }
            (ParamGrad::Rows { rows: a, .. }, ParamGrad::Rows { rows: b, .. }) => {
                for (r, v) in b {
                    match a.get_mut(&r) {
                        Some(acc) => add_into(acc, &v),
                        None => {
                            a.insert(r, v);
                        }
                    }
                }
            }
            (this @ ParamGrad::Rows { .. }, ParamGrad::Dense(mut b)) => {
                if let ParamGrad::Rows { width, rows } = this {
                    for (r, v) in rows.iter() {
                        add_into(&mut b[r * *width..(r + 1) * *width], v);
                    }
                }
                *this = ParamGrad::Dense(b);
            }
        }
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        match self {
            ParamGrad::Dense(v) => Box::new(v.iter_mut()),
            ParamGrad::Rows { rows, .. } => Box::new(rows.values_mut().flat_map(|r| r.iter_mut())),
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            ParamGrad::Dense(v) => Box::new(v.iter()),
            ParamGrad::Rows { rows, .. } => Box::new(rows.values().flat_map(|r| r.iter())),
        }
    }

    /// Dense copy with `len` entries.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            ParamGrad::Dense(v) => v.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![0.0; len];
                for (r, v) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(v);
                }
                out
            }
        }
    }

    /// Value at flat position `index`.
    pub fn at(&self, index: usize) -> f64 {
        match self {
            ParamGrad::Dense(v) => v[index],
            ParamGrad::Rows { width, rows } => rows.get(&(index / width)).map_or(0.0, |r| r[index % width]),
        }
    }
}

/// Gradients for a whole [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    /// Dense gradients, one entry per parameter.
    pub fn from_dense(grads: Vec<Vec<f64>>) -> Self {
        Gradients {
            grads: grads.into_iter().map(|g| Some(ParamGrad::Dense(g))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: ParamGrad) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add(grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: Gradients) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient sets differ in size");
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.values_mut().for_each(|v| *v *= s);
        }
    }

    /// L2 norm over every gradient entry of every parameter.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.values())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flat_map(|g| g.values()).all(|v| v.is_finite())
    }
}
