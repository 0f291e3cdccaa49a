//! Define-then-run computation graphs with reverse-mode gradients.
//!
//! A [`Graph`] is an ordered list of primitive ops over named inputs and
//! parameters. [`Graph::forward`] evaluates it purely (all intermediates are
//! cached in the returned [`Execution`]); [`Graph::backward`] replays the
//! node list in reverse, accumulating cotangents. Every primitive's backward
//! rule is hand-derived and checked against central finite differences (see
//! [`super::fdcheck`]).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::tensor::{matmul, matmul_at, matmul_bt, transpose, Tensor};

/// Named tensor collection. BTreeMap keeps iteration order deterministic.
pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input { name: String },
    Param { name: String },
    Const { value: Tensor },
    MatMul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Conv1dSame { x: NodeId, w: NodeId, bias: NodeId, dilation: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    BroadcastAddRows { x: NodeId, v: NodeId },
    BroadcastAddChans { x: NodeId, v: NodeId },
    MulScalarNode { x: NodeId, s: NodeId },
    SubScalarNode { x: NodeId, s: NodeId },
    Exp { x: NodeId },
    Neg { x: NodeId },
    Gelu { x: NodeId },
    Softplus { x: NodeId },
    SoftmaxRows { x: NodeId },
    LogSoftmaxRows { x: NodeId },
    LayerNormRows { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    LayerNormChans { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    RowL2Normalize { x: NodeId },
    Diag { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    ConcatRows { xs: Vec<NodeId> },
    ConcatCols { xs: Vec<NodeId> },
    SliceCols { x: NodeId, from: usize, to: usize },
    SelectRows { x: NodeId, indices: Vec<usize> },
    EmbedLookup { table: NodeId, index: usize },
    Rotary { x: NodeId, base: f64 },
    Reshape { x: NodeId, shape: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

static GRAPH_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Builder collecting ops; shapes are inferred and checked at build time.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    outputs: Vec<(String, NodeId)>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Declared shape of a node already added to the builder.
    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        self.shape(id)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn expect_2d(&self, id: NodeId, ctx: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Shape(format!("{ctx}: expected 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> NodeId {
        self.push(Op::Input { name: name.to_string() }, shape)
    }

    pub fn param(&mut self, name: &str, shape: Vec<usize>) -> NodeId {
        self.push(Op::Param { name: name.to_string() }, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const { value }, shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.expect_2d(a, "matmul lhs")?;
        let (k2, n) = self.expect_2d(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: {k} vs {k2}"
            )));
        }
        Ok(self.push(Op::MatMul { a, b }, vec![m, n]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.expect_2d(x, "transpose")?;
        Ok(self.push(Op::Transpose { x }, vec![n, m]))
    }

    /// Same-padded 1-D convolution over the time axis of a (channels × time)
    /// input. Kernel is (c_out × c_in × k_taps); odd tap counts only.
    pub fn conv1d_same(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        dilation: usize,
    ) -> Result<NodeId> {
        let (ci, t) = self.expect_2d(x, "conv1d input")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != ci {
            return Err(Error::Shape(format!(
                "conv1d kernel {ws:?} does not match input channels {ci}"
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::Shape("conv1d kernel width must be odd".into()));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(Error::Shape("conv1d bias length must equal c_out".into()));
        }
        let span = (ws[2] - 1) * dilation + 1;
        if t < span {
            return Err(Error::Shape(format!(
                "conv1d time axis {t} shorter than kernel span {span}"
            )));
        }
        Ok(self.push(Op::Conv1dSame { x, w, bias, dilation }, vec![ws[0], t]))
    }

    fn same_shape_binary(&mut self, a: NodeId, b: NodeId, ctx: &str) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{ctx}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape_binary(a, b, "add")?;
        Ok(self.push(Op::Add { a, b }, s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape_binary(a, b, "sub")?;
        Ok(self.push(Op::Sub { a, b }, s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape_binary(a, b, "mul")?;
        Ok(self.push(Op::Mul { a, b }, s))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Scale { x, c }, s)
    }

    /// `x[i][j] + v[j]`: per-column bias on a row-major matrix.
    pub fn broadcast_add_rows(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (_, n) = self.expect_2d(x, "broadcast_add_rows")?;
        if self.shape(v) != [n] {
            return Err(Error::Shape("bias length must equal column count".into()));
        }
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::BroadcastAddRows { x, v }, s))
    }

    /// `x[i][j] + v[i]`: per-row bias, used for (channels × time) layouts.
    pub fn broadcast_add_chans(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (m, _) = self.expect_2d(x, "broadcast_add_chans")?;
        if self.shape(v) != [m] {
            return Err(Error::Shape("bias length must equal row count".into()));
        }
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::BroadcastAddChans { x, v }, s))
    }

    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != [1] {
            return Err(Error::Shape("scalar node must have shape [1]".into()));
        }
        let sh = self.shape(x).to_vec();
        Ok(self.push(Op::MulScalarNode { x, s }, sh))
    }

    pub fn sub_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != [1] {
            return Err(Error::Shape("scalar node must have shape [1]".into()));
        }
        let sh = self.shape(x).to_vec();
        Ok(self.push(Op::SubScalarNode { x, s }, sh))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Exp { x }, s)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Neg { x }, s)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Gelu { x }, s)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x).to_vec();
        self.push(Op::Softplus { x }, s)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_2d(x, "softmax_rows")?;
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::SoftmaxRows { x }, s))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_2d(x, "log_softmax_rows")?;
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::LogSoftmaxRows { x }, s))
    }

    /// Layer norm over the last axis of a (rows × d) matrix; gamma/beta have length d.
    pub fn layer_norm_rows(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (_, d) = self.expect_2d(x, "layer_norm_rows")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape("layer norm gamma/beta must have length d".into()));
        }
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::LayerNormRows { x, gamma, beta, eps }, s))
    }

    /// Layer norm over the channel axis of a (channels × time) matrix;
    /// gamma/beta have length channels.
    pub fn layer_norm_chans(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (c, _) = self.expect_2d(x, "layer_norm_chans")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(
                "layer norm gamma/beta must have length channels".into(),
            ));
        }
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::LayerNormChans { x, gamma, beta, eps }, s))
    }

    pub fn row_l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.expect_2d(x, "row_l2_normalize")?;
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::RowL2Normalize { x }, s))
    }

    pub fn diag(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.expect_2d(x, "diag")?;
        if m != n {
            return Err(Error::Shape("diag requires a square matrix".into()));
        }
        Ok(self.push(Op::Diag { x }, vec![m]))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumAll { x }, vec![1])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanAll { x }, vec![1])
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Shape("concat_rows of zero tensors".into()));
        }
        let (_, n) = self.expect_2d(xs[0], "concat_rows")?;
        let mut rows = 0;
        for &x in xs {
            let (m, n2) = self.expect_2d(x, "concat_rows")?;
            if n2 != n {
                return Err(Error::Shape("concat_rows column mismatch".into()));
            }
            rows += m;
        }
        Ok(self.push(Op::ConcatRows { xs: xs.to_vec() }, vec![rows, n]))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let (m, _) = self.expect_2d(xs[0], "concat_cols")?;
        let mut cols = 0;
        for &x in xs {
            let (m2, n) = self.expect_2d(x, "concat_cols")?;
            if m2 != m {
                return Err(Error::Shape("concat_cols row mismatch".into()));
            }
            cols += n;
        }
        Ok(self.push(Op::ConcatCols { xs: xs.to_vec() }, vec![m, cols]))
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (m, n) = self.expect_2d(x, "slice_cols")?;
        if from >= to || to > n {
            return Err(Error::Shape(format!("slice_cols {from}..{to} out of {n}")));
        }
        Ok(self.push(Op::SliceCols { x, from, to }, vec![m, to - from]))
    }

    pub fn select_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let (m, n) = self.expect_2d(x, "select_rows")?;
        if indices.iter().any(|&i| i >= m) {
            return Err(Error::Shape("select_rows index out of range".into()));
        }
        let k = indices.len();
        Ok(self.push(Op::SelectRows { x, indices }, vec![k, n]))
    }

    /// Select slice `index` from a stacked (count × rows × cols) parameter.
    pub fn embed_lookup(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let s = self.shape(table).to_vec();
        if s.len() != 3 {
            return Err(Error::Shape("embed_lookup expects a 3-D table".into()));
        }
        if index >= s[0] {
            return Err(Error::Shape(format!(
                "embed_lookup index {index} out of {}",
                s[0]
            )));
        }
        Ok(self.push(Op::EmbedLookup { table, index }, vec![s[1], s[2]]))
    }

    /// Rotary position encoding over a (positions × d_head) matrix;
    /// position index is the row number, d_head must be even.
    pub fn rotary(&mut self, x: NodeId, base: f64) -> Result<NodeId> {
        let (_, d) = self.expect_2d(x, "rotary")?;
        if d % 2 != 0 {
            return Err(Error::Shape("rotary head dim must be even".into()));
        }
        let s = self.shape(x).to_vec();
        Ok(self.push(Op::Rotary { x, base }, s))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.shape(x).iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.shape(x)
            )));
        }
        Ok(self.push(Op::Reshape { x, shape: shape.clone() }, shape))
    }

    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    pub fn build(self) -> Graph {
        Graph {
            uid: GRAPH_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: self.nodes,
            outputs: self.outputs,
        }
    }
}

/// An immutable computation graph: ordered primitive ops plus named outputs.
pub struct Graph {
    uid: u64,
    nodes: Vec<Node>,
    outputs: Vec<(String, NodeId)>,
}

/// Cached forward evaluation of a [`Graph`]: one tensor per node.
#[derive(Debug)]
pub struct Execution {
    graph_uid: u64,
    values: Vec<Tensor>,
}

impl Execution {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }
}

/// Gradients returned by [`Graph::backward`], keyed by parameter / input name.
#[derive(Debug, Default)]
pub struct Gradients {
    pub params: TensorMap,
    pub inputs: TensorMap,
}

impl Graph {
    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    /// Names and shapes of all declared parameters.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param { name } => Some((name.clone(), n.shape.clone())),
                _ => None,
            })
            .collect()
    }

    /// Pure forward evaluation; caches every node value for a later backward.
    pub fn forward(&self, inputs: &TensorMap, params: &TensorMap) -> Result<Execution> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(idx, node, &values, inputs, params)?;
            if v.shape() != node.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "node {idx} produced {:?}, declared {:?}",
                    v.shape(),
                    node.shape
                )));
            }
            values.push(v);
        }
        Ok(Execution {
            graph_uid: self.uid,
            values,
        })
    }

    /// Named output tensor of an execution.
    pub fn output<'a>(&self, exec: &'a Execution, name: &str) -> Result<&'a Tensor> {
        let id = self
            .output_id(name)
            .ok_or_else(|| Error::Graph(format!("no output named '{name}'")))?;
        Ok(exec.value(id))
    }

    fn eval_node(
        &self,
        idx: usize,
        node: &Node,
        values: &[Tensor],
        inputs: &TensorMap,
        params: &TensorMap,
    ) -> Result<Tensor> {
        let v = |id: NodeId| &values[id.0];
        Ok(match &node.op {
            Op::Input { name } => {
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::MissingTensor(format!("input '{name}' (node {idx})")))?;
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "input '{name}': supplied {:?}, declared {:?}",
                        t.shape(),
                        node.shape
                    )));
                }
                t.clone()
            }
            Op::Param { name } => {
                let t = params
                    .get(name)
                    .ok_or_else(|| Error::MissingTensor(format!("param '{name}' (node {idx})")))?;
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "param '{name}': supplied {:?}, declared {:?}",
                        t.shape(),
                        node.shape
                    )));
                }
                t.clone()
            }
            Op::Const { value } => value.clone(),
            Op::MatMul { a, b } => matmul(v(*a), v(*b)),
            Op::Transpose { x } => transpose(v(*x)),
            Op::Conv1dSame { x, w, bias, dilation } => {
                conv1d_same(v(*x), v(*w), v(*bias), *dilation)
            }
            Op::Add { a, b } => {
                let mut out = v(*a).clone();
                out.add_assign(v(*b));
                out
            }
            Op::Sub { a, b } => {
                let mut out = v(*a).clone();
                for (o, &bv) in out.data_mut().iter_mut().zip(v(*b).data()) {
                    *o -= bv;
                }
                out
            }
            Op::Mul { a, b } => {
                let mut out = v(*a).clone();
                for (o, &bv) in out.data_mut().iter_mut().zip(v(*b).data()) {
                    *o *= bv;
                }
                out
            }
            Op::Scale { x, c } => {
                let mut out = v(*x).clone();
                out.scale_in_place(*c);
                out
            }
            Op::BroadcastAddRows { x, v: vv } => {
                let xv = v(*x);
                let bias = v(*vv);
                let n = xv.cols();
                let mut out = xv.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, &b) in row.iter_mut().zip(bias.data()) {
                        *o += b;
                    }
                }
                out
            }
            Op::BroadcastAddChans { x, v: vv } => {
                let xv = v(*x);
                let bias = v(*vv);
                let n = xv.cols();
                let mut out = xv.clone();
                for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
                    let b = bias.data()[i];
                    for o in row.iter_mut() {
                        *o += b;
                    }
                }
                out
            }
            Op::MulScalarNode { x, s } => {
                let sv = v(*s).item();
                let mut out = v(*x).clone();
                out.scale_in_place(sv);
                out
            }
            Op::SubScalarNode { x, s } => {
                let sv = v(*s).item();
                let mut out = v(*x).clone();
                for o in out.data_mut() {
                    *o -= sv;
                }
                out
            }
            Op::Exp { x } => {
                let mut out = v(*x).clone();
                for o in out.data_mut() {
                    *o = o.exp();
                }
                out
            }
            Op::Neg { x } => {
                let mut out = v(*x).clone();
                out.scale_in_place(-1.0);
                out
            }
            Op::Gelu { x } => {
                let mut out = v(*x).clone();
                for o in out.data_mut() {
                    *o = gelu(*o);
                }
                out
            }
            Op::Softplus { x } => {
                let mut out = v(*x).clone();
                for o in out.data_mut() {
                    *o = softplus(*o);
                }
                out
            }
            Op::SoftmaxRows { x } => softmax_rows(v(*x)),
            Op::LogSoftmaxRows { x } => log_softmax_rows(v(*x)),
            Op::LayerNormRows { x, gamma, beta, eps } => {
                layer_norm_rows(v(*x), v(*gamma), v(*beta), *eps)
            }
            Op::LayerNormChans { x, gamma, beta, eps } => {
                layer_norm_chans(v(*x), v(*gamma), v(*beta), *eps)
            }
            Op::RowL2Normalize { x } => row_l2_normalize(v(*x), idx)?,
            Op::Diag { x } => {
                let xv = v(*x);
                let n = xv.rows();
                let mut out = vec![0.0; n];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = xv.data()[i * n + i];
                }
                Tensor::new(vec![n], out)?
            }
            Op::SumAll { x } => Tensor::scalar(v(*x).data().iter().sum()),
            Op::MeanAll { x } => {
                let xv = v(*x);
                Tensor::scalar(xv.data().iter().sum::<f64>() / xv.numel() as f64)
            }
            Op::ConcatRows { xs } => {
                let n = v(xs[0]).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &x in xs {
                    data.extend_from_slice(v(x).data());
                    rows += v(x).rows();
                }
                Tensor::new(vec![rows, n], data)?
            }
            Op::ConcatCols { xs } => {
                let m = v(xs[0]).rows();
                let total: usize = xs.iter().map(|&x| v(x).cols()).sum();
                let mut data = vec![0.0; m * total];
                let mut col0 = 0;
                for &x in xs {
                    let xv = v(x);
                    let n = xv.cols();
                    for i in 0..m {
                        data[i * total + col0..i * total + col0 + n]
                            .copy_from_slice(xv.row(i));
                    }
                    col0 += n;
                }
                Tensor::new(vec![m, total], data)?
            }
            Op::SliceCols { x, from, to } => {
                let xv = v(*x);
                let m = xv.rows();
                let w = to - from;
                let mut data = Vec::with_capacity(m * w);
                for i in 0..m {
                    data.extend_from_slice(&xv.row(i)[*from..*to]);
                }
                Tensor::new(vec![m, w], data)?
            }
            Op::SelectRows { x, indices } => {
                let xv = v(*x);
                let n = xv.cols();
                let mut data = Vec::with_capacity(indices.len() * n);
                for &i in indices {
                    data.extend_from_slice(xv.row(i));
                }
                Tensor::new(vec![indices.len(), n], data)?
            }
            Op::EmbedLookup { table, index } => {
                let tv = v(*table);
                let (r, c) = (tv.shape()[1], tv.shape()[2]);
                let start = index * r * c;
                Tensor::new(vec![r, c], tv.data()[start..start + r * c].to_vec())?
            }
            Op::Rotary { x, base } => rotary_forward(v(*x), *base),
            Op::Reshape { x, shape } => Tensor::new(shape.clone(), v(*x).data().to_vec())?,
        })
    }

    /// Reverse-mode gradients for all parameters and inputs.
    ///
    /// `cotangents` is keyed by output name; outputs not listed contribute
    /// zero. The execution must come from a forward pass of this same graph.
    pub fn backward(&self, exec: &Execution, cotangents: &TensorMap) -> Result<Gradients> {
        if exec.graph_uid != self.uid {
            return Err(Error::Graph(
                "backward called with an execution from a different graph (run forward first)"
                    .into(),
            ));
        }
        for name in cotangents.keys() {
            if self.output_id(name).is_none() {
                return Err(Error::Graph(format!("cotangent for unknown output '{name}'")));
            }
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (name, id) in &self.outputs {
            if let Some(c) = cotangents.get(name) {
                if c.shape() != exec.value(*id).shape() {
                    return Err(Error::Shape(format!(
                        "cotangent for '{name}': got {:?}, output is {:?}",
                        c.shape(),
                        exec.value(*id).shape()
                    )));
                }
                match &mut adj[id.0] {
                    Some(t) => t.add_assign(c),
                    slot => *slot = Some(c.clone()),
                }
            }
        }

        let mut grads = Gradients::default();
        for idx in (0..self.nodes.len()).rev() {
            let Some(cot) = adj[idx].take() else { continue };
            self.backprop_node(idx, &cot, exec, &mut adj, &mut grads)?;
        }
        Ok(grads)
    }

    fn backprop_node(
        &self,
        idx: usize,
        cot: &Tensor,
        exec: &Execution,
        adj: &mut [Option<Tensor>],
        grads: &mut Gradients,
    ) -> Result<()> {
        let v = |id: NodeId| exec.value(id);
        let accum = |id: NodeId, t: Tensor, adj: &mut [Option<Tensor>]| match &mut adj[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        match &self.nodes[idx].op {
            Op::Input { name } => match grads.inputs.get_mut(name) {
                Some(g) => g.add_assign(cot),
                None => {
                    grads.inputs.insert(name.clone(), cot.clone());
                }
            },
            Op::Param { name } => match grads.params.get_mut(name) {
                Some(g) => g.add_assign(cot),
                None => {
                    grads.params.insert(name.clone(), cot.clone());
                }
            },
            Op::Const { .. } => {}
            Op::MatMul { a, b } => {
                accum(*a, matmul_bt(cot, v(*b)), adj);
                accum(*b, matmul_at(v(*a), cot), adj);
            }
            Op::Transpose { x } => accum(*x, transpose(cot), adj),
            Op::Conv1dSame { x, w, bias, dilation } => {
                let (dx, dw, db) = conv1d_same_backward(v(*x), v(*w), cot, *dilation);
                accum(*x, dx, adj);
                accum(*w, dw, adj);
                accum(*bias, db, adj);
            }
            Op::Add { a, b } => {
                accum(*a, cot.clone(), adj);
                accum(*b, cot.clone(), adj);
            }
            Op::Sub { a, b } => {
                accum(*a, cot.clone(), adj);
                let mut n = cot.clone();
                n.scale_in_place(-1.0);
                accum(*b, n, adj);
            }
            Op::Mul { a, b } => {
                let mut da = cot.clone();
                for (o, &bv) in da.data_mut().iter_mut().zip(v(*b).data()) {
                    *o *= bv;
                }
                accum(*a, da, adj);
                let mut db = cot.clone();
                for (o, &av) in db.data_mut().iter_mut().zip(v(*a).data()) {
                    *o *= av;
                }
                accum(*b, db, adj);
            }
            Op::Scale { x, c } => {
                let mut dx = cot.clone();
                dx.scale_in_place(*c);
                accum(*x, dx, adj);
            }
            Op::BroadcastAddRows { x, v: vv } => {
                accum(*x, cot.clone(), adj);
                let n = cot.cols();
                let mut dv = vec![0.0; n];
                for row in cot.data().chunks(n) {
                    for (d, &c) in dv.iter_mut().zip(row) {
                        *d += c;
                    }
                }
                accum(*vv, Tensor::new(vec![n], dv)?, adj);
            }
            Op::BroadcastAddChans { x, v: vv } => {
                accum(*x, cot.clone(), adj);
                let n = cot.cols();
                let m = cot.rows();
                let mut dv = vec![0.0; m];
                for (i, row) in cot.data().chunks(n).enumerate() {
                    dv[i] = row.iter().sum();
                }
                accum(*vv, Tensor::new(vec![m], dv)?, adj);
            }
            Op::MulScalarNode { x, s } => {
                let sv = v(*s).item();
                let mut dx = cot.clone();
                dx.scale_in_place(sv);
                accum(*x, dx, adj);
                let ds: f64 = cot
                    .data()
                    .iter()
                    .zip(v(*x).data())
                    .map(|(&c, &xv)| c * xv)
                    .sum();
                accum(*s, Tensor::scalar(ds), adj);
            }
            Op::SubScalarNode { x, s } => {
                accum(*x, cot.clone(), adj);
                let ds: f64 = -cot.data().iter().sum::<f64>();
                accum(*s, Tensor::scalar(ds), adj);
            }
            Op::Exp { x } => {
                let y = exec.value(NodeId(idx));
                let mut dx = cot.clone();
                for (o, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                    *o *= yv;
                }
                accum(*x, dx, adj);
            }
            Op::Neg { x } => {
                let mut dx = cot.clone();
                dx.scale_in_place(-1.0);
                accum(*x, dx, adj);
            }
            Op::Gelu { x } => {
                let mut dx = cot.clone();
                for (o, &xv) in dx.data_mut().iter_mut().zip(v(*x).data()) {
                    *o *= gelu_grad(xv);
                }
                accum(*x, dx, adj);
            }
            Op::Softplus { x } => {
                let mut dx = cot.clone();
                for (o, &xv) in dx.data_mut().iter_mut().zip(v(*x).data()) {
                    *o *= sigmoid(xv);
                }
                accum(*x, dx, adj);
            }
            Op::SoftmaxRows { x } => {
                let p = exec.value(NodeId(idx));
                let n = p.cols();
                let mut dx = vec![0.0; p.numel()];
                for (i, (prow, crow)) in p
                    .data()
                    .chunks(n)
                    .zip(cot.data().chunks(n))
                    .enumerate()
                {
                    let dot: f64 = prow.iter().zip(crow).map(|(&pv, &cv)| pv * cv).sum();
                    for j in 0..n {
                        dx[i * n + j] = prow[j] * (crow[j] - dot);
                    }
                }
                accum(*x, Tensor::new(p.shape().to_vec(), dx)?, adj);
            }
            Op::LogSoftmaxRows { x } => {
                let l = exec.value(NodeId(idx));
                let n = l.cols();
                let mut dx = vec![0.0; l.numel()];
                for (i, (lrow, crow)) in l
                    .data()
                    .chunks(n)
                    .zip(cot.data().chunks(n))
                    .enumerate()
                {
                    let csum: f64 = crow.iter().sum();
                    for j in 0..n {
                        dx[i * n + j] = crow[j] - lrow[j].exp() * csum;
                    }
                }
                accum(*x, Tensor::new(l.shape().to_vec(), dx)?, adj);
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let (dx, dg, db) = layer_norm_rows_backward(v(*x), v(*gamma), cot, *eps);
                accum(*x, dx, adj);
                accum(*gamma, dg, adj);
                accum(*beta, db, adj);
            }
            Op::LayerNormChans { x, gamma, beta, eps } => {
                let (dx, dg, db) = layer_norm_chans_backward(v(*x), v(*gamma), cot, *eps);
                accum(*x, dx, adj);
                accum(*gamma, dg, adj);
                accum(*beta, db, adj);
            }
            Op::RowL2Normalize { x } => {
                let xv = v(*x);
                let y = exec.value(NodeId(idx));
                let n = y.cols();
                let mut dx = vec![0.0; y.numel()];
                for i in 0..y.rows() {
                    let xr = xv.row(i);
                    let yr = y.row(i);
                    let cr = cot.row(i);
                    let norm: f64 = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(cr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = (cr[j] - yr[j] * dot) / norm;
                    }
                }
                accum(*x, Tensor::new(xv.shape().to_vec(), dx)?, adj);
            }
            Op::Diag { x } => {
                let n = cot.numel();
                let mut dx = Tensor::zeros(vec![n, n]);
                for i in 0..n {
                    dx.data_mut()[i * n + i] = cot.data()[i];
                }
                accum(*x, dx, adj);
            }
            Op::SumAll { x } => {
                let c = cot.item();
                let mut dx = Tensor::zeros(v(*x).shape().to_vec());
                for o in dx.data_mut() {
                    *o = c;
                }
                accum(*x, dx, adj);
            }
            Op::MeanAll { x } => {
                let c = cot.item() / v(*x).numel() as f64;
                let mut dx = Tensor::zeros(v(*x).shape().to_vec());
                for o in dx.data_mut() {
                    *o = c;
                }
                accum(*x, dx, adj);
            }
            Op::ConcatRows { xs } => {
                let n = cot.cols();
                let mut row0 = 0;
                for &x in xs {
                    let m = v(x).rows();
                    let part = cot.data()[row0 * n..(row0 + m) * n].to_vec();
                    accum(x, Tensor::new(vec![m, n], part)?, adj);
                    row0 += m;
                }
            }
            Op::ConcatCols { xs } => {
                let m = cot.rows();
                let total = cot.cols();
                let mut col0 = 0;
                for &x in xs {
                    let n = v(x).cols();
                    let mut part = vec![0.0; m * n];
                    for i in 0..m {
                        part[i * n..(i + 1) * n]
                            .copy_from_slice(&cot.data()[i * total + col0..i * total + col0 + n]);
                    }
                    accum(x, Tensor::new(vec![m, n], part)?, adj);
                    col0 += n;
                }
            }
            Op::SliceCols { x, from, to } => {
                let xv = v(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let w = to - from;
                let mut dx = Tensor::zeros(vec![m, n]);
                for i in 0..m {
                    dx.data_mut()[i * n + from..i * n + to]
                        .copy_from_slice(&cot.data()[i * w..(i + 1) * w]);
                }
                accum(*x, dx, adj);
            }
            Op::SelectRows { x, indices } => {
                let xv = v(*x);
                let n = xv.cols();
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                for (k, &i) in indices.iter().enumerate() {
                    let src = &cot.data()[k * n..(k + 1) * n];
                    for (o, &c) in dx.data_mut()[i * n..(i + 1) * n].iter_mut().zip(src) {
                        *o += c;
                    }
                }
                accum(*x, dx, adj);
            }
            Op::EmbedLookup { table, index } => {
                let tv = v(*table);
                let (r, c) = (tv.shape()[1], tv.shape()[2]);
                let mut dt = Tensor::zeros(tv.shape().to_vec());
                let start = index * r * c;
                dt.data_mut()[start..start + r * c].copy_from_slice(cot.data());
                accum(*table, dt, adj);
            }
            Op::Rotary { x, base } => {
                accum(*x, rotary_backward(cot, *base), adj);
            }
            Op::Reshape { x, .. } => {
                accum(
                    *x,
                    Tensor::new(v(*x).shape().to_vec(), cot.data().to_vec())?,
                    adj,
                );
            }
        }
        Ok(())
    }
}

// ---- primitive kernels -------------------------------------------------

fn conv1d_same(x: &Tensor, w: &Tensor, bias: &Tensor, dilation: usize) -> Tensor {
    let (ci, t) = (x.shape()[0], x.shape()[1]);
    let (co, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let center = (k / 2) as isize;
    let mut out = vec![0.0; co * t];
    for o in 0..co {
        let orow = &mut out[o * t..(o + 1) * t];
        let b = bias.data()[o];
        for v in orow.iter_mut() {
            *v = b;
        }
        for c in 0..ci {
            let xrow = &x.data()[c * t..(c + 1) * t];
            for tap in 0..k {
                let wv = w.data()[(o * ci + c) * k + tap];
                let off = (tap as isize - center) * dilation as isize;
                let (ys, xs, len) = shifted_range(t, off);
                let dst = &mut orow[ys..ys + len];
                let src = &xrow[xs..xs + len];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    Tensor::new(vec![co, t], out).expect("conv shape")
}

fn conv1d_same_backward(
    x: &Tensor,
    w: &Tensor,
    cot: &Tensor,
    dilation: usize,
) -> (Tensor, Tensor, Tensor) {
    let (ci, t) = (x.shape()[0], x.shape()[1]);
    let (co, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let center = (k / 2) as isize;
    let mut dx = vec![0.0; ci * t];
    let mut dw = vec![0.0; co * ci * k];
    let mut db = vec![0.0; co];
    for o in 0..co {
        let crow = &cot.data()[o * t..(o + 1) * t];
        db[o] = crow.iter().sum();
        for c in 0..ci {
            let xrow = &x.data()[c * t..(c + 1) * t];
            let dxrow = &mut dx[c * t..(c + 1) * t];
            for tap in 0..k {
                let off = (tap as isize - center) * dilation as isize;
                let (ys, xs, len) = shifted_range(t, off);
                let csrc = &crow[ys..ys + len];
                // dw: correlation of cotangent with input
                let xsrc = &xrow[xs..xs + len];
                let mut acc = 0.0;
                for (&cv, &xv) in csrc.iter().zip(xsrc) {
                    acc += cv * xv;
                }
                dw[(o * ci + c) * k + tap] += acc;
                // dx: scatter cotangent through the kernel weight
                let wv = w.data()[(o * ci + c) * k + tap];
                let dst = &mut dxrow[xs..xs + len];
                for (d, &cv) in dst.iter_mut().zip(csrc) {
                    *d += wv * cv;
                }
            }
        }
    }
    (
        Tensor::new(vec![ci, t], dx).expect("dx shape"),
        Tensor::new(vec![co, ci, k], dw).expect("dw shape"),
        Tensor::new(vec![co], db).expect("db shape"),
    )
}

/// Valid output/input start offsets and length for a shift of `off` samples.
fn shifted_range(t: usize, off: isize) -> (usize, usize, usize) {
    if off >= 0 {
        let off = off as usize;
        (0, off, t - off)
    } else {
        let off = (-off) as usize;
        (off, 0, t - off)
    }
}

fn gelu(x: f64) -> f64 {
    const S: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (S * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const S: f64 = 0.7978845608028654;
    let u = S * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * S * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("log_softmax shape")
}

fn layer_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let d = x.cols();
    let mut out = vec![0.0; x.numel()];
    for (i, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("layer norm shape")
}

fn layer_norm_rows_backward(
    x: &Tensor,
    gamma: &Tensor,
    cot: &Tensor,
    eps: f64,
) -> (Tensor, Tensor, Tensor) {
    let d = x.cols();
    let mut dx = vec![0.0; x.numel()];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    for (i, row) in x.data().chunks(d).enumerate() {
        let crow = &cot.data()[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            let gc = gamma.data()[j] * crow[j];
            s1 += gc;
            s2 += gc * xhat;
            dg[j] += crow[j] * xhat;
            db[j] += crow[j];
        }
        s1 /= d as f64;
        s2 /= d as f64;
        for j in 0..d {
            let xhat = (row[j] - mean) * rstd;
            dx[i * d + j] = rstd * (gamma.data()[j] * crow[j] - s1 - xhat * s2);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(vec![d], dg).expect("dg"),
        Tensor::new(vec![d], db).expect("db"),
    )
}

fn layer_norm_chans(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let (c, t) = (x.rows(), x.cols());
    let mut mean = vec![0.0; t];
    let mut sq = vec![0.0; t];
    for i in 0..c {
        let row = x.row(i);
        for j in 0..t {
            mean[j] += row[j];
            sq[j] += row[j] * row[j];
        }
    }
    let inv_c = 1.0 / c as f64;
    let mut rstd = vec![0.0; t];
    for j in 0..t {
        mean[j] *= inv_c;
        let var = sq[j] * inv_c - mean[j] * mean[j];
        rstd[j] = 1.0 / (var.max(0.0) + eps).sqrt();
    }
    let mut out = vec![0.0; c * t];
    for i in 0..c {
        let row = x.row(i);
        let g = gamma.data()[i];
        let b = beta.data()[i];
        let orow = &mut out[i * t..(i + 1) * t];
        for j in 0..t {
            orow[j] = (row[j] - mean[j]) * rstd[j] * g + b;
        }
    }
    Tensor::new(vec![c, t], out).expect("layer norm chans shape")
}

fn layer_norm_chans_backward(
    x: &Tensor,
    gamma: &Tensor,
    cot: &Tensor,
    eps: f64,
) -> (Tensor, Tensor, Tensor) {
    let (c, t) = (x.rows(), x.cols());
    let inv_c = 1.0 / c as f64;
    let mut mean = vec![0.0; t];
    let mut sq = vec![0.0; t];
    for i in 0..c {
        let row = x.row(i);
        for j in 0..t {
            mean[j] += row[j];
            sq[j] += row[j] * row[j];
        }
    }
    let mut rstd = vec![0.0; t];
    for j in 0..t {
        mean[j] *= inv_c;
        let var = sq[j] * inv_c - mean[j] * mean[j];
        rstd[j] = 1.0 / (var.max(0.0) + eps).sqrt();
    }
    // s1[j] = sum_i gamma[i] cot[i][j]; s2[j] = sum_i gamma[i] cot[i][j] xhat[i][j]
    let mut s1 = vec![0.0; t];
    let mut s2 = vec![0.0; t];
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    for i in 0..c {
        let row = x.row(i);
        let crow = cot.row(i);
        let g = gamma.data()[i];
        let mut dgi = 0.0;
        let mut dbi = 0.0;
        for j in 0..t {
            let xhat = (row[j] - mean[j]) * rstd[j];
            let gc = g * crow[j];
            s1[j] += gc;
            s2[j] += gc * xhat;
            dgi += crow[j] * xhat;
            dbi += crow[j];
        }
        dg[i] = dgi;
        db[i] = dbi;
    }
    let mut dx = vec![0.0; c * t];
    for i in 0..c {
        let row = x.row(i);
        let crow = cot.row(i);
        let g = gamma.data()[i];
        let drow = &mut dx[i * t..(i + 1) * t];
        for j in 0..t {
            let xhat = (row[j] - mean[j]) * rstd[j];
            drow[j] = rstd[j] * (g * crow[j] - (s1[j] + xhat * s2[j]) * inv_c);
        }
    }
    (
        Tensor::new(vec![c, t], dx).expect("dx"),
        Tensor::new(vec![c], dg).expect("dg"),
        Tensor::new(vec![c], db).expect("db"),
    )
}

fn row_l2_normalize(x: &Tensor, node_idx: usize) -> Result<Tensor> {
    let n = x.cols();
    let mut out = x.data().to_vec();
    for (i, row) in out.chunks_mut(n).enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Graph(format!(
                "zero-norm row {i} in l2_normalize (node {node_idx})"
            )));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn rotary_angles(pos: usize, base: f64, half: usize) -> impl Iterator<Item = f64> {
    (0..half).map(move |i| pos as f64 * base.powf(-2.0 * i as f64 / (2 * half) as f64))
}

fn rotary_forward(x: &Tensor, base: f64) -> Tensor {
    let (m, d) = (x.rows(), x.cols());
    let half = d / 2;
    let mut out = vec![0.0; m * d];
    for p in 0..m {
        let row = x.row(p);
        let orow = &mut out[p * d..(p + 1) * d];
        for (i, theta) in rotary_angles(p, base, half).enumerate() {
            let (s, c) = theta.sin_cos();
            let a = row[2 * i];
            let b = row[2 * i + 1];
            orow[2 * i] = a * c - b * s;
            orow[2 * i + 1] = a * s + b * c;
        }
    }
    Tensor::new(vec![m, d], out).expect("rotary shape")
}

fn rotary_backward(cot: &Tensor, base: f64) -> Tensor {
    let (m, d) = (cot.rows(), cot.cols());
    let half = d / 2;
    let mut out = vec![0.0; m * d];
    for p in 0..m {
        let crow = cot.row(p);
        let orow = &mut out[p * d..(p + 1) * d];
        for (i, theta) in rotary_angles(p, base, half).enumerate() {
            let (s, c) = theta.sin_cos();
            let da = crow[2 * i];
            let db = crow[2 * i + 1];
            // transpose of the rotation
            orow[2 * i] = da * c + db * s;
            orow[2 * i + 1] = -da * s + db * c;
        }
    }
    Tensor::new(vec![m, d], out).expect("rotary shape")
}
