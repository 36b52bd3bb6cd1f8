//! Reverse-mode automatic differentiation on an append-only graph.
//!
//! Every forward operation appends a node holding its value. [`Graph::grad`]
//! walks the graph backwards and expresses each vector-Jacobian product with
//! ordinary graph operations, so the returned gradients are themselves nodes
//! and can be differentiated again. That is what makes the gradient penalty
//! of a Wasserstein critic trainable without hand-derived second derivatives.

use crate::error::{Error, Result};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    SumAll(NodeId),
    /// 1×n column sums of an m×n input.
    SumRows(NodeId),
    /// m×1 row sums of an m×n input.
    SumCols(NodeId),
    BroadcastRows(NodeId),
    BroadcastCols(NodeId),
    BroadcastScalar(NodeId),
    Slice { a: NodeId, start: usize },
    Pad { a: NodeId, start: usize },
    Concat(Vec<NodeId>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Computation graph. Nodes are never modified after creation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// A differentiable leaf (parameter or input).
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Same value as `id`, cut off from gradient flow.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = Matrix::matmul(self.value(a), self.value(b), ta, tb);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "elementwise shape mismatch in {op:?}"
        );
        let v = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(&[a, b]);
        self.push(v, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for (o, &x) in out.data_mut().iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SumRows(a), rg)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let out = Matrix::from_vec(
            m.rows(),
            1,
            (0..m.rows()).map(|r| m.row(r).iter().sum()).collect(),
        );
        let rg = self.rg(&[a]);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Repeats a 1×n row `rows` times.
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let m = self.value(a);
        assert_eq!(m.rows(), 1, "broadcast_rows expects a 1×n input");
        let mut data = Vec::with_capacity(rows * m.cols());
        for _ in 0..rows {
            data.extend_from_slice(m.data());
        }
        let v = Matrix::from_vec(rows, m.cols(), data);
        let rg = self.rg(&[a]);
        self.push(v, Op::BroadcastRows(a), rg)
    }

    /// Repeats an m×1 column `cols` times.
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        let m = self.value(a);
        assert_eq!(m.cols(), 1, "broadcast_cols expects an m×1 input");
        let mut data = Vec::with_capacity(m.rows() * cols);
        for &x in m.data() {
            data.resize(data.len() + cols, x);
        }
        let v = Matrix::from_vec(m.rows(), cols, data);
        let rg = self.rg(&[a]);
        self.push(v, Op::BroadcastCols(a), rg)
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let x = self.value(a).item();
        let rg = self.rg(&[a]);
        self.push(Matrix::filled(rows, cols, x), Op::BroadcastScalar(a), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let v = self.value(a).slice_cols(start, width);
        let rg = self.rg(&[a]);
        self.push(v, Op::Slice { a, start }, rg)
    }

    /// Embeds `a` at column `start` of a zero matrix with `total` columns.
    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        let m = self.value(a);
        assert!(start + m.cols() <= total, "pad_cols out of range");
        let mut v = Matrix::zeros(m.rows(), total);
        for r in 0..m.rows() {
            v.row_mut(r)[start..start + m.cols()].copy_from_slice(m.row(r));
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::Pad { a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0];
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats);
        let rg = self.rg(parts);
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    /// x·W + b with `b` a 1×out row.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        let rows = self.shape(xw).0;
        let bb = self.broadcast_rows(b, rows);
        self.add(xw, bb)
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let rows = self.shape(x).0;
        let rb = self.broadcast_rows(row, rows);
        self.add(x, rb)
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let rows = self.shape(x).0;
        let rb = self.broadcast_rows(row, rows);
        self.mul(x, rb)
    }

    /// Piecewise-linear activation `x` for x > 0, `slope·x` otherwise.
    /// The derivative mask is a constant, so second derivatives are zero.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { slope });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    /// Per-row normalization over the feature axis followed by gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let (_, n) = self.shape(x);
        let s = self.sum_cols(x);
        let mean = self.scale(s, 1.0 / n as f64);
        let mb = self.broadcast_cols(mean, n);
        let centered = self.sub(x, mb);
        let sq = self.square(centered);
        let ss = self.sum_cols(sq);
        let var = self.scale(ss, 1.0 / n as f64);
        let ve = self.add_scalar(var, eps);
        let std = self.sqrt(ve);
        let sb = self.broadcast_cols(std, n);
        let normed = self.div(centered, sb);
        let scaled = self.mul_row(normed, gain);
        self.add_row(scaled, bias)
    }

    /// Row-wise softmax. The row maximum is subtracted as a constant, which
    /// leaves both value and derivatives unchanged.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let m = self.value(x);
        let maxes = Matrix::from_vec(
            m.rows(),
            1,
            (0..m.rows())
                .map(|r| m.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        );
        let n = m.cols();
        let mx = self.constant(maxes);
        let mxb = self.broadcast_cols(mx, n);
        let shifted = self.sub(x, mxb);
        let e = self.exp(shifted);
        let s = self.sum_cols(e);
        let sb = self.broadcast_cols(s, n);
        self.div(e, sb)
    }

    fn ones_like(&mut self, id: NodeId) -> NodeId {
        let (r, c) = self.shape(id);
        self.constant(Matrix::filled(r, c, 1.0))
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], target: NodeId, g: NodeId) {
        let slot = &mut adj[target.0];
        *slot = Some(match *slot {
            None => g,
            Some(prev) => self.add(prev, g),
        });
    }

    /// Gradients of the scalar `output` with respect to each node in `wrt`.
    ///
    /// The returned gradients are graph nodes: when they depend on
    /// differentiable leaves they can be fed into a further `grad` call.
    /// Nodes in `wrt` that `output` does not depend on get a zero constant.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(output)
            )));
        }
        // Only nodes that depend on a requested leaf need adjoints.
        let end = output.0 + 1;
        let mut relevant = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let hit = match &self.nodes[i].op {
                Op::Leaf => false,
                Op::MatMul { a, b, .. }
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::Div(a, b) => relevant[a.0] || relevant[b.0],
                Op::Scale(a, _)
                | Op::AddScalar(a)
                | Op::Tanh(a)
                | Op::Exp(a)
                | Op::Log(a)
                | Op::Sqrt(a)
                | Op::Square(a)
                | Op::SumAll(a)
                | Op::SumRows(a)
                | Op::SumCols(a)
                | Op::BroadcastRows(a)
                | Op::BroadcastCols(a)
                | Op::BroadcastScalar(a)
                | Op::Slice { a, .. }
                | Op::Pad { a, .. } => relevant[a.0],
                Op::Concat(parts) => parts.iter().any(|p| relevant[p.0]),
            };
            relevant[i] = hit;
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; end];
        if relevant[output.0] {
            adj[output.0] = Some(self.ones_like(output));
        }
        for i in (0..end).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let node = NodeId(i);
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    if relevant[a.0] {
                        let da = match (ta, tb) {
                            (false, false) => self.matmul_t(g, b, false, true),
                            (false, true) => self.matmul_t(g, b, false, false),
                            (true, false) => self.matmul_t(b, g, false, true),
                            (true, true) => self.matmul_t(b, g, true, true),
                        };
                        self.accumulate(&mut adj, a, da);
                    }
                    if relevant[b.0] {
                        let db = match (ta, tb) {
                            (false, false) => self.matmul_t(a, g, true, false),
                            (false, true) => self.matmul_t(g, a, true, false),
                            (true, false) => self.matmul_t(a, g, false, false),
                            (true, true) => self.matmul_t(g, a, true, true),
                        };
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if relevant[a.0] {
                        self.accumulate(&mut adj, a, g);
                    }
                    if relevant[b.0] {
                        self.accumulate(&mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if relevant[a.0] {
                        self.accumulate(&mut adj, a, g);
                    }
                    if relevant[b.0] {
                        let nb = self.neg(g);
                        self.accumulate(&mut adj, b, nb);
                    }
                }
                Op::Mul(a, b) => {
                    if relevant[a.0] {
                        let da = self.mul(g, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if relevant[b.0] {
                        let db = self.mul(g, a);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if relevant[a.0] {
                        let da = self.div(g, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if relevant[b.0] {
                        // d(a/b)/db = -(a/b)/b
                        let go = self.mul(g, node);
                        let q = self.div(go, b);
                        let db = self.neg(q);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Scale(a, c) => {
                    let da = self.scale(g, c);
                    self.accumulate(&mut adj, a, da);
                }
                Op::AddScalar(a) => self.accumulate(&mut adj, a, g),
                Op::Tanh(a) => {
                    let y2 = self.square(node);
                    let ny2 = self.neg(y2);
                    let d = self.add_scalar(ny2, 1.0);
                    let da = self.mul(g, d);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Exp(a) => {
                    let da = self.mul(g, node);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Log(a) => {
                    let da = self.div(g, a);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Sqrt(a) => {
                    let half = self.scale(g, 0.5);
                    let da = self.div(half, node);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Square(a) => {
                    let two_a = self.scale(a, 2.0);
                    let da = self.mul(g, two_a);
                    self.accumulate(&mut adj, a, da);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let da = self.broadcast_scalar(g, r, c);
                    self.accumulate(&mut adj, a, da);
                }
                Op::SumRows(a) => {
                    let r = self.shape(a).0;
                    let da = self.broadcast_rows(g, r);
                    self.accumulate(&mut adj, a, da);
                }
                Op::SumCols(a) => {
                    let c = self.shape(a).1;
                    let da = self.broadcast_cols(g, c);
                    self.accumulate(&mut adj, a, da);
                }
                Op::BroadcastRows(a) => {
                    let da = self.sum_rows(g);
                    self.accumulate(&mut adj, a, da);
                }
                Op::BroadcastCols(a) => {
                    let da = self.sum_cols(g);
                    self.accumulate(&mut adj, a, da);
                }
                Op::BroadcastScalar(a) => {
                    let da = self.sum_all(g);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Slice { a, start } => {
                    let total = self.shape(a).1;
                    let da = self.pad_cols(g, start, total);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Pad { a, start } => {
                    let w = self.shape(a).1;
                    let da = self.slice_cols(g, start, w);
                    self.accumulate(&mut adj, a, da);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(p).1;
                        if relevant[p.0] {
                            let dp = self.slice_cols(g, start, w);
                            self.accumulate(&mut adj, p, dp);
                        }
                        start += w;
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(w);
                    self.constant(Matrix::zeros(r, c))
                }
            })
            .collect())
    }

    /// Convenience wrapper returning gradient values only.
    pub fn backward(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Matrix>> {
        let grads = self.grad(output, wrt)?;
        Ok(grads.into_iter().map(|g| self.value(g).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(grads[0].item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let c = g.constant(Matrix::scalar(4.0));
        let y = g.square(c);
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(grads[0], Matrix::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::zeros(2, 2));
        assert!(g.grad(x, &[x]).is_err());
    }

    #[test]
    fn second_derivative_of_cube() {
        // f = x^3 via x * x^2; f' = 3x^2; f'' = 6x
        let mut g = Graph::new();
        let x = g.variable(Matrix::scalar(2.0));
        let x2 = g.square(x);
        let f = g.mul(x, x2);
        let d1 = g.grad(f, &[x]).unwrap()[0];
        assert_eq!(g.value(d1).item(), 12.0);
        let d2 = g.grad(d1, &[x]).unwrap()[0];
        assert_eq!(g.value(d2).item(), 12.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 700.0]));
        let s = g.softmax_rows(x);
        for r in 0..2 {
            let sum: f64 = g.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::from_fn(4, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 * 1.7 - r as f64));
        let gain = g.constant(Matrix::filled(1, 6, 1.0));
        let bias = g.constant(Matrix::zeros(1, 6));
        let y = g.layer_norm(x, gain, bias, 1e-5);
        let v = g.value(y);
        for r in 0..4 {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4, "variance {var}");
        }
    }

    #[test]
    fn leaky_relu_and_tanh_values() {
        let mut g = Graph::new();
        let x = g.variable(Matrix::from_vec(1, 2, vec![-2.0, 0.0]));
        let y = g.leaky_relu(x, 0.01);
        assert_eq!(g.value(y).data()[0], -0.02);
        let t = g.tanh(x);
        assert_eq!(g.value(t).data()[1], 0.0);
    }
}
