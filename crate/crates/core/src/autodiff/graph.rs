//! Reverse-mode automatic differentiation on an arena tape.
//!
//! A `Graph` owns a flat `Vec` of nodes; building an op appends a node whose
//! inputs are earlier entries, so tape order is already a topological order
//! of the dataflow. `backward` walks the tape once in reverse, accumulating
//! gradients with `+=` so values used several times (fan-out) collect every
//! contribution. Each graph describes a single forward pass and may be
//! differentiated once; training builds a fresh graph per step.
//!
//! Shapes follow numpy's row-major convention. Elementwise binary ops accept
//! either two operands of identical shape or one tensor and one one-element
//! tensor (broadcast scalar); nothing fancier. Gradients are only tracked
//! through nodes flagged `requires_grad`, which propagates forward as the OR
//! of the inputs' flags.

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{Error, Result};
use crate::Tensor;

/// Handle into a graph's node arena. Only meaningful for the graph that
/// issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(NodeId, NodeId),
    BceWithLogits { logits: NodeId, targets: NodeId },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    ops_recorded: usize,
    consumed: bool,
}

fn sigmoid_scalar(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^s) without overflowing for large |s|.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !matches!(op, Op::Leaf) {
            self.ops_recorded += 1;
            debug_assert!(
                data.iter().all(|v| v.is_finite()),
                "non-finite value out of {op:?}"
            );
        }
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a tape leaf.
    pub fn leaf(&mut self, value: &Tensor, requires_grad: bool) -> NodeId {
        self.push(
            value.shape().to_vec(),
            value.data().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: &Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> NodeId {
        self.push(Vec::new(), vec![value], false, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node invariant")
    }

    /// Value of a one-element node.
    pub fn scalar_value(&self, id: NodeId) -> Option<f64> {
        let n = &self.nodes[id.0];
        if n.data.len() == 1 {
            Some(n.data[0])
        } else {
            None
        }
    }

    /// Accumulated gradient of a node, once `backward` has run. Leaves keep
    /// theirs; interior nodes release them as the sweep passes.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[id.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::BadShape {
                op,
                shape: other.to_vec(),
                reason: "expected a rank-2 tensor",
            }),
        }
    }

    // ---- ops ----

    /// Matrix product of two rank-2 nodes, (m,k) x (k,n) -> (m,n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, ka, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(a, b)))
    }

    fn elementwise_binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let (shape, data) = if sa == sb {
            (sa.clone(), da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else if db.len() == 1 {
            let y = db[0];
            (sa.clone(), da.iter().map(|&x| f(x, y)).collect())
        } else if da.len() == 1 {
            let x = da[0];
            (sb.clone(), db.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(shape, data, rg, op))
    }

    /// Elementwise sum; one operand may be a one-element tensor, which
    /// broadcasts against the other.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies every element by a compile-time-known constant.
    pub fn scalar_mul(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        if !k.is_finite() {
            return Err(Error::NonFinite { op: "scalar_mul" });
        }
        let data = self.nodes[a.0].data.iter().map(|&x| k * x).collect();
        let rg = self.requires(a);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::ScalarMul(a, k)))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let rg = self.requires(a);
        self.push(self.nodes[a.0].shape.clone(), data, rg, op)
    }

    /// max(0, x); the subgradient at 0 is taken to be 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Natural log; any input <= 0 (or NaN) is a hard error rather than a
    /// silent NaN in the loss.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.nodes[a.0].data.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::LogDomain(bad));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// e^x; overflow to infinity is a hard error.
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.exp()).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "exp" });
        }
        let rg = self.requires(a);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Exp(a)))
    }

    /// Row-wise softmax of a rank-2 node. Each row is shifted by its max
    /// before exponentiation, so arbitrarily large logits stay finite.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "softmax_rows")?;
        let x = &self.nodes[a.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (oj, &xj) in o.iter_mut().zip(row) {
                *oj = (xj - m).exp();
                z += *oj;
            }
            for oj in o.iter_mut() {
                *oj /= z;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(vec![r, c], out, rg, Op::SoftmaxRows(a)))
    }

    /// Row-wise log-softmax, numerically exact where softmax would round a
    /// small probability to zero.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "log_softmax_rows")?;
        let x = &self.nodes[a.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&xj| (xj - m).exp()).sum();
            let lse = m + z.ln();
            for (oj, &xj) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *oj = xj - lse;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(vec![r, c], out, rg, Op::LogSoftmaxRows(a)))
    }

    /// Sum of all elements, as a rank-0 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.requires(a);
        self.push(Vec::new(), vec![s], rg, Op::Sum(a))
    }

    /// Mean of all elements, as a rank-0 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.requires(a);
        self.push(Vec::new(), vec![s / n], rg, Op::Mean(a))
    }

    /// Horizontal concatenation of two rank-2 nodes with equal row counts:
    /// (r,ca) ++ (r,cb) -> (r, ca+cb).
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.dims2(a, "concat_cols")?;
        let (rb, cb) = self.dims2(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&self.nodes[a.0].data[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.nodes[b.0].data[i * cb..(i + 1) * cb]);
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(vec![ra, ca + cb], out, rg, Op::ConcatCols(a, b)))
    }

    /// Elementwise binary cross-entropy between targets in [0,1] and the
    /// sigmoid of `logits`, computed as softplus(s) - s*t. Fusing the
    /// sigmoid into the loss keeps the value and gradient finite for any
    /// logit, where log(sigmoid(s)) would saturate.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let (sl, st) = (&self.nodes[logits.0].shape, &self.nodes[targets.0].shape);
        if sl != st {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: sl.clone(),
                rhs: st.clone(),
            });
        }
        if let Some(&bad) = self.nodes[targets.0]
            .data
            .iter()
            .find(|&&t| !(0.0..=1.0).contains(&t))
        {
            return Err(Error::TargetOutOfRange(bad));
        }
        let data: Vec<f64> = self.nodes[logits.0]
            .data
            .iter()
            .zip(&self.nodes[targets.0].data)
            .map(|(&s, &t)| softplus(s) - s * t)
            .collect();
        let rg = self.requires(logits) || self.requires(targets);
        Ok(self.push(sl.clone(), data, rg, Op::BceWithLogits { logits, targets }))
    }

    // ---- backward ----

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let grad = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
        debug_assert_eq!(grad.len(), contrib.len());
        for (g, &c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse, leaving
    /// d(root)/d(leaf) in each gradient-tracked leaf. The root must hold a
    /// single element. A tape differentiates once; the second call errors.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.ops_recorded == 0 {
            return Err(Error::EmptyTape);
        }
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].shape.clone(),
            });
        }
        self.consumed = true;
        if !self.nodes[root.0].requires_grad {
            // No gradient-tracked leaf feeds the root; all gradients are zero.
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            // Every consumer of node i sits later on the tape and has been
            // processed, so the gradient is complete; take it, freeing the
            // buffer as the sweep moves down.
            let Some(go) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op;
            match op {
                Op::Leaf => unreachable!(),
                Op::Matmul(a, b) => {
                    let (m, k) = self.dims2(a, "matmul").expect("checked at forward");
                    let n = self.nodes[b.0].shape[1];
                    if self.requires(a) {
                        // dA = dC * B^T
                        let mut da = vec![0.0; m * k];
                        gemm_nt(&go, &self.nodes[b.0].data, &mut da, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        // dB = A^T * dC
                        let mut db = vec![0.0; k * n];
                        gemm_tn(&self.nodes[a.0].data, &go, &mut db, k, m, n);
                        self.accumulate(b, &db);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate_broadcast(a, &go);
                    self.accumulate_broadcast(b, &go);
                }
                Op::Sub(a, b) => {
                    self.accumulate_broadcast(a, &go);
                    let neg: Vec<f64> = go.iter().map(|g| -g).collect();
                    self.accumulate_broadcast(b, &neg);
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let fb = Self::factor(&self.nodes[b.0].data, go.len());
                        let contrib: Vec<f64> =
                            go.iter().zip(fb).map(|(&g, y)| g * y).collect();
                        self.accumulate_broadcast(a, &contrib);
                    }
                    if self.requires(b) {
                        let fa = Self::factor(&self.nodes[a.0].data, go.len());
                        let contrib: Vec<f64> =
                            go.iter().zip(fa).map(|(&g, x)| g * x).collect();
                        self.accumulate_broadcast(b, &contrib);
                    }
                }
                Op::ScalarMul(a, kf) => {
                    let contrib: Vec<f64> = go.iter().map(|&g| kf * g).collect();
                    self.accumulate(a, &contrib);
                }
                Op::Relu(a) => {
                    let contrib: Vec<f64> = go
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &contrib);
                }
                Op::Sigmoid(a) => {
                    let contrib: Vec<f64> = go
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &y)| g * y * (1.0 - y))
                        .collect();
                    self.accumulate(a, &contrib);
                }
                Op::Square(a) => {
                    let contrib: Vec<f64> = go
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&g, &x)| 2.0 * x * g)
                        .collect();
                    self.accumulate(a, &contrib);
                }
                Op::Log(a) => {
                    let contrib: Vec<f64> = go
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&g, &x)| g / x)
                        .collect();
                    self.accumulate(a, &contrib);
                }
                Op::Exp(a) => {
                    let contrib: Vec<f64> = go
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.accumulate(a, &contrib);
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = &self.nodes[i].data;
                    let mut contrib = vec![0.0; r * c];
                    for row in 0..r {
                        let ys = &y[row * c..(row + 1) * c];
                        let gs = &go[row * c..(row + 1) * c];
                        let dot: f64 = ys.iter().zip(gs).map(|(&yj, &gj)| yj * gj).sum();
                        for ((d, &yj), &gj) in
                            contrib[row * c..(row + 1) * c].iter_mut().zip(ys).zip(gs)
                        {
                            *d = yj * (gj - dot);
                        }
                    }
                    self.accumulate(a, &contrib);
                }
                Op::LogSoftmaxRows(a) => {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = &self.nodes[i].data;
                    let mut contrib = vec![0.0; r * c];
                    for row in 0..r {
                        let ys = &y[row * c..(row + 1) * c];
                        let gs = &go[row * c..(row + 1) * c];
                        let gsum: f64 = gs.iter().sum();
                        for ((d, &yj), &gj) in
                            contrib[row * c..(row + 1) * c].iter_mut().zip(ys).zip(gs)
                        {
                            *d = gj - yj.exp() * gsum;
                        }
                    }
                    self.accumulate(a, &contrib);
                }
                Op::Sum(a) => {
                    let contrib = vec![go[0]; self.nodes[a.0].data.len()];
                    self.accumulate(a, &contrib);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].data.len();
                    let contrib = vec![go[0] / n as f64; n];
                    self.accumulate(a, &contrib);
                }
                Op::ConcatCols(a, b) => {
                    let (r, ca) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let cb = self.nodes[b.0].shape[1];
                    let c = ca + cb;
                    if self.requires(a) {
                        let mut da = vec![0.0; r * ca];
                        for row in 0..r {
                            da[row * ca..(row + 1) * ca]
                                .copy_from_slice(&go[row * c..row * c + ca]);
                        }
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        let mut db = vec![0.0; r * cb];
                        for row in 0..r {
                            db[row * cb..(row + 1) * cb]
                                .copy_from_slice(&go[row * c + ca..(row + 1) * c]);
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    if self.requires(logits) {
                        let contrib: Vec<f64> = go
                            .iter()
                            .zip(&self.nodes[logits.0].data)
                            .zip(&self.nodes[targets.0].data)
                            .map(|((&g, &s), &t)| g * (sigmoid_scalar(s) - t))
                            .collect();
                        self.accumulate(logits, &contrib);
                    }
                    if self.requires(targets) {
                        let contrib: Vec<f64> = go
                            .iter()
                            .zip(&self.nodes[logits.0].data)
                            .map(|(&g, &s)| -g * s)
                            .collect();
                        self.accumulate(targets, &contrib);
                    }
                }
            }
        }
        Ok(())
    }

    /// Iterator over an operand's data, repeating a one-element operand to
    /// `len` (the broadcast case).
    fn factor(data: &[f64], len: usize) -> impl Iterator<Item = f64> + '_ {
        let scalar = if data.len() == 1 && len != 1 {
            Some(data[0])
        } else {
            None
        };
        (0..len).map(move |i| scalar.unwrap_or_else(|| data[i]))
    }

    /// Adds `contrib` (shaped like the op output) into `id`'s gradient,
    /// summing it down to one element when `id` was the broadcast side.
    fn accumulate_broadcast(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.requires(id) {
            return;
        }
        if self.nodes[id.0].data.len() == 1 && contrib.len() != 1 {
            let total: f64 = contrib.iter().sum();
            self.accumulate(id, &[total]);
        } else {
            self.accumulate(id, contrib);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(rows).unwrap()
    }

    fn vec1(xs: &[f64]) -> Tensor {
        Tensor::new(vec![1, xs.len()], xs.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_product() {
        let mut g = Graph::new();
        let a = g.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.constant(&t2(&[vec![1.0], vec![1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.data(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(vec![2, 3]));
        let b = g.constant(&Tensor::zeros(vec![4, 2]));
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradients() {
        // f = sum(A*B); dA = ones * B^T, dB = A^T * ones.
        let mut g = Graph::new();
        let a = g.leaf(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]), true);
        let b = g.leaf(&t2(&[vec![5.0, 6.0], vec![7.0, 8.0]]), true);
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.grad(b).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn square_sum_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[3.0]), true);
        let sq = g.square(x);
        let s = g.sum(sq);
        assert_eq!(g.scalar_value(s), Some(9.0));
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn fanout_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[5.0]), true);
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[0.0]), true);
        let y = g.sigmoid(x);
        let s = g.sum(y);
        assert_eq!(g.scalar_value(s), Some(0.5));
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn relu_forward_and_gate() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[-1.0, 0.0, 2.0]), true);
        let y = g.relu(x);
        assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_row() {
        let mut g = Graph::new();
        let x = g.constant(&vec1(&[0.0, 0.0]));
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.data(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_even_for_huge_logits() {
        let mut g = Graph::new();
        let x = g.constant(&t2(&[vec![1000.0, 0.0, -1000.0], vec![3.0, 1.0, 0.2]]));
        let y = g.softmax_rows(x).unwrap();
        for row in g.data(y).chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut g = Graph::new();
        let x = g.constant(&vec1(&[0.3, -1.2, 2.0]));
        let sm = g.softmax_rows(x).unwrap();
        let log_sm = g.log(sm).unwrap();
        let fused = g.log_softmax_rows(x).unwrap();
        for (a, b) in g.data(log_sm).iter().zip(g.data(fused)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut g = Graph::new();
        let x = g.constant(&vec1(&[1.0, -1.0]));
        assert!(matches!(g.log(x), Err(Error::LogDomain(v)) if v == -1.0));
    }

    #[test]
    fn exp_rejects_overflow() {
        let mut g = Graph::new();
        let x = g.constant(&vec1(&[1000.0]));
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[1.0, 2.0]), true);
        let y = g.square(x);
        match g.backward(y) {
            Err(Error::NonScalarRoot { shape }) => assert_eq!(shape, vec![1, 2]),
            other => panic!("expected NonScalarRoot, got {other:?}"),
        }
    }

    #[test]
    fn backward_requires_recorded_ops() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(1.0), true);
        assert!(matches!(g.backward(x), Err(Error::EmptyTape)));
    }

    #[test]
    fn backward_runs_once_per_tape() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(2.0), true);
        let y = g.square(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn scalar_broadcast_add_and_mul() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[1.0, 2.0, 3.0]), true);
        let k = g.leaf(&Tensor::scalar(2.0), true);
        let shifted = g.add(x, k).unwrap();
        assert_eq!(g.data(shifted), &[3.0, 4.0, 5.0]);
        let scaled = g.mul(shifted, k).unwrap();
        assert_eq!(g.data(scaled), &[6.0, 8.0, 10.0]);
        let s = g.sum(scaled);
        g.backward(s).unwrap();
        // d/dx_i = k; d/dk = sum_i [(x_i + k) + k] = 6 + 3k + 3k = 18.
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.grad(k).unwrap(), &[18.0]);
    }

    #[test]
    fn concat_cols_layout_and_split() {
        let mut g = Graph::new();
        let a = g.leaf(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]), true);
        let b = g.leaf(&t2(&[vec![5.0], vec![6.0]]), true);
        let c = g.concat_cols(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.data(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let w = g.constant(&t2(&[vec![1.0, 10.0, 100.0], vec![1.0, 10.0, 100.0]]));
        let prod = g.mul(c, w).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 10.0, 1.0, 10.0]);
        assert_eq!(g.grad(b).unwrap(), &[100.0, 100.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[1.0, 2.0, 3.0, 4.0]), true);
        let m = g.mean(x);
        assert_eq!(g.scalar_value(m), Some(2.5));
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn bce_matches_unfused_form_on_moderate_logits() {
        let (s, t) = (0.7_f64, 0.3_f64);
        let p = 1.0 / (1.0 + (-s).exp());
        let want = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let mut g = Graph::new();
        let logits = g.constant(&vec1(&[s]));
        let targets = g.constant(&vec1(&[t]));
        let l = g.bce_with_logits(logits, targets).unwrap();
        assert!((g.data(l)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn bce_is_finite_at_saturating_logits() {
        let mut g = Graph::new();
        let logits = g.leaf(&vec1(&[50.0, -50.0]), true);
        let targets = g.constant(&vec1(&[0.0, 1.0]));
        let l = g.bce_with_logits(logits, targets).unwrap();
        // Fully-confident wrong answers cost about |s| nats each.
        assert!((g.data(l)[0] - 50.0).abs() < 1e-9);
        assert!((g.data(l)[1] - 50.0).abs() < 1e-9);
        let s = g.sum(l);
        g.backward(s).unwrap();
        let grad = g.grad(logits).unwrap();
        assert!((grad[0] - 1.0).abs() < 1e-9);
        assert!((grad[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn bce_rejects_targets_outside_unit_interval() {
        let mut g = Graph::new();
        let logits = g.constant(&vec1(&[0.0]));
        let targets = g.constant(&vec1(&[1.5]));
        assert!(matches!(
            g.bce_with_logits(logits, targets),
            Err(Error::TargetOutOfRange(v)) if v == 1.5
        ));
    }

    #[test]
    fn gradients_flow_only_into_tracked_leaves() {
        let mut g = Graph::new();
        let x = g.leaf(&vec1(&[1.0]), true);
        let c = g.constant(&vec1(&[3.0]));
        let prod = g.mul(x, c).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0]);
        assert!(g.grad(c).is_none());
    }
}
