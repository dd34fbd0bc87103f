//! Minimal reverse-mode automatic differentiation on dense row-major f64
//! matrices. A [`Graph`] is an eager tape: each op computes its value
//! and records enough to replay the chain rule in reverse creation order.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("elementwise division by zero")]
    DivByZero,
    #[error("backward root must be a 1x1 scalar, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("slice bounds {0}..{1} out of range for {2} columns")]
    SliceBounds(usize, usize, usize),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0]
    }
}

/// `a [m,k] * b [k,n]`, ikj loop order for cache-friendly row-major access.
fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_vec(m, n, out)
}

/// `a [m,k] * b^T` where `b` is `[n,k]`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(m, n, out)
}

/// `a^T * b` where `a` is `[k,m]`, `b` is `[k,n]`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_vec(m, n, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Neg(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    LeakyRelu(NodeId, f64),
    Square(NodeId),
    Abs(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager computation tape. Nodes are addressed by [`NodeId`]; `backward`
/// returns per-node gradients without consuming the graph.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input (data, masks, one-hot codes).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AdError> {
        let (la, lb) = (self.value(a).shape(), self.value(b).shape());
        if la != lb {
            return Err(AdError::ShapeMismatch { op, lhs: la, rhs: lb });
        }
        Ok(())
    }

    fn rg(&self, a: NodeId) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AdError> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.zip_op("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.zip_op("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.zip_op("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        if self.value(b).data.iter().any(|&y| y == 0.0) {
            return Err(AdError::DivByZero);
        }
        self.zip_op("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn row_shape_ok(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AdError> {
        let (la, lb) = (self.value(a).shape(), self.value(b).shape());
        if lb.0 != 1 || lb.1 != la.1 {
            return Err(AdError::ShapeMismatch { op, lhs: la, rhs: lb });
        }
        Ok(())
    }

    /// `[r,c] + [1,c]` row broadcast.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.row_shape_ok("add_row", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut data = va.data.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                data[r * va.cols + c] += vb.data[c];
            }
        }
        let t = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    /// `[r,c] * [1,c]` row broadcast.
    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        self.row_shape_ok("mul_row", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut data = va.data.clone();
        for r in 0..va.rows {
            for c in 0..va.cols {
                data[r * va.cols + c] *= vb.data[c];
            }
        }
        let t = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MulRow(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| x * k).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| x + k).collect());
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| -x).collect());
        let rg = self.rg(a);
        self.push(t, Op::Neg(a), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (la, lb) = (self.value(a).shape(), self.value(b).shape());
        if la.1 != lb.0 {
            return Err(AdError::ShapeMismatch { op: "matmul", lhs: la, rhs: lb });
        }
        let t = matmul_nn(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let mut t = Tensor::zeros(va.cols, va.rows);
        for i in 0..va.rows {
            for j in 0..va.cols {
                t.set(j, i, va.get(i, j));
            }
        }
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let s: f64 = va.data.iter().sum::<f64>() / va.data.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Horizontal concatenation `[r, c1] ++ [r, c2]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (la, lb) = (self.value(a).shape(), self.value(b).shape());
        if la.0 != lb.0 {
            return Err(AdError::ShapeMismatch { op: "concat_cols", lhs: la, rhs: lb });
        }
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let cols = va.cols + vb.cols;
        let mut data = Vec::with_capacity(va.rows * cols);
        for r in 0..va.rows {
            data.extend_from_slice(&va.data[r * va.cols..(r + 1) * va.cols]);
            data.extend_from_slice(&vb.data[r * vb.cols..(r + 1) * vb.cols]);
        }
        let t = Tensor::from_vec(va.rows, cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::ConcatCols(a, b), rg))
    }

    /// Column range `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, AdError> {
        let va_shape = self.value(a).shape();
        if start >= end || end > va_shape.1 {
            return Err(AdError::SliceBounds(start, end, va_shape.1));
        }
        let va = &self.nodes[a.0].value;
        let cols = end - start;
        let mut data = Vec::with_capacity(va.rows * cols);
        for r in 0..va.rows {
            data.extend_from_slice(&va.data[r * va.cols + start..r * va.cols + end]);
        }
        let t = Tensor::from_vec(va.rows, cols, data);
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    fn map_op(
        &mut self,
        a: NodeId,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::from_vec(va.rows, va.cols, va.data.iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        if let Some(&bad) = self.value(a).data.iter().find(|&&x| x <= 0.0) {
            return Err(AdError::LogDomain(bad));
        }
        Ok(self.map_op(a, Op::Log(a), f64::ln))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Tanh(a), f64::tanh)
    }

    /// Numerically stable `ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Softplus(a), |x| x.max(0.0) + (-x.abs()).exp().ln_1p())
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        self.map_op(a, Op::LeakyRelu(a, alpha), |x| if x >= 0.0 { x } else { alpha * x })
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Abs(a), f64::abs)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node that
    /// requires gradients and is reachable from the root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AdError> {
        if self.value(root).shape() != (1, 1) {
            return Err(AdError::NonScalarRoot(self.value(root).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn bump(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, di) in g.data.iter_mut().zip(&delta.data) {
                    *gi += di;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let map_input = |a: NodeId, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let va = &self.nodes[a.0].value;
            Tensor::from_vec(
                va.rows,
                va.cols,
                va.data.iter().zip(&g.data).map(|(&x, &gy)| f(x, gy)).collect(),
            )
        };
        match self.nodes[idx].op.clone() {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.bump(grads, a, g.clone());
                self.bump(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.bump(grads, a, g.clone());
                let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|&x| -x).collect());
                self.bump(grads, b, neg);
            }
            Op::Mul(a, b) => {
                let vb = &self.nodes[b.0].value;
                let va = &self.nodes[a.0].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&vb.data).map(|(&gy, &y)| gy * y).collect(),
                );
                let db = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&va.data).map(|(&gy, &x)| gy * x).collect(),
                );
                self.bump(grads, a, da);
                self.bump(grads, b, db);
            }
            Op::Div(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&vb.data).map(|(&gy, &y)| gy / y).collect(),
                );
                let db = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(va.data.iter().zip(&vb.data))
                        .map(|(&gy, (&x, &y))| -gy * x / (y * y))
                        .collect(),
                );
                self.bump(grads, a, da);
                self.bump(grads, b, db);
            }
            Op::AddRow(a, b) => {
                self.bump(grads, a, g.clone());
                let mut db = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        db.data[c] += g.get(r, c);
                    }
                }
                self.bump(grads, b, db);
            }
            Op::MulRow(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let mut da = Tensor::zeros(g.rows, g.cols);
                let mut db = Tensor::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        da.set(r, c, g.get(r, c) * vb.data[c]);
                        db.data[c] += g.get(r, c) * va.get(r, c);
                    }
                }
                self.bump(grads, a, da);
                self.bump(grads, b, db);
            }
            Op::Scale(a, k) => {
                self.bump(grads, a, map_input(a, &|_, gy| gy * k));
            }
            Op::AddScalar(a) => self.bump(grads, a, g.clone()),
            Op::Neg(a) => {
                let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|&x| -x).collect());
                self.bump(grads, a, neg);
            }
            Op::MatMul(a, b) => {
                let da = matmul_nt(g, &self.nodes[b.0].value);
                let db = matmul_tn(&self.nodes[a.0].value, g);
                self.bump(grads, a, da);
                self.bump(grads, b, db);
            }
            Op::Transpose(a) => {
                let mut da = Tensor::zeros(g.cols, g.rows);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        da.set(j, i, g.get(i, j));
                    }
                }
                self.bump(grads, a, da);
            }
            Op::Sum(a) => {
                let va = &self.nodes[a.0].value;
                let gy = g.item();
                self.bump(
                    grads,
                    a,
                    Tensor::from_vec(va.rows, va.cols, vec![gy; va.data.len()]),
                );
            }
            Op::Mean(a) => {
                let va = &self.nodes[a.0].value;
                let gy = g.item() / va.data.len() as f64;
                self.bump(
                    grads,
                    a,
                    Tensor::from_vec(va.rows, va.cols, vec![gy; va.data.len()]),
                );
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols;
                let cb = self.nodes[b.0].value.cols;
                let mut da = Tensor::zeros(g.rows, ca);
                let mut db = Tensor::zeros(g.rows, cb);
                for r in 0..g.rows {
                    for c in 0..ca {
                        da.set(r, c, g.get(r, c));
                    }
                    for c in 0..cb {
                        db.set(r, c, g.get(r, ca + c));
                    }
                }
                self.bump(grads, a, da);
                self.bump(grads, b, db);
            }
            Op::SliceCols(a, start) => {
                let va = &self.nodes[a.0].value;
                let mut da = Tensor::zeros(va.rows, va.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        da.set(r, start + c, g.get(r, c));
                    }
                }
                self.bump(grads, a, da);
            }
            Op::Exp(a) => {
                let vy = &self.nodes[idx].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&vy.data).map(|(&gy, &y)| gy * y).collect(),
                );
                self.bump(grads, a, da);
            }
            Op::Log(a) => self.bump(grads, a, map_input(a, &|x, gy| gy / x)),
            Op::Tanh(a) => {
                let vy = &self.nodes[idx].value;
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&vy.data).map(|(&gy, &y)| gy * (1.0 - y * y)).collect(),
                );
                self.bump(grads, a, da);
            }
            Op::Softplus(a) => {
                // d softplus / dx = sigmoid(x), computed stably.
                self.bump(
                    grads,
                    a,
                    map_input(a, &|x, gy| {
                        let s = if x >= 0.0 {
                            1.0 / (1.0 + (-x).exp())
                        } else {
                            let e = x.exp();
                            e / (1.0 + e)
                        };
                        gy * s
                    }),
                );
            }
            Op::LeakyRelu(a, alpha) => {
                self.bump(grads, a, map_input(a, &|x, gy| if x >= 0.0 { gy } else { gy * alpha }))
            }
            Op::Square(a) => self.bump(grads, a, map_input(a, &|x, gy| 2.0 * x * gy)),
            Op::Abs(a) => {
                self.bump(grads, a, map_input(a, &|x, gy| gy * if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }))
            }
        }
    }
}

/// Compares reverse-mode gradients against central finite differences for a
/// scalar function of the given inputs. Returns the worst relative
/// discrepancy `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over all input
/// coordinates.
pub fn gradcheck<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AdError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    let grads = g.backward(root)?;

    let eval = |pert: &[Tensor]| -> Result<f64, AdError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = pert.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids)?;
        Ok(g.value(root).item())
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let g_ad = grads.get(ids[k]).cloned().unwrap_or_else(|| {
            Tensor::zeros(input.rows, input.cols)
        });
        for e in 0..input.data.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data[e] += h;
            minus[k].data[e] -= h;
            let g_fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let ga = g_ad.data[e];
            let rel = (ga - g_fd).abs() / ga.abs().max(g_fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
