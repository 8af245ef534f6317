use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{broadcast_shape, for_each_broadcast, split_axis, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum MatMulLayout {
    /// `b` is a plain matrix; every leading axis of `a` is folded into rows.
    Rows { rows: usize },
    /// `a` is a plain matrix applied to each matrix of a batched `b`.
    LeftShared { batch: usize, m: usize },
    /// Both operands carry identical batch axes.
    Paired { batch: usize, m: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul {
        a: Var,
        b: Var,
        layout: MatMulLayout,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var, usize),
    Dropout(Var, Vec<f64>),
    Sum(Var, usize),
    Mean(Var, usize),
    Concat(Vec<Var>, usize),
    Broadcast(Var),
    Reshape(Var),
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of primitive applications.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it.
/// `backward` never consumes the tape: it can be replayed, and leaf gradients
/// accumulate across calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A tracked input whose gradient is retained after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("gradient shape matches value"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    // ---- forward primitives -------------------------------------------------

    /// Matrix product over the last two axes, `[.., m, k] · [.., k, n]`.
    ///
    /// Batch axes must either match or be absent on one side.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (layout, out_shape, data) = if sb.len() == 2 {
            let rows: usize = sa[..sa.len() - 1].iter().product();
            let mut out = vec![0.0; rows * n];
            gemm_nn(rows, k, n, av, bv, &mut out);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            (MatMulLayout::Rows { rows }, shape, out)
        } else if sa.len() == 2 {
            let batch: usize = sb[..sb.len() - 2].iter().product();
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                gemm_nn(
                    m,
                    k,
                    n,
                    av,
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
            let mut shape = sb[..sb.len() - 2].to_vec();
            shape.extend([m, n]);
            (MatMulLayout::LeftShared { batch, m }, shape, out)
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch());
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                gemm_nn(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
            let mut shape = sa[..sa.len() - 2].to_vec();
            shape.extend([m, n]);
            (MatMulLayout::Paired { batch, m }, shape, out)
        };
        let tracked = self.tracked_any(&[a, b]);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::MatMul { a, b, layout, k, n }, tracked))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if sa == sb {
            let data = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(sa.to_vec(), data);
        }
        let out = broadcast_shape(op_name, sa, sb)?;
        let mut left = Vec::with_capacity(out.iter().product());
        for_each_broadcast(&out, sa, |_, i| left.push(av[i]));
        let mut data = left;
        for_each_broadcast(&out, sb, |j, i| data[j] = f(data[j], bv[i]));
        Tensor::new(out, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    /// Element-wise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let tracked = self.is_tracked(a);
        self.push(value, Op::Scale(a, k), tracked)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let tracked = self.is_tracked(a);
        self.push(value, Op::AddScalar(a), tracked)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let tracked = self.is_tracked(a);
        self.push(value, op, tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, move |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = self.value(a);
        let (outer, len, inner) = split_axis(src.shape(), axis)?;
        let x = src.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (x[at(i)] - max).exp();
                    y[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    y[at(i)] /= total;
                }
            }
        }
        let value = Tensor::new(src.shape().to_vec(), y)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Softmax(a, axis), tracked))
    }

    /// Inverted dropout: identity when `train` is false, otherwise keeps each
    /// entry with probability `keep` and rescales survivors by `1/keep`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, keep: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(TensorError::Invalid(format!(
                "dropout keep-probability must be in (0, 1], got {keep}"
            )));
        }
        if !train || keep == 1.0 {
            return Ok(a);
        }
        let src = self.value(a);
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Dropout(a, mask), tracked))
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let src = self.value(a);
        let (outer, len, inner) = split_axis(src.shape(), axis)?;
        let x = src.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let row = &x[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (acc, v) in y[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean && len > 0 {
            let inv = 1.0 / len as f64;
            y.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = src.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, y)?;
        let tracked = self.is_tracked(a);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        Ok(self.push(value, op, tracked))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    /// Mean of every entry, as a rank-0 scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.mean(flat, 0)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.sum(flat, 0)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let tracked = self.tracked_any(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec(), axis), tracked))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a);
        let out = broadcast_shape("broadcast", src, shape)?;
        if out != shape {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: src.to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_broadcast(shape, src, |_, i| data.push(x[i]));
        let value = Tensor::new(shape.to_vec(), data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Broadcast(a), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let (outer, full, inner) = split_axis(src.shape(), axis)?;
        if start + len > full {
            return Err(TensorError::Invalid(format!(
                "slice {start}..{} exceeds axis length {full}",
                start + len
            )));
        }
        let x = src.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&x[from..from + len * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Slice { a, axis, start }, tracked))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let s = src.shape();
        if s.len() < 2 {
            return Err(TensorError::AxisOutOfRange { axis: 1, rank: s.len() });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = src.len() / (r * c).max(1);
        let x = src.data();
        let mut data = vec![0.0; x.len()];
        for b in 0..batch {
            transpose_block(&x[b * r * c..], &mut data[b * r * c..], r, c);
        }
        let mut shape = s.to_vec();
        let rank = shape.len();
        shape.swap(rank - 2, rank - 1);
        let value = Tensor::new(shape, data)?;
        let tracked = self.is_tracked(a);
        Ok(self.push(value, Op::Transpose(a), tracked))
    }

    /// `x · w (+ bias)` with `w` stored input-major (`[in, out]`).
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ---- reverse pass ------------------------------------------------------

    /// Propagates `∂root/∂·` to every tracked leaf, adding into its gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(TensorError::NotScalar(root_node.value.shape().to_vec()));
        }
        if !root_node.tracked {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
        }
        for (i, g) in adj.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, layout, k, n } => {
                let (k, n) = (*k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ta = self.is_tracked(*a);
                let tb = self.is_tracked(*b);
                match *layout {
                    MatMulLayout::Rows { rows } => {
                        if ta {
                            gemm_nt(rows, n, k, g, bv, self.slot(adj, *a));
                        }
                        if tb {
                            gemm_tn(rows, k, n, av, g, self.slot(adj, *b));
                        }
                    }
                    MatMulLayout::LeftShared { batch, m } => {
                        for bi in 0..batch {
                            let gb = &g[bi * m * n..(bi + 1) * m * n];
                            let bb = &bv[bi * k * n..(bi + 1) * k * n];
                            if ta {
                                gemm_nt(m, n, k, gb, bb, self.slot(adj, *a));
                            }
                            if tb {
                                let db = &mut self.slot(adj, *b)[bi * k * n..(bi + 1) * k * n];
                                gemm_tn(m, k, n, av, gb, db);
                            }
                        }
                    }
                    MatMulLayout::Paired { batch, m } => {
                        for bi in 0..batch {
                            let gb = &g[bi * m * n..(bi + 1) * m * n];
                            if ta {
                                let bb = &bv[bi * k * n..(bi + 1) * k * n];
                                let da = &mut self.slot(adj, *a)[bi * m * k..(bi + 1) * m * k];
                                gemm_nt(m, n, k, gb, bb, da);
                            }
                            if tb {
                                let ab = &av[bi * m * k..(bi + 1) * m * k];
                                let db = &mut self.slot(adj, *b)[bi * k * n..(bi + 1) * k * n];
                                gemm_tn(m, k, n, ab, gb, db);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(adj, *a, out.shape(), g, |_, gv| gv);
                self.accumulate_broadcast(adj, *b, out.shape(), g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(adj, *a, out.shape(), g, |_, gv| gv);
                self.accumulate_broadcast(adj, *b, out.shape(), g, |_, gv| -gv);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let shape = out.shape();
                if self.is_tracked(a) {
                    let other = self.expanded(b, shape);
                    self.accumulate_broadcast(adj, a, shape, g, |j, gv| gv * other[j]);
                }
                if self.is_tracked(b) {
                    let other = self.expanded(a, shape);
                    self.accumulate_broadcast(adj, b, shape, g, |j, gv| gv * other[j]);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.elementwise_grad(adj, *a, g, |_, _, gv| gv * k);
            }
            Op::AddScalar(a) => self.elementwise_grad(adj, *a, g, |_, _, gv| gv),
            Op::Relu(a) => self.elementwise_grad(adj, *a, g, |x, _, gv| if x > 0.0 { gv } else { 0.0 }),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                self.elementwise_grad(adj, *a, g, move |x, _, gv| if x > 0.0 { gv } else { s * gv })
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.elementwise_grad(adj, *a, g, |_, j, gv| gv * y[j] * (1.0 - y[j]))
            }
            Op::Tanh(a) => {
                let y = out.data();
                self.elementwise_grad(adj, *a, g, |_, j, gv| gv * (1.0 - y[j] * y[j]))
            }
            Op::Abs(a) => self.elementwise_grad(adj, *a, g, |x, _, gv| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }),
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(out.shape(), *axis)?;
                let y = out.data();
                let da = self.slot(adj, *a);
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                        for i in 0..len {
                            da[at(i)] += y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => self.elementwise_grad(adj, *a, g, |_, j, gv| gv * mask[j]),
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let src_shape = self.shape(*a).to_vec();
                let (outer, len, inner) = split_axis(&src_shape, *axis)?;
                let factor = match node.op {
                    Op::Mean(..) if len > 0 => 1.0 / len as f64,
                    _ => 1.0,
                };
                let da = self.slot(adj, *a);
                for o in 0..outer {
                    let grow = &g[o * inner..(o + 1) * inner];
                    for i in 0..len {
                        let row = &mut da[(o * len + i) * inner..(o * len + i + 1) * inner];
                        row.iter_mut().zip(grow).for_each(|(d, gv)| *d += gv * factor);
                    }
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis)?;
                let mut start = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.is_tracked(*v) {
                        let dv = self.slot(adj, *v);
                        for o in 0..outer {
                            let from = (o * total + start) * inner;
                            let src = &g[from..from + len * inner];
                            dv[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, gv)| *d += gv);
                        }
                    }
                    start += len;
                }
            }
            Op::Broadcast(a) => self.accumulate_broadcast(adj, *a, out.shape(), g, |_, gv| gv),
            Op::Reshape(a) => self.elementwise_grad(adj, *a, g, |_, _, gv| gv),
            Op::Slice { a, axis, start } => {
                let src_shape = self.shape(*a).to_vec();
                let (outer, full, inner) = split_axis(&src_shape, *axis)?;
                let len = out.shape()[*axis];
                let da = self.slot(adj, *a);
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    da[to..to + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                        .for_each(|(d, gv)| *d += gv);
                }
            }
            Op::Transpose(a) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = out.len() / (r * c).max(1);
                let da = self.slot(adj, *a);
                let mut tmp = vec![0.0; r * c];
                for b in 0..batch {
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    transpose_block(&g[b * r * c..], &mut tmp, r, c);
                    da[b * r * c..(b + 1) * r * c]
                        .iter_mut()
                        .zip(&tmp)
                        .for_each(|(d, v)| *d += v);
                }
            }
        }
        Ok(())
    }

    /// Mutable adjoint buffer for `v`, created zeroed on first use.
    #[allow(clippy::mut_from_ref)]
    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        adj[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn elementwise_grad(&self, adj: &mut [Option<Vec<f64>>], a: Var, g: &[f64], f: impl Fn(f64, usize, f64) -> f64) {
        if !self.is_tracked(a) {
            return;
        }
        let x = self.value(a).data();
        let da = self.slot(adj, a);
        for (j, (d, &gv)) in da.iter_mut().zip(g).enumerate() {
            *d += f(x[j], j, gv);
        }
    }

    fn expanded(&self, v: Var, shape: &[usize]) -> Vec<f64> {
        let t = self.value(v);
        if t.shape() == shape {
            return t.data().to_vec();
        }
        let x = t.data();
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_broadcast(shape, t.shape(), |_, i| data.push(x[i]));
        data
    }

    fn accumulate_broadcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        v: Var,
        out_shape: &[usize],
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if !self.is_tracked(v) {
            return;
        }
        let src_shape = self.shape(v).to_vec();
        let dv = self.slot(adj, v);
        if src_shape == out_shape {
            for (j, (d, &gv)) in dv.iter_mut().zip(g).enumerate() {
                *d += f(j, gv);
            }
        } else {
            for_each_broadcast(out_shape, &src_shape, |j, off| dv[off] += f(j, g[j]));
        }
    }
}

fn transpose_block(src: &[f64], dst: &mut [f64], r: usize, c: usize) {
    for i in 0..r {
        for j in 0..c {
            dst[j * r + i] += src[i * c + j];
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
