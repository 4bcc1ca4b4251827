//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive appends a node to the tape; node indices are therefore a
//! topological order and the backward pass is a single reverse sweep. A graph
//! can be differentiated once; a second `backward` call is rejected.

use std::cell::{Ref, RefCell};

use super::tensor::{gemm, Tensor};
use super::NumError;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { a: Var, b: Var },
    MulBias { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Relu { a: Var },
    Exp { a: Var },
    Log { a: Var },
    Tanh { a: Var },
    Sqrt { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    Max { a: Var, arg: usize },
    SumLast { a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Concat { parts: Vec<Var>, last_axis: bool },
    GatherRows { a: Var, idx: Vec<usize> },
    Reshape { a: Var },
    Permute0213 { a: Var, dims: [usize; 4] },
    MeanAxis1 { a: Var, dims: [usize; 3] },
    /// Scalar whose Jacobian w.r.t. its single input was computed in the
    /// forward pass (nearest-neighbour losses with frozen assignments).
    Precomputed { a: Var, jacobian: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

struct Inner {
    nodes: Vec<Node>,
    differentiated: bool,
}

/// Recording of one forward computation.
pub struct Graph {
    inner: RefCell<Inner>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar w.r.t. every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, detail: String) -> NumError {
    NumError::Dimension { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self { inner: RefCell::new(Inner { nodes: Vec::new(), differentiated: false }) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op, requires_grad });
        Var(inner.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.inner.borrow(), |inner| &inner.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.0].requires_grad
    }

    /// Leaf node; `requires_grad` marks it as a differentiable input.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    // ── linear algebra ────────────────────────────────────────────────

    /// `a · b` where `a` has rank ≥ 2 (leading axes are flattened into rows)
    /// and `b` is a matrix.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = {
            let (ta, tb) = (self.value(a), self.value(b));
            if ta.rank() < 2 || tb.rank() != 2 || ta.last_dim() != tb.shape()[0] {
                return Err(dim_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
            }
            let k = ta.last_dim();
            let m = ta.numel() / k.max(1);
            let n = tb.shape()[1];
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
            let mut shape = ta.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::new(&shape, out)?
        };
        Ok(self.push(value, Op::MatMul { a, b }, self.rg(&[a, b])))
    }

    /// Batched product of `[g, n, k]` with `[g, k, m]`, or with `[g, m, k]`
    /// transposed when `transpose_b`.
    pub fn bmm(&self, a: Var, b: Var, transpose_b: bool) -> Result<Var, NumError> {
        let value = {
            let (ta, tb) = (self.value(a), self.value(b));
            let bad = || dim_err("bmm", format!("{:?} x {:?} (transpose_b={transpose_b})", ta.shape(), tb.shape()));
            if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
                return Err(bad());
            }
            let (g, n, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
            let (kb, m) = if transpose_b { (tb.shape()[2], tb.shape()[1]) } else { (tb.shape()[1], tb.shape()[2]) };
            if kb != k {
                return Err(bad());
            }
            let mut out = vec![0.0; g * n * m];
            for i in 0..g {
                gemm(
                    n,
                    k,
                    m,
                    &ta.data()[i * n * k..(i + 1) * n * k],
                    false,
                    &tb.data()[i * k * m..(i + 1) * k * m],
                    transpose_b,
                    &mut out[i * n * m..(i + 1) * n * m],
                    false,
                );
            }
            Tensor::new(&[g, n, m], out)?
        };
        Ok(self.push(value, Op::BatchMatMul { a, b, transpose_b }, self.rg(&[a, b])))
    }

    // ── elementwise ───────────────────────────────────────────────────

    fn binary_same(&self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.binary_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }, self.rg(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.binary_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }, self.rg(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.binary_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }, self.rg(&[a, b])))
    }

    fn broadcast_last(&self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let d = ta.last_dim();
        if tb.rank() != 1 || tb.shape()[0] != d {
            return Err(dim_err(name, format!("{:?} with {:?}", ta.shape(), tb.shape())));
        }
        let bd = tb.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % d])).collect();
        Tensor::new(ta.shape(), data)
    }

    /// `a + b` with `b` broadcast along the last axis of `a`.
    pub fn add_bias(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.broadcast_last("add_bias", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::AddBias { a, b }, self.rg(&[a, b])))
    }

    /// `a ⊙ b` with `b` broadcast along the last axis of `a`.
    pub fn mul_bias(&self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.broadcast_last("mul_bias", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::MulBias { a, b }, self.rg(&[a, b])))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.value(a).map(f)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |x| x * c);
        self.push(v, Op::Scale { a, c }, self.rg(&[a]))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |x| x + c);
        self.push(v, Op::AddScalar { a }, self.rg(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x.max(0.0));
        self.push(v, Op::Relu { a }, self.rg(&[a]))
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.unary(a, f64::exp);
        self.push(v, Op::Exp { a }, self.rg(&[a]))
    }

    pub fn log(&self, a: Var) -> Var {
        let v = self.unary(a, f64::ln);
        self.push(v, Op::Log { a }, self.rg(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.unary(a, f64::tanh);
        self.push(v, Op::Tanh { a }, self.rg(&[a]))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let v = self.unary(a, f64::sqrt);
        self.push(v, Op::Sqrt { a }, self.rg(&[a]))
    }

    // ── reductions ────────────────────────────────────────────────────

    pub fn sum(&self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum { a }, self.rg(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = {
            let t = self.value(a);
            Tensor::scalar(t.sum() / t.numel().max(1) as f64)
        };
        self.push(v, Op::Mean { a }, self.rg(&[a]))
    }

    /// Maximum over all elements; ties go to the lowest index.
    pub fn max(&self, a: Var) -> Result<Var, NumError> {
        let (v, arg) = {
            let t = self.value(a);
            if t.numel() == 0 {
                return Err(dim_err("max", "empty tensor".into()));
            }
            let mut arg = 0;
            for (i, &x) in t.data().iter().enumerate() {
                if x > t.data()[arg] {
                    arg = i;
                }
            }
            (Tensor::scalar(t.data()[arg]), arg)
        };
        Ok(self.push(v, Op::Max { a, arg }, self.rg(&[a])))
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&self, a: Var) -> Var {
        let v = {
            let t = self.value(a);
            let d = t.last_dim().max(1);
            let data: Vec<f64> = t.data().chunks(d).map(|r| r.iter().sum()).collect();
            let mut shape = t.shape()[..t.rank().saturating_sub(1)].to_vec();
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(&shape, data).expect("sum_last shape")
        };
        self.push(v, Op::SumLast { a }, self.rg(&[a]))
    }

    /// Mean over axis 1 of a rank-3 tensor: `[a, b, c] -> [a, c]`.
    pub fn mean_axis1(&self, a: Var) -> Result<Var, NumError> {
        let (v, dims) = {
            let t = self.value(a);
            if t.rank() != 3 {
                return Err(dim_err("mean_axis1", format!("{:?}", t.shape())));
            }
            let (d0, d1, d2) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mut out = vec![0.0; d0 * d2];
            for i in 0..d0 {
                for j in 0..d1 {
                    let src = &t.data()[(i * d1 + j) * d2..(i * d1 + j + 1) * d2];
                    for (o, s) in out[i * d2..(i + 1) * d2].iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
            let inv = 1.0 / d1.max(1) as f64;
            out.iter_mut().for_each(|x| *x *= inv);
            (Tensor::new(&[d0, d2], out)?, [d0, d1, d2])
        };
        Ok(self.push(v, Op::MeanAxis1 { a, dims }, self.rg(&[a])))
    }

    // ── normalisation ─────────────────────────────────────────────────

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let v = {
            let t = self.value(a);
            let d = t.last_dim().max(1);
            let mut out = t.data().to_vec();
            for row in out.chunks_mut(d) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                row.iter_mut().for_each(|x| *x /= s);
            }
            Tensor::new(t.shape(), out).expect("softmax shape")
        };
        self.push(v, Op::Softmax { a }, self.rg(&[a]))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&self, a: Var) -> Var {
        let v = {
            let t = self.value(a);
            let d = t.last_dim().max(1);
            let mut out = t.data().to_vec();
            for row in out.chunks_mut(d) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
            Tensor::new(t.shape(), out).expect("log_softmax shape")
        };
        self.push(v, Op::LogSoftmax { a }, self.rg(&[a]))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumError> {
        let (v, xhat, inv_std) = {
            let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
            let d = tx.last_dim();
            if tg.shape() != [d] || tb.shape() != [d] {
                return Err(dim_err(
                    "layer_norm",
                    format!("input {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
                ));
            }
            let rows = tx.numel() / d.max(1);
            let mut xhat = vec![0.0; tx.numel()];
            let mut inv_std = vec![0.0; rows];
            let mut out = vec![0.0; tx.numel()];
            for r in 0..rows {
                let row = &tx.data()[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * tg.data()[j] + tb.data()[j];
                }
            }
            (Tensor::new(tx.shape(), out)?, xhat, inv_std)
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    // ── shape manipulation ────────────────────────────────────────────

    /// Concatenate along axis 0 (`last_axis == false`) or the last axis.
    pub fn concat(&self, parts: &[Var], last_axis: bool) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(dim_err("concat", "no inputs".into()));
        }
        let v = {
            let inner = self.inner.borrow();
            let ts: Vec<&Tensor> = parts.iter().map(|p| &inner.nodes[p.0].value).collect();
            let first = ts[0].shape();
            if last_axis {
                let lead = &first[..first.len() - 1];
                if ts.iter().any(|t| &t.shape()[..t.rank() - 1] != lead) {
                    let shapes: Vec<_> = ts.iter().map(|t| t.shape().to_vec()).collect();
                    return Err(dim_err("concat", format!("last-axis mismatch {shapes:?}")));
                }
                let rows: usize = lead.iter().product();
                let total: usize = ts.iter().map(|t| t.last_dim()).sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for t in &ts {
                        let w = t.last_dim();
                        out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(total);
                Tensor::new(&shape, out)?
            } else {
                let tail = &first[1..];
                if ts.iter().any(|t| &t.shape()[1..] != tail) {
                    let shapes: Vec<_> = ts.iter().map(|t| t.shape().to_vec()).collect();
                    return Err(dim_err("concat", format!("axis-0 mismatch {shapes:?}")));
                }
                let mut out = Vec::new();
                let mut n0 = 0;
                for t in &ts {
                    out.extend_from_slice(t.data());
                    n0 += t.shape()[0];
                }
                let mut shape = vec![n0];
                shape.extend_from_slice(tail);
                Tensor::new(&shape, out)?
            }
        };
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), last_axis }, rg))
    }

    /// Select slices along axis 0 (repeats allowed).
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let v = {
            let t = self.value(a);
            let n0 = t.shape()[0];
            let w = t.numel() / n0.max(1);
            if let Some(&bad) = idx.iter().find(|&&i| i >= n0) {
                return Err(dim_err("gather_rows", format!("index {bad} out of range for {:?}", t.shape())));
            }
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Tensor::new(&shape, out)?
        };
        Ok(self.push(v, Op::GatherRows { a, idx: idx.to_vec() }, self.rg(&[a])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { a }, self.rg(&[a])))
    }

    /// `[d0, d1, d2, d3] -> [d0, d2, d1, d3]`.
    pub fn permute_0213(&self, a: Var) -> Result<Var, NumError> {
        let (v, dims) = {
            let t = self.value(a);
            if t.rank() != 4 {
                return Err(dim_err("permute_0213", format!("{:?}", t.shape())));
            }
            let s = t.shape();
            let dims = [s[0], s[1], s[2], s[3]];
            (Tensor::new(&[s[0], s[2], s[1], s[3]], permute_0213_data(t.data(), dims))?, dims)
        };
        Ok(self.push(v, Op::Permute0213 { a, dims }, self.rg(&[a])))
    }

    /// Scalar node with a caller-supplied Jacobian w.r.t. `a`.
    pub fn precomputed_scalar(&self, a: Var, value: f64, jacobian: Tensor) -> Result<Var, NumError> {
        if jacobian.shape() != self.value(a).shape() {
            return Err(dim_err(
                "precomputed_scalar",
                format!("jacobian {:?} vs input {:?}", jacobian.shape(), self.value(a).shape()),
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::Precomputed { a, jacobian }, self.rg(&[a])))
    }

    // ── backward ──────────────────────────────────────────────────────

    /// Gradients of scalar `loss` w.r.t. every node requiring them.
    ///
    /// Fails on non-scalar losses and on a graph that was already
    /// differentiated.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let mut inner = self.inner.borrow_mut();
        if inner.differentiated {
            return Err(NumError::Contract("backward called twice on the same graph".into()));
        }
        if inner.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                inner.nodes[loss.0].value.shape()
            )));
        }
        inner.differentiated = true;
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &nodes[i];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    Some(match g {
                        Some(g) => Tensor::new(node.value.shape(), g).expect("grad shape"),
                        None => Tensor::zeros(node.value.shape()),
                    })
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn permute_0213_data(src: &[f64], [d0, d1, d2, d3]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                let s = ((a * d1 + b) * d2 + c) * d3;
                let t = ((a * d2 + c) * d1 + b) * d3;
                out[t..t + d3].copy_from_slice(&src[s..s + d3]);
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, delta: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
    delta(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            let k = ta.last_dim();
            let m = ta.numel() / k.max(1);
            let n = tb.shape()[1];
            // dA = dC · Bᵀ, dB = Aᵀ · dC
            accumulate(grads, nodes, *a, |da| gemm(m, n, k, g, false, tb.data(), true, da, true));
            accumulate(grads, nodes, *b, |db| gemm(k, m, n, ta.data(), true, g, false, db, true));
        }
        Op::BatchMatMul { a, b, transpose_b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (gs, n, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
            let m = if *transpose_b { tb.shape()[1] } else { tb.shape()[2] };
            let t = *transpose_b;
            accumulate(grads, nodes, *a, |da| {
                for i in 0..gs {
                    let gi = &g[i * n * m..(i + 1) * n * m];
                    let bi = &tb.data()[i * k * m..(i + 1) * k * m];
                    // C = A B → dA = dC Bᵀ ; C = A Bᵀ → dA = dC B
                    gemm(n, m, k, gi, false, bi, !t, &mut da[i * n * k..(i + 1) * n * k], true);
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..gs {
                    let gi = &g[i * n * m..(i + 1) * n * m];
                    let ai = &ta.data()[i * n * k..(i + 1) * n * k];
                    let dbi = &mut db[i * k * m..(i + 1) * k * m];
                    if t {
                        // dB = dCᵀ A : [m, k]
                        gemm(m, n, k, gi, true, ai, false, dbi, true);
                    } else {
                        // dB = Aᵀ dC : [k, m]
                        gemm(k, n, m, ai, true, gi, false, dbi, true);
                    }
                }
            });
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, *a, |d| add_into(d, g));
            accumulate(grads, nodes, *b, |d| add_into(d, g));
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, *a, |d| add_into(d, g));
            accumulate(grads, nodes, *b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
        }
        Op::Mul { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, |d| {
                for ((x, gv), bv) in d.iter_mut().zip(g).zip(tb.data()) {
                    *x += gv * bv;
                }
            });
            accumulate(grads, nodes, *b, |d| {
                for ((x, gv), av) in d.iter_mut().zip(g).zip(ta.data()) {
                    *x += gv * av;
                }
            });
        }
        Op::AddBias { a, b } => {
            let w = val(*b).numel();
            accumulate(grads, nodes, *a, |d| add_into(d, g));
            accumulate(grads, nodes, *b, |d| {
                for row in g.chunks(w) {
                    add_into(d, row);
                }
            });
        }
        Op::MulBias { a, b } => {
            let (ta, tb) = (val(*a), val(*b));
            let w = tb.numel();
            accumulate(grads, nodes, *a, |d| {
                for (i, (x, gv)) in d.iter_mut().zip(g).enumerate() {
                    *x += gv * tb.data()[i % w];
                }
            });
            accumulate(grads, nodes, *b, |d| {
                for (i, (gv, av)) in g.iter().zip(ta.data()).enumerate() {
                    d[i % w] += gv * av;
                }
            });
        }
        Op::Scale { a, c } => accumulate(grads, nodes, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
        Op::AddScalar { a } => accumulate(grads, nodes, *a, |d| add_into(d, g)),
        Op::Relu { a } => {
            let ta = val(*a);
            accumulate(grads, nodes, *a, |d| {
                for ((x, gv), av) in d.iter_mut().zip(g).zip(ta.data()) {
                    if *av > 0.0 {
                        *x += gv;
                    }
                }
            });
        }
        Op::Exp { .. } | Op::Tanh { .. } | Op::Sqrt { .. } | Op::Log { .. } => {
            let (a, out) = match &node.op {
                Op::Exp { a } | Op::Tanh { a } | Op::Sqrt { a } | Op::Log { a } => (*a, node.value.data()),
                _ => unreachable!(),
            };
            let ta = val(a);
            let deriv: Box<dyn Fn(f64, f64) -> f64> = match &node.op {
                Op::Exp { .. } => Box::new(|_x, y| y),
                Op::Tanh { .. } => Box::new(|_x, y| 1.0 - y * y),
                Op::Sqrt { .. } => Box::new(|_x, y| 0.5 / y),
                _ => Box::new(|x, _y| 1.0 / x),
            };
            accumulate(grads, nodes, a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * deriv(ta.data()[i], out[i]);
                }
            });
        }
        Op::Sum { a } => accumulate(grads, nodes, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
        Op::Mean { a } => {
            let n = val(*a).numel().max(1) as f64;
            accumulate(grads, nodes, *a, |d| d.iter_mut().for_each(|x| *x += g[0] / n));
        }
        Op::Max { a, arg } => accumulate(grads, nodes, *a, |d| d[*arg] += g[0]),
        Op::SumLast { a } => {
            let w = val(*a).last_dim().max(1);
            accumulate(grads, nodes, *a, |d| {
                for (i, x) in d.iter_mut().enumerate() {
                    *x += g[i / w];
                }
            });
        }
        Op::MeanAxis1 { a, dims: [d0, d1, d2] } => {
            let inv = 1.0 / (*d1).max(1) as f64;
            accumulate(grads, nodes, *a, |d| {
                for i in 0..*d0 {
                    for j in 0..*d1 {
                        for k in 0..*d2 {
                            d[(i * d1 + j) * d2 + k] += g[i * d2 + k] * inv;
                        }
                    }
                }
            });
        }
        Op::Softmax { a } => {
            let y = node.value.data();
            let w = node.value.last_dim().max(1);
            accumulate(grads, nodes, *a, |d| {
                for ((drow, grow), yrow) in d.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..w {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax { a } => {
            let y = node.value.data();
            let w = node.value.last_dim().max(1);
            accumulate(grads, nodes, *a, |d| {
                for ((drow, grow), yrow) in d.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                    let s: f64 = grow.iter().sum();
                    for j in 0..w {
                        drow[j] += grow[j] - yrow[j].exp() * s;
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let tg = val(*gamma);
            let w = tg.numel();
            let dn = w as f64;
            accumulate(grads, nodes, *x, |d| {
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    let hr = &xhat[r * w..(r + 1) * w];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..w {
                        let dh = gr[j] * tg.data()[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                    }
                    for j in 0..w {
                        let dh = gr[j] * tg.data()[j];
                        d[r * w + j] += is / dn * (dn * dh - s1 - hr[j] * s2);
                    }
                }
            });
            accumulate(grads, nodes, *gamma, |d| {
                for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                    d[i % w] += gv * h;
                }
            });
            accumulate(grads, nodes, *beta, |d| {
                for row in g.chunks(w) {
                    add_into(d, row);
                }
            });
        }
        Op::Concat { parts, last_axis } => {
            if *last_axis {
                let widths: Vec<usize> = parts.iter().map(|p| val(*p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    accumulate(grads, nodes, *p, |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            } else {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).numel();
                    accumulate(grads, nodes, *p, |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
        }
        Op::GatherRows { a, idx } => {
            let ta = val(*a);
            let w = ta.numel() / ta.shape()[0].max(1);
            accumulate(grads, nodes, *a, |d| {
                for (o, &i) in idx.iter().enumerate() {
                    add_into(&mut d[i * w..(i + 1) * w], &g[o * w..(o + 1) * w]);
                }
            });
        }
        Op::Reshape { a } => accumulate(grads, nodes, *a, |d| add_into(d, g)),
        Op::Permute0213 { a, dims: [d0, d1, d2, d3] } => {
            // The gradient arrives in [d0, d2, d1, d3] layout; permuting it
            // back uses the same index swap with d1 and d2 exchanged.
            let back = permute_0213_data(g, [*d0, *d2, *d1, *d3]);
            accumulate(grads, nodes, *a, |d| add_into(d, &back));
        }
        Op::Precomputed { a, jacobian } => {
            accumulate(grads, nodes, *a, |d| {
                for (x, j) in d.iter_mut().zip(jacobian.data()) {
                    *x += g[0] * j;
                }
            });
        }
    }
}
