use std::collections::HashMap;
use std::sync::Arc;

use super::sparse::SparseMap;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, softmax_in_place};
use super::{ParamStore, Scalar, SeededRng, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Sparse(Var, Arc<SparseMap<T>>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are recorded in creation order, which is a
/// topological order; [`Graph::backward`] walks it once in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    train: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; zero when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient mirrors value shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn touched(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new(train: bool) -> Self {
        Self {
            nodes: Vec::new(),
            train,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A tracked leaf (parameter or input we want gradients for).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    fn row_check(&self, op: &'static str, x: Var, r: Var) -> Result<()> {
        let (xs, rs) = (self.shape(x), self.shape(r));
        if xs.len() != 2 || rs.len() != 2 || rs[0] != 1 || rs[1] != xs[1] {
            return Err(Error::shape(op, xs, rs));
        }
        Ok(())
    }

    /// `x[m×n] + r[1×n]`, broadcast over rows.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_check("add_row", x, r)?;
        let rv = self.value(r).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(rv.len())
            .flat_map(|row| row.iter().zip(&rv).map(|(&a, &b)| a + b))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, r), &[x, r]))
    }

    /// `x[m×n] ⊙ r[1×n]`, broadcast over rows.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_check("mul_row", x, r)?;
        let rv = self.value(r).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(rv.len())
            .flat_map(|row| row.iter().zip(&rv).map(|(&a, &b)| a * b))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulRow(x, r), &[x, r]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_t", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| T::of(gelu_parts(v.to_f64_lossy()).0));
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_rows_masked(a, None)
    }

    /// Row softmax where `allowed[i·n + j] == false` excludes entry `(i, j)`.
    /// Every row must allow at least one entry.
    pub fn softmax_rows_masked(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let n = x.cols();
        if let Some(m) = allowed {
            if m.len() != x.len() {
                return Err(Error::shape("softmax_mask", x.shape(), &[m.len()]));
            }
            if m.chunks(n).any(|r| !r.iter().any(|&b| b)) {
                return Err(Error::Contract("softmax row with every entry masked".into()));
            }
        }
        let mut data = x.data().to_vec();
        for (i, row) in data.chunks_mut(n).enumerate() {
            softmax_in_place(row, allowed.map(|m| &m[i * n..(i + 1) * n]));
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Normalise each row to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let nf = T::of(n as f64);
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in x.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out = Tensor::new(x.shape().to_vec(), xhat.clone()).expect("same shape");
        self.push(out, Op::LayerNorm { x: a, xhat, inv_std }, &[a])
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x: a, mask }, &[a]))
    }

    /// Concatenate matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let m = self.value(*first).rows();
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != m {
                return Err(Error::shape("concat_cols", self.shape(*first), s));
            }
        }
        let n: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stack matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            let v = self.value(*p);
            if v.shape().len() != 2 || v.cols() != n {
                return Err(Error::shape("concat_rows", self.shape(*first), v.shape()));
            }
            m += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().copied().sum::<T>() / T::of(x.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Column means of `x[m×n]` as a `1×n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut acc = vec![T::zero(); n];
        for row in x.data().chunks(n) {
            for (o, &v) in acc.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::of(m as f64);
        let out = Tensor::new(vec![1, n], acc.into_iter().map(|v| v * inv).collect()).expect("row shape");
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// Apply a fixed linear map to the flattened value of `a`.
    pub fn sparse(&mut self, a: Var, map: Arc<SparseMap<T>>, out_shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if map.in_len() != x.len() || map.out_len() != out_shape.iter().product::<usize>() {
            return Err(Error::shape("sparse", x.shape(), out_shape));
        }
        let out = Tensor::new(out_shape.to_vec(), map.apply(x.data()))?;
        Ok(self.push(out, Op::Sparse(a, map), &[a]))
    }

    /// Select rows of a matrix by index (`None` yields a zero row).
    pub fn gather_rows(&mut self, a: Var, rows: &[Option<usize>]) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= m) {
            return Err(Error::Contract(format!("row index {bad} out of range for {m} rows")));
        }
        if rows.is_empty() {
            return Err(Error::Contract("gather of zero rows".into()));
        }
        let index = rows.iter().flat_map(|r| (0..n).map(move |j| r.map(|r| r * n + j)));
        let map = Arc::new(SparseMap::gather(m * n, index));
        self.sparse(a, map, &[rows.len(), n])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Fail with a numeric error naming `what` if `a` has non-finite entries.
    pub fn check_finite(&self, a: Var, what: &str) -> Result<()> {
        if self.value(a).is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite activations in {what}")))
        }
    }

    /// Back-propagate from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Accumulate into `v` only when it is on a gradient path.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| {
                    for (o, &d) in g.iter_mut().zip(dy) {
                        *o = *o - d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |g| {
                    for ((o, &d), &y) in g.iter_mut().zip(dy).zip(bv) {
                        *o = *o + d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((o, &d), &x) in g.iter_mut().zip(dy).zip(av) {
                        *o = *o + d * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| {
                for (o, &d) in g.iter_mut().zip(dy) {
                    *o = *o + d * *c;
                }
            }),
            Op::AddRow(x, r) => {
                let n = val(*r).len();
                acc(*x, &mut |g| add_into(g, dy));
                acc(*r, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let n = val(*r).len();
                let (xv, rv) = (val(*x).data(), val(*r).data());
                acc(*x, &mut |g| {
                    for (i, (o, &d)) in g.iter_mut().zip(dy).enumerate() {
                        *o = *o + d * rv[i % n];
                    }
                });
                acc(*r, &mut |g| {
                    for (i, (&d, &xx)) in dy.iter().zip(xv).enumerate() {
                        g[i % n] = g[i % n] + d * xx;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |g| gemm_nt(dy, bv.data(), g, m, n, k));
                acc(*b, &mut |g| gemm_tn(av.data(), dy, g, k, m, n));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                acc(*a, &mut |g| gemm_nn(dy, bv.data(), g, m, n, k));
                acc(*b, &mut |g| gemm_tn(dy, av.data(), g, n, m, k));
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                acc(*a, &mut |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] = g[i * n + j] + dy[j * m + i];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let xv = val(*a).data();
                acc(*a, &mut |g| {
                    for ((o, &d), &x) in g.iter_mut().zip(dy).zip(xv) {
                        if x > T::zero() {
                            *o = *o + d;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = val(*a).data();
                acc(*a, &mut |g| {
                    for ((o, &d), &x) in g.iter_mut().zip(dy).zip(xv) {
                        *o = *o + d * T::of(gelu_parts(x.to_f64_lossy()).1);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                acc(*a, &mut |g| {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.chunks(n)).zip(dy.chunks(n)) {
                        let dot: T = yr.iter().zip(dr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in gr.iter_mut().zip(yr).zip(dr) {
                            *o = *o + p * (q - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let n = node.value.cols();
                let nf = T::of(n as f64);
                acc(*x, &mut |g| {
                    for (((gr, hr), dr), &is) in g.chunks_mut(n).zip(xhat.chunks(n)).zip(dy.chunks(n)).zip(inv_std) {
                        let mean_d = dr.iter().copied().sum::<T>() / nf;
                        let mean_dh = dr.iter().zip(hr).map(|(&d, &h)| d * h).sum::<T>() / nf;
                        for ((o, &d), &h) in gr.iter_mut().zip(dr).zip(hr) {
                            *o = *o + is * (d - mean_d - h * mean_dh);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |g| {
                for ((o, &d), &m) in g.iter_mut().zip(dy).zip(mask) {
                    *o = *o + d * m;
                }
            }),
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |g| {
                        for (gr, dr) in g.chunks_mut(w).zip(dy.chunks(n)) {
                            add_into(gr, &dr[off..off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &mut |g| add_into(g, &dy[off..off + len]));
                    off += len;
                }
            }
            Op::Sum(a) => acc(*a, &mut |g| {
                for o in g.iter_mut() {
                    *o = *o + dy[0];
                }
            }),
            Op::Mean(a) => {
                let d = dy[0] / T::of(val(*a).len() as f64);
                acc(*a, &mut |g| {
                    for o in g.iter_mut() {
                        *o = *o + d;
                    }
                });
            }
            Op::MeanRows(a) => {
                let inv = T::one() / T::of(val(*a).rows() as f64);
                let n = dy.len();
                acc(*a, &mut |g| {
                    for gr in g.chunks_mut(n) {
                        for (o, &d) in gr.iter_mut().zip(dy) {
                            *o = *o + d * inv;
                        }
                    }
                });
            }
            Op::Sparse(a, map) => acc(*a, &mut |g| map.apply_transpose_add(dy, g)),
            Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dy)),
        }
    }
}

fn add_into<T: Scalar>(g: &mut [T], d: &[T]) {
    for (o, &v) in g.iter_mut().zip(d) {
        *o = *o + v;
    }
}

/// A graph bound to a parameter store: each parameter becomes one tracked
/// leaf the first time it is requested.
pub struct Session<'a, T: Scalar> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    bound: HashMap<usize, Var>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, train: bool) -> Self {
        Self {
            g: Graph::new(train),
            store,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Leaf for the named parameter.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if let Some(v) = self.bound.get(&idx) {
            return Ok(*v);
        }
        let v = self.g.param(self.store.get_index(idx).1.clone());
        self.bound.insert(idx, v);
        Ok(v)
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.index_of(name).is_some()
    }

    /// Parameter gradients in store order; unbound parameters are omitted.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(usize, Var)> = self.bound.iter().map(|(&i, &v)| (i, v)).collect();
        out.sort_by_key(|(i, _)| *i);
        out.into_iter()
            .map(|(i, v)| (self.store.get_index(i).0.to_string(), grads.get(v)))
            .collect()
    }
}
