use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{row_major_strides, Float, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Transpose { a: Var, d0: usize, d1: usize },
    Reshape { a: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { a: Var },
    Relu { a: Var },
    Dropout { a: Var, scaled_mask: Vec<T> },
    MaskedFill { a: Var, mask: Vec<bool> },
    Sum { a: Var },
    Mean { a: Var },
    Select { a: Var, axis: usize, index: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation record. Nodes are stored in creation order,
/// which is a topological order, so backward is one reverse sweep.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient populated by [`Graph::backward`]; zeros for nodes the loss
    /// does not depend on.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let data = match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => vec![T::zero(); node.value.len()],
        };
        Some(Tensor::new(node.value.shape(), data).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// `a[..., m, k] · b[k, n]` (b shared across the batch) or
    /// `a[..., m, k] · b[..., k, n]` with identical leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch { op: "matmul", left: sa.clone(), right: sb.clone() };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        if sb.len() == 2 {
            T::gemm(batch * m, k, n, self.data(a), (k as isize, 1), self.data(b), (n as isize, 1), T::zero(), &mut out, (n as isize, 1));
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch());
            }
            let (da, db) = (self.data(a), self.data(b));
            for i in 0..batch {
                T::gemm(
                    m, k, n,
                    &da[i * m * k..(i + 1) * m * k], (k as isize, 1),
                    &db[i * k * n..(i + 1) * k * n], (n as isize, 1),
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n], (n as isize, 1),
                );
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.derived(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Elementwise sum; `b`'s shape must equal a trailing suffix of `a`'s
    /// (bias vectors, position tables broadcast over the batch).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch { op: "add", left: sa.to_vec(), right: sb.to_vec() });
        }
        let shape = sa.to_vec();
        let db = self.data(b);
        let blen = db.len();
        let mut out = self.data(a).to_vec();
        for chunk in out.chunks_mut(blen.max(1)) {
            for (o, &y) in chunk.iter_mut().zip(db) {
                *o += y;
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch { op: "mul", left: self.shape(a).to_vec(), right: self.shape(b).to_vec() });
        }
        let shape = self.shape(a).to_vec();
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let shape = self.shape(a).to_vec();
        let out: Vec<T> = self.data(a).iter().map(|&x| x * factor).collect();
        let value = Tensor::new(&shape, out).expect("same shape");
        self.derived(value, Op::Scale { a, factor }, &[a])
    }

    /// Swaps two axes, materializing the result.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let rank = shape.len();
        if d0 >= rank || d1 >= rank {
            return Err(TensorError::IndexOutOfRange { op: "transpose", index: d0.max(d1), bound: rank });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(d0, d1);
        let (out_shape, out) = permute(&shape, self.data(a), &perm);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.derived(value, Op::Transpose { a, d0, d1 }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", left: self.shape(a).to_vec(), right: shape.to_vec() });
        }
        let value = Tensor::new(shape, self.data(a).to_vec())?;
        Ok(self.derived(value, Op::Reshape { a }, &[a]))
    }

    /// Gathers rows of a `[vocab, dim]` table; output shape is `out_shape + [dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var, TensorError> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || out_shape.iter().product::<usize>() != ids.len() {
            return Err(TensorError::ShapeMismatch { op: "embedding", left: ts, right: out_shape.to_vec() });
        }
        let (vocab, dim) = (ts[0], ts[1]);
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange { op: "embedding", index: id, bound: vocab });
            }
            out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(dim);
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().unwrap_or(&1);
        let mut out = self.data(a).to_vec();
        if width > 0 {
            for row in out.chunks_mut(width) {
                softmax_in_place(row);
            }
        }
        let value = Tensor::new(&shape, out).expect("same shape");
        self.derived(value, Op::Softmax { a }, &[a])
    }

    /// Normalizes the last axis with population variance, then applies gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&0);
        for p in [gain, bias] {
            if self.shape(p) != [width] {
                return Err(TensorError::ShapeMismatch { op: "layer_norm", left: shape.clone(), right: self.shape(p).to_vec() });
            }
        }
        let n = T::from_usize(width).unwrap();
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = self.data(x).to_vec();
        let mut rstd = Vec::with_capacity(xhat.len() / width.max(1));
        let mut out = vec![T::zero(); xhat.len()];
        for (row, orow) in xhat.chunks_mut(width).zip(out.chunks_mut(width)) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * r;
                orow[j] = *v * g[j] + b[j];
            }
            rstd.push(r);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let c = T::lit(SQRT_2_OVER_PI);
        let k = T::lit(GELU_COEF);
        let half = T::lit(0.5);
        let out: Vec<T> = self
            .data(a)
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let value = Tensor::new(&shape, out).expect("same shape");
        self.derived(value, Op::Gelu { a }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let out: Vec<T> = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        let value = Tensor::new(&shape, out).expect("same shape");
        self.derived(value, Op::Relu { a }, &[a])
    }

    /// Inverted dropout: kept units are scaled by `1/(1-p)`. The mask is a
    /// pure function of `seed`. `p == 0` returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64) -> Var {
        if p <= 0.0 {
            return a;
        }
        assert!(p < 1.0, "dropout probability must be below 1");
        let shape = self.shape(a).to_vec();
        let keep = T::lit(1.0 / (1.0 - p));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaled_mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.data(a).iter().zip(&scaled_mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(&shape, out).expect("same shape");
        self.derived(value, Op::Dropout { a, scaled_mask }, &[a])
    }

    /// Replaces entries where `mask` is true by `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: T) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if mask.len() != self.value(a).len() {
            return Err(TensorError::ShapeMismatch { op: "masked_fill", left: shape, right: vec![mask.len()] });
        }
        let out: Vec<T> = self.data(a).iter().zip(mask).map(|(&x, &m)| if m { fill } else { x }).collect();
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, Op::MaskedFill { a, mask: mask.to_vec() }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<T>();
        self.derived(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).unwrap();
        let s = self.data(a).iter().copied().sum::<T>() / n;
        self.derived(Tensor::scalar(s), Op::Mean { a }, &[a])
    }

    /// Picks position `index` along `axis`, dropping that axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(TensorError::IndexOutOfRange { op: "select", index, bound: *shape.get(axis).unwrap_or(&0) });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = self.data(a);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * shape[axis] + index) * inner;
            out.extend_from_slice(&d[start..start + inner]);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.derived(value, Op::Select { a, axis, index }, &[a]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]` for `[batch, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::ShapeMismatch { op: "cross_entropy", left: shape, right: vec![labels.len()] });
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: bad, bound: k });
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            total += nll(row, label);
            softmax_in_place(row);
        }
        let n = T::from_usize(labels.len().max(1)).unwrap();
        let value = Tensor::scalar(total / n);
        Ok(self.derived(value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    /// Populates gradients of every node the scalar `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Split borrow: parents always precede `i`.
        let (before, rest) = self.nodes.split_at(i);
        let node = &rest[0];
        let grads = &mut self.grads;
        let rg = |v: Var| before[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sa = before[a.0].value.shape();
                let sb = before[b.0].value.shape();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let (da, db) = (before[a.0].value.data(), before[b.0].value.data());
                let (ki, ni) = (k as isize, n as isize);
                if sb.len() == 2 {
                    let rows = batch * m;
                    if rg(*a) {
                        // dA = dC · Bᵀ
                        T::gemm(rows, n, k, g, (ni, 1), db, (1, ni), T::one(), slot(grads, before, *a), (ki, 1));
                    }
                    if rg(*b) {
                        // dB = Aᵀ · dC
                        T::gemm(k, rows, n, da, (1, ki), g, (ni, 1), T::one(), slot(grads, before, *b), (ni, 1));
                    }
                } else {
                    for bi in 0..batch {
                        let ga = &g[bi * m * n..(bi + 1) * m * n];
                        let a_blk = &da[bi * m * k..(bi + 1) * m * k];
                        let b_blk = &db[bi * k * n..(bi + 1) * k * n];
                        if rg(*a) {
                            let out = &mut slot(grads, before, *a)[bi * m * k..(bi + 1) * m * k];
                            T::gemm(m, n, k, ga, (ni, 1), b_blk, (1, ni), T::one(), out, (ki, 1));
                        }
                        if rg(*b) {
                            let out = &mut slot(grads, before, *b)[bi * k * n..(bi + 1) * k * n];
                            T::gemm(k, m, n, a_blk, (1, ki), ga, (ni, 1), T::one(), out, (ni, 1));
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if rg(*a) {
                    for (d, &x) in slot(grads, before, *a).iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if rg(*b) {
                    let out = slot(grads, before, *b);
                    let blen = out.len().max(1);
                    for chunk in g.chunks(blen) {
                        for (d, &x) in out.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (before[a.0].value.data(), before[b.0].value.data());
                if rg(*a) {
                    for ((d, &x), &y) in slot(grads, before, *a).iter_mut().zip(g).zip(vb) {
                        *d += x * y;
                    }
                }
                if rg(*b) {
                    for ((d, &x), &y) in slot(grads, before, *b).iter_mut().zip(g).zip(va) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale { a, factor } => {
                for (d, &x) in slot(grads, before, *a).iter_mut().zip(g) {
                    *d += x * *factor;
                }
            }
            Op::Transpose { a, d0, d1 } => {
                let mut perm: Vec<usize> = (0..node.value.shape().len()).collect();
                perm.swap(*d0, *d1);
                let (_, back) = permute(node.value.shape(), g, &perm);
                for (d, x) in slot(grads, before, *a).iter_mut().zip(back) {
                    *d += x;
                }
            }
            Op::Reshape { a } => {
                for (d, &x) in slot(grads, before, *a).iter_mut().zip(g) {
                    *d += x;
                }
            }
            Op::Embedding { table, ids } => {
                let dim = before[table.0].value.shape()[1];
                let out = slot(grads, before, *table);
                for (row, &id) in g.chunks(dim).zip(ids) {
                    for (d, &x) in out[id * dim..(id + 1) * dim].iter_mut().zip(row) {
                        *d += x;
                    }
                }
            }
            Op::Softmax { a } => {
                let width = *node.value.shape().last().unwrap_or(&1);
                let y = node.value.data();
                let out = slot(grads, before, *a);
                for ((yr, gr), orow) in y.chunks(width).zip(g.chunks(width)).zip(out.chunks_mut(width)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..width {
                        orow[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let width = *node.value.shape().last().unwrap();
                let gv = before[gain.0].value.data();
                if rg(*gain) {
                    let out = slot(grads, before, *gain);
                    for (xr, gr) in xhat.chunks(width).zip(g.chunks(width)) {
                        for j in 0..width {
                            out[j] += gr[j] * xr[j];
                        }
                    }
                }
                if rg(*bias) {
                    let out = slot(grads, before, *bias);
                    for gr in g.chunks(width) {
                        for j in 0..width {
                            out[j] += gr[j];
                        }
                    }
                }
                if rg(*x) {
                    let n = T::from_usize(width).unwrap();
                    let out = slot(grads, before, *x);
                    let mut dxhat = vec![T::zero(); width];
                    for (((xr, gr), orow), &r) in
                        xhat.chunks(width).zip(g.chunks(width)).zip(out.chunks_mut(width)).zip(rstd)
                    {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..width {
                            dxhat[j] = gr[j] * gv[j];
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * xr[j];
                        }
                        for j in 0..width {
                            orow[j] += r / n * (n * dxhat[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                let c = T::lit(SQRT_2_OVER_PI);
                let k = T::lit(GELU_COEF);
                let half = T::lit(0.5);
                let three = T::lit(3.0);
                let xs = before[a.0].value.data();
                for ((d, &x), &gy) in slot(grads, before, *a).iter_mut().zip(xs).zip(g) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    *d += gy * (half * (T::one() + t) + half * x * dt);
                }
            }
            Op::Relu { a } => {
                let xs = before[a.0].value.data();
                for ((d, &x), &gy) in slot(grads, before, *a).iter_mut().zip(xs).zip(g) {
                    if x > T::zero() {
                        *d += gy;
                    }
                }
            }
            Op::Dropout { a, scaled_mask } => {
                for ((d, &m), &gy) in slot(grads, before, *a).iter_mut().zip(scaled_mask).zip(g) {
                    *d += gy * m;
                }
            }
            Op::MaskedFill { a, mask } => {
                for ((d, &m), &gy) in slot(grads, before, *a).iter_mut().zip(mask).zip(g) {
                    if !m {
                        *d += gy;
                    }
                }
            }
            Op::Sum { a } => {
                for d in slot(grads, before, *a).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean { a } => {
                let n = T::from_usize(before[a.0].value.len().max(1)).unwrap();
                for d in slot(grads, before, *a).iter_mut() {
                    *d += g[0] / n;
                }
            }
            Op::Select { a, axis, index } => {
                let shape = before[a.0].value.shape();
                let inner: usize = shape[axis + 1..].iter().product();
                let out = slot(grads, before, *a);
                for (o, gr) in g.chunks(inner.max(1)).enumerate() {
                    let start = (o * shape[*axis] + index) * inner;
                    for (d, &x) in out[start..start + inner].iter_mut().zip(gr) {
                        *d += x;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = before[logits.0].value.shape()[1];
                let scale = g[0] / T::from_usize(labels.len().max(1)).unwrap();
                let out = slot(grads, before, *logits);
                for ((orow, prow), &label) in out.chunks_mut(k).zip(probs.chunks(k)).zip(labels) {
                    for j in 0..k {
                        let target = if j == label { T::one() } else { T::zero() };
                        orow[j] += (prow[j] - target) * scale;
                    }
                }
            }
        }
    }
}

fn slot<'g, T: Float>(grads: &'g mut [Option<Vec<T>>], before: &[Node<T>], v: Var) -> &'g mut Vec<T> {
    let len = before[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `-log softmax(row)[label]` as `(max − row[label]) + ln_1p(Σ_{j≠argmax} e^{row_j − max})`,
/// which stays accurate when the loss is tiny.
pub(crate) fn nll<T: Float>(row: &[T], label: usize) -> T {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let rest: T = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max - row[label]) + rest.ln_1p()
}

/// Materializes `data` (row-major, `shape`) under axis permutation `perm`:
/// output axis `i` is input axis `perm[i]`.
fn permute<T: Copy>(shape: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out_shape, out);
    }
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    loop {
        let base: usize = idx[..last].iter().zip(&strides).map(|(i, s)| i * s).sum();
        let step = strides[last];
        out.extend((0..out_shape[last]).map(|j| data[base + j * step]));
        // odometer over all axes but the last
        let mut ax = last;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
