//! Reverse-mode differentiation over a recorded tape of tensor ops.

use std::collections::HashMap;

use rand::Rng;

use super::gemm::{gemm, Mat, MatMut};
use super::kernels::{attention_backward, attention_forward, col2im, group_moments, im2col, ConvGeom};
use super::params::{BufferId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    /// Normalization over groups of the middle axis of `[outer, groups, inner]`.
    /// `affine_inner` selects whether gamma/beta index the inner axis (layer
    /// norm) or the group axis (batch norm).
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        dims: (usize, usize, usize),
        batch_stats: bool,
        affine_inner: bool,
    },
    Relu { x: Var },
    Gelu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Add { a: Var, b: Var },
    AddConst { x: Var },
    Attention { qkv: Var, heads: usize, probs: Vec<f64> },
    PrependToken { x: Var, token: Var },
    SelectToken { x: Var, index: usize },
    Gather { x: Var, indices: Vec<Vec<usize>> },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    TemporalPool { x: Var, argmax: Vec<usize> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients from one backward pass.
pub struct Grads {
    params: HashMap<ParamId, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn take_params(self) -> HashMap<ParamId, Tensor> {
        self.params
    }

    /// Gradient of an input created with [`Graph::input_with_grad`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }
}

/// One forward pass. Parameters are read from the store; buffer updates
/// (batch-norm running statistics) are collected for the caller to apply.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: Option<SeededRng>,
    buffer_updates: Vec<(BufferId, Tensor)>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, training: bool) -> Self {
        Self { store, nodes: Vec::new(), param_vars: HashMap::new(), training, rng: None, buffer_updates: Vec::new() }
    }

    /// Source of randomness for dropout.
    pub fn with_rng(mut self, rng: SeededRng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn latest_buffer(&self, id: BufferId) -> &Tensor {
        self.buffer_updates.iter().rev().find(|(b, _)| *b == id).map_or_else(|| self.store.buffer(id), |(_, t)| t)
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(id), .. } => self.store.get(*id),
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// An input whose gradient is reported by [`Grads::wrt`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x);
        let (fin, fout) = {
            let ws = self.value(w).shape();
            (ws[0], ws[1])
        };
        assert_eq!(*xs.last().unwrap(), fin, "linear input width");
        let rows = self.value(x).numel() / fin;
        let mut y = vec![0.0; rows * fout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in y.chunks_mut(fout) {
                r.copy_from_slice(bias);
            }
        }
        gemm(
            1.0,
            Mat::new(self.value(x).data(), rows, fin),
            Mat::new(self.value(w).data(), fin, fout),
            if b.is_some() { 1.0 } else { 0.0 },
            MatMut::new(&mut y, rows, fout),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = fout;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::from_vec(&shape, y), Op::Linear { x, w, b }, needs)
    }

    /// 2-D convolution of `[B, C, H, W]` with `[O, C, kh, kw]` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize)) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W]");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
        };
        let (batch, out_c) = (xs[0], ws[0]);
        let (kr, kc) = (geom.col_rows(), geom.col_cols());
        let in_len = geom.channels * geom.height * geom.width;
        let mut y = vec![0.0; batch * out_c * kc];
        let mut cols = vec![0.0; kr * kc];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for bi in 0..batch {
            im2col(&xd[bi * in_len..(bi + 1) * in_len], &geom, &mut cols);
            let yb = &mut y[bi * out_c * kc..(bi + 1) * out_c * kc];
            if let Some(b) = b {
                for (row, &bv) in yb.chunks_mut(kc).zip(self.value(b).data()) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm(1.0, Mat::new(wd, out_c, kr), Mat::new(&cols, kr, kc), if b.is_some() { 1.0 } else { 0.0 }, MatMut::new(yb, out_c, kc));
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let shape = [batch, out_c, geom.out_h(), geom.out_w()];
        self.push(Tensor::from_vec(&shape, y), Op::Conv2d { x, w, b, geom }, needs)
    }

    /// Batch normalization over axis 1 of `[N, C]` or `[B, C, H, W]`.
    ///
    /// Training mode uses batch statistics and records running-statistic
    /// updates; inference mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (BufferId, BufferId),
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let (outer, groups) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let count = outer * inner;
        let xd = self.value(x).data();
        let (xhat, inv_std) = if self.training {
            if count < 2 {
                return Err(Error::BatchNormUndefined);
            }
            let (xhat, inv_std, mean, var) = group_moments(xd, outer, groups, inner, eps);
            let unbias = count as f64 / (count - 1) as f64;
            // Chain onto updates already recorded in this pass (e.g. the first twin arm).
            let rm = self.latest_buffer(running.0).data();
            let rv = self.latest_buffer(running.1).data();
            let new_m: Vec<f64> = rm.iter().zip(&mean).map(|(r, m)| (1.0 - momentum) * r + momentum * m).collect();
            let new_v: Vec<f64> = rv.iter().zip(&var).map(|(r, v)| (1.0 - momentum) * r + momentum * v * unbias).collect();
            self.buffer_updates.push((running.0, Tensor::from_vec(&[groups], new_m)));
            self.buffer_updates.push((running.1, Tensor::from_vec(&[groups], new_v)));
            (xhat, inv_std)
        } else {
            let rm = self.store.buffer(running.0).data();
            let inv_std: Vec<f64> = self.store.buffer(running.1).data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; xd.len()];
            for o in 0..outer {
                for c in 0..groups {
                    let off = (o * groups + c) * inner;
                    for i in 0..inner {
                        xhat[off + i] = (xd[off + i] - rm[c]) * inv_std[c];
                    }
                }
            }
            (xhat, inv_std)
        };
        let y = self.affine_groups(&xhat, gamma, beta, outer, groups, inner);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = Op::Norm { x, gamma, beta, xhat, inv_std, dims: (outer, groups, inner), batch_stats: self.training, affine_inner: false };
        Ok(self.push(Tensor::from_vec(&xs, y), op, needs))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xs = self.shape(x);
        let d = *xs.last().unwrap();
        let rows = self.value(x).numel() / d;
        // Rows are groups of one `[1, rows, d]` block.
        let (xhat, inv_std, _, _) = group_moments(self.value(x).data(), 1, rows, d, eps);
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut y = xhat.clone();
        for row in y.chunks_mut(d) {
            for ((v, gv), bv) in row.iter_mut().zip(g).zip(bt) {
                *v = *v * gv + bv;
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = Op::Norm { x, gamma, beta, xhat, inv_std, dims: (1, rows, d), batch_stats: true, affine_inner: true };
        self.push(Tensor::from_vec(&xs, y), op, needs)
    }

    fn affine_groups(&self, xhat: &[f64], gamma: Var, beta: Var, outer: usize, groups: usize, inner: usize) -> Vec<f64> {
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut y = vec![0.0; xhat.len()];
        for o in 0..outer {
            for c in 0..groups {
                let off = (o * groups + c) * inner;
                for i in 0..inner {
                    y[off + i] = xhat[off + i] * g[c] + b[c];
                }
            }
        }
        y
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(y, Op::Relu { x }, needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(gelu);
        let needs = self.needs(x);
        self.push(y, Op::Gelu { x }, needs)
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let n = self.value(x).numel();
        let rng = self.rng.as_mut().expect("dropout in training mode needs Graph::with_rng");
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        let needs = self.needs(x);
        self.push(y, Op::Dropout { x, mask }, needs)
    }

    /// 2x2 max pooling with stride 2 over the last two axes of `[B, C, H, W]`.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let (bc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut y = vec![0.0; bc * ho * wo];
        let mut argmax = vec![0usize; bc * ho * wo];
        for p in 0..bc {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    let mut bv = f64::NEG_INFINITY;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (p * h + 2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > bv || best == usize::MAX {
                            bv = xd[idx];
                            best = idx;
                        }
                    }
                    let o = (p * ho + i) * wo + j;
                    y[o] = bv;
                    argmax[o] = best;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&[xs[0], xs[1], ho, wo], y), Op::MaxPool2 { x, argmax }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, needs)
    }

    /// Adds a constant broadcast over leading axes (its size must divide `x`'s).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Var {
        let mut y = self.value(x).clone();
        let n = c.numel();
        assert_eq!(y.numel() % n, 0, "broadcast size mismatch");
        for chunk in y.data_mut().chunks_mut(n) {
            chunk.iter_mut().zip(c.data()).for_each(|(v, cv)| *v += cv);
        }
        let needs = self.needs(x);
        self.push(y, Op::AddConst { x }, needs)
    }

    /// Self-attention over packed `[B, n, 3d]` query/key/value projections.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let s = self.shape(qkv);
        let (batch, n, d) = (s[0], s[1], s[2] / 3);
        assert_eq!(d % heads, 0, "width must divide into heads");
        let (out, probs) = attention_forward(self.value(qkv).data(), batch, n, d, heads);
        let needs = self.needs(qkv);
        self.push(Tensor::from_vec(&[batch, n, d], out), Op::Attention { qkv, heads, probs }, needs)
    }

    /// Prepends a learned `[d]` token to every `[n, d]` sequence of a `[B, n, d]` batch.
    pub fn prepend_token(&mut self, x: Var, token: Var) -> Var {
        let s = self.shape(x);
        let (batch, n, d) = (s[0], s[1], s[2]);
        let tok = self.value(token).data();
        assert_eq!(tok.len(), d, "token width");
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(batch * (n + 1) * d);
        for b in 0..batch {
            y.extend_from_slice(tok);
            y.extend_from_slice(&xd[b * n * d..(b + 1) * n * d]);
        }
        let needs = self.needs(x) || self.needs(token);
        self.push(Tensor::from_vec(&[batch, n + 1, d], y), Op::PrependToken { x, token }, needs)
    }

    /// Token `index` of each sequence: `[B, n, d] -> [B, d]`.
    pub fn select_token(&mut self, x: Var, index: usize) -> Var {
        let s = self.shape(x);
        let (batch, n, d) = (s[0], s[1], s[2]);
        assert!(index < n);
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(batch * d);
        for b in 0..batch {
            y.extend_from_slice(&xd[(b * n + index) * d..][..d]);
        }
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&[batch, d], y), Op::SelectToken { x, index }, needs)
    }

    /// Per-sequence token selection: `[B, n, d] -> [B, k, d]`.
    pub fn gather_tokens(&mut self, x: Var, indices: Vec<Vec<usize>>) -> Var {
        let s = self.shape(x);
        let (batch, n, d) = (s[0], s[1], s[2]);
        assert_eq!(indices.len(), batch, "one index list per sequence");
        let k = indices.first().map_or(0, Vec::len);
        assert!(indices.iter().all(|ix| ix.len() == k && ix.iter().all(|&i| i < n)));
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(batch * k * d);
        for (b, ix) in indices.iter().enumerate() {
            for &i in ix {
                y.extend_from_slice(&xd[(b * n + i) * d..][..d]);
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&[batch, k, d], y), Op::Gather { x, indices }, needs)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let y = self.value(x).permute(perm);
        let needs = self.needs(x);
        self.push(y, Op::Permute { x, perm: perm.to_vec() }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshape(shape);
        let needs = self.needs(x);
        self.push(y, Op::Reshape { x }, needs)
    }

    /// `[B, T, D] -> [B, D]`: mean over time plus max over time.
    pub fn temporal_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (batch, t, d) = (s[0], s[1], s[2]);
        let xd = self.value(x).data();
        let mut y = vec![0.0; batch * d];
        let mut argmax = vec![0usize; batch * d];
        for b in 0..batch {
            for j in 0..d {
                let mut sum = 0.0;
                let mut best = (f64::NEG_INFINITY, 0usize);
                for ti in 0..t {
                    let idx = (b * t + ti) * d + j;
                    sum += xd[idx];
                    if xd[idx] > best.0 {
                        best = (xd[idx], idx);
                    }
                }
                y[b * d + j] = sum / t as f64 + best.0;
                argmax[b * d + j] = best.1;
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&[batch, d], y), Op::TemporalPool { x, argmax }, needs)
    }

    /// Propagates `seed` (the gradient of some scalar with respect to `out`) back through the tape.
    pub fn backward(&self, out: Var, seed: Tensor) -> Grads {
        self.backward_many(vec![(out, seed)])
    }

    /// Backward pass for a scalar that depends on several outputs, given its gradient with respect to each.
    pub fn backward_many(&self, seeds: Vec<(Var, Tensor)>) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (out, seed) in seeds {
            assert_eq!(self.value(out).shape(), seed.shape(), "seed gradient shape");
            last = last.max(out.0);
            match &mut grads[out.0] {
                Some(t) => t.add_assign(&seed),
                slot @ None => *slot = Some(seed),
            }
        }
        let mut params = HashMap::new();
        for i in (0..=last).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {
                    grads[i] = Some(dy);
                }
                Op::Param(id) => {
                    params.insert(*id, dy);
                }
                op => self.backward_op(op, i, dy, &mut grads),
            }
        }
        Grads { params, nodes: grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_op(&self, op: &Op, node: usize, dy: Tensor, grads: &mut [Option<Tensor>]) {
        let y = self.nodes[node].value.as_ref().expect("op nodes hold values");
        match op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let (fin, fout) = (self.value(*w).dim(0), self.value(*w).dim(1));
                let rows = xv.numel() / fin;
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * fin];
                    gemm(1.0, Mat::new(dy.data(), rows, fout), Mat::new(self.value(*w).data(), fin, fout).t(), 0.0, MatMut::new(&mut dx, rows, fin));
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; fin * fout];
                    gemm(1.0, Mat::new(xv.data(), rows, fin).t(), Mat::new(dy.data(), rows, fout), 0.0, MatMut::new(&mut dw, fin, fout));
                    self.accumulate(grads, *w, Tensor::from_vec(&[fin, fout], dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; fout];
                    for r in dy.data().chunks(fout) {
                        db.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[fout], db));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let batch = xv.dim(0);
                let out_c = wv.dim(0);
                let (kr, kc) = (geom.col_rows(), geom.col_cols());
                let in_len = geom.channels * geom.height * geom.width;
                let mut cols = vec![0.0; kr * kc];
                let mut dcols = vec![0.0; kr * kc];
                let mut dw = vec![0.0; out_c * kr];
                let mut dx = if self.needs(*x) { vec![0.0; xv.numel()] } else { Vec::new() };
                for bi in 0..batch {
                    let dyb = &dy.data()[bi * out_c * kc..(bi + 1) * out_c * kc];
                    if self.needs(*w) {
                        im2col(&xv.data()[bi * in_len..(bi + 1) * in_len], geom, &mut cols);
                        gemm(1.0, Mat::new(dyb, out_c, kc), Mat::new(&cols, kr, kc).t(), 1.0, MatMut::new(&mut dw, out_c, kr));
                    }
                    if self.needs(*x) {
                        gemm(1.0, Mat::new(wv.data(), out_c, kr).t(), Mat::new(dyb, out_c, kc), 0.0, MatMut::new(&mut dcols, kr, kc));
                        col2im(&dcols, geom, &mut dx[bi * in_len..(bi + 1) * in_len]);
                    }
                }
                if self.needs(*x) {
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, Tensor::from_vec(wv.shape(), dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; out_c];
                    for bi in 0..batch {
                        for (o, dbv) in db.iter_mut().enumerate() {
                            *dbv += dy.data()[(bi * out_c + o) * kc..][..kc].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[out_c], db));
                }
            }
            Op::Norm { x, gamma, beta, xhat, inv_std, dims, batch_stats, affine_inner } => {
                let (outer, groups, inner) = *dims;
                let g = self.value(*gamma).data();
                let dyd = dy.data();
                let mut dgamma = vec![0.0; g.len()];
                let mut dbeta = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; dyd.len()];
                for o in 0..outer {
                    for c in 0..groups {
                        let off = (o * groups + c) * inner;
                        for i in 0..inner {
                            let a = if *affine_inner { i } else { c };
                            dgamma[a] += dyd[off + i] * xhat[off + i];
                            dbeta[a] += dyd[off + i];
                            dxhat[off + i] = dyd[off + i] * g[a];
                        }
                    }
                }
                if self.needs(*x) {
                    let count = (outer * inner) as f64;
                    let mut dx = vec![0.0; dyd.len()];
                    if *batch_stats {
                        let mut sum_d = vec![0.0; groups];
                        let mut sum_dx = vec![0.0; groups];
                        for o in 0..outer {
                            for c in 0..groups {
                                let off = (o * groups + c) * inner;
                                for i in 0..inner {
                                    sum_d[c] += dxhat[off + i];
                                    sum_dx[c] += dxhat[off + i] * xhat[off + i];
                                }
                            }
                        }
                        for o in 0..outer {
                            for c in 0..groups {
                                let off = (o * groups + c) * inner;
                                let k = inv_std[c] / count;
                                for i in 0..inner {
                                    dx[off + i] = k * (count * dxhat[off + i] - sum_d[c] - xhat[off + i] * sum_dx[c]);
                                }
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for c in 0..groups {
                                let off = (o * groups + c) * inner;
                                for i in 0..inner {
                                    dx[off + i] = dxhat[off + i] * inv_std[c];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(y.shape(), dx));
                }
                self.accumulate(grads, *gamma, Tensor::from_vec(&[g.len()], dgamma));
                self.accumulate(grads, *beta, Tensor::from_vec(&[g.len()], dbeta));
            }
            Op::Relu { x } => {
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu { x } => {
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(self.value(*x).data()).for_each(|(g, &v)| *g *= gelu_grad(v));
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout { x, mask } => {
                let mut dx = dy;
                dx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                self.accumulate(grads, *x, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.numel()];
                for (g, &idx) in dy.data().iter().zip(argmax) {
                    dx[idx] += g;
                }
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *b, dy.clone());
                self.accumulate(grads, *a, dy);
            }
            Op::AddConst { x } | Op::Reshape { x } => {
                let shape = self.shape(*x);
                self.accumulate(grads, *x, dy.reshape(&shape));
            }
            Op::Attention { qkv, heads, probs } => {
                let s = self.shape(*qkv);
                let d = s[2] / 3;
                let dq = attention_backward(self.value(*qkv).data(), probs, dy.data(), s[0], s[1], d, *heads);
                self.accumulate(grads, *qkv, Tensor::from_vec(&s, dq));
            }
            Op::PrependToken { x, token } => {
                let s = self.shape(*x);
                let (batch, n, d) = (s[0], s[1], s[2]);
                let mut dx = Vec::with_capacity(batch * n * d);
                let mut dt = vec![0.0; d];
                for b in 0..batch {
                    let seq = &dy.data()[b * (n + 1) * d..(b + 1) * (n + 1) * d];
                    dt.iter_mut().zip(&seq[..d]).for_each(|(a, v)| *a += v);
                    dx.extend_from_slice(&seq[d..]);
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, dx));
                self.accumulate(grads, *token, Tensor::from_vec(&[d], dt));
            }
            Op::SelectToken { x, index } => {
                let s = self.shape(*x);
                let (n, d) = (s[1], s[2]);
                let mut dx = vec![0.0; s.iter().product()];
                for (b, g) in dy.data().chunks(d).enumerate() {
                    dx[(b * n + index) * d..][..d].copy_from_slice(g);
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, dx));
            }
            Op::Gather { x, indices } => {
                let s = self.shape(*x);
                let (n, d) = (s[1], s[2]);
                let k = indices.first().map_or(0, Vec::len);
                let mut dx = vec![0.0; s.iter().product()];
                for (b, ix) in indices.iter().enumerate() {
                    for (j, &i) in ix.iter().enumerate() {
                        let src = &dy.data()[(b * k + j) * d..][..d];
                        dx[(b * n + i) * d..][..d].iter_mut().zip(src).for_each(|(a, v)| *a += v);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, dx));
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *x, dy.permute(&inv));
            }
            Op::TemporalPool { x, argmax } => {
                let s = self.shape(*x);
                let (batch, t, d) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; batch * t * d];
                for b in 0..batch {
                    for j in 0..d {
                        let g = dy.data()[b * d + j];
                        for ti in 0..t {
                            dx[(b * t + ti) * d + j] += g / t as f64;
                        }
                        dx[argmax[b * d + j]] += g;
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&s, dx));
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
