//! Tape-based reverse-mode autodiff. Operations execute eagerly and append a
//! node to the tape; `backward` replays the tape in reverse. Node ids are
//! strictly increasing, so every parent id is smaller than its child's and a
//! single reverse sweep visits nodes in valid topological order.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::param::Parameter;
use crate::tensor::Tensor;
use crate::Scalar;

/// Handle to a node of one graph. Using a `Var` with a different graph than
/// the one that created it is a logic error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Sum(Var),
    SliceRows { x: Var, start: usize, end: usize },
    ConcatRows(Var, Var),
    Conv1d { x: Var, w: Var, b: Var, dilation: usize },
    ChannelMix { x: Var, w: Var },
    Embedding { table: Var, indices: Vec<usize> },
    GroupChannels { x: Var, group: usize },
    RepeatCols { x: Var, times: usize },
    LogDet { x: Var, floor: f64 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only recording graph for one forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bound: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), bound: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records an input whose gradient should be computed (for tests and
    /// verification paths that differentiate with respect to data).
    pub fn watched_input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter as a graph leaf. Binding the same name twice
    /// returns the first leaf, so modules can freely re-reference weights.
    pub fn param(&mut self, p: &Parameter<T>) -> Result<Var> {
        if let Some(&v) = self.bound.get(&p.name) {
            if self.nodes[v.0].value.shape() != p.value.shape() {
                return Err(Error::ParamRebound { name: p.name.clone() });
            }
            return Ok(v);
        }
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.insert(p.name.clone(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to node `v`, if the
    /// node was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a bound parameter name.
    pub fn grad_by_name(&self, name: &str) -> Option<&[T]> {
        self.bound.get(name).and_then(|&v| self.grad(v))
    }

    fn shape2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.nodes[v.0].value.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a rank-2 tensor, got shape {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("operand shapes {:?} and {:?} differ", sa, sb),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let data: Vec<T> = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data).expect("same shape");
        let ng = self.nodes[a.0].needs_grad;
        self.push(t, op, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::NonPositiveLog { value: bad.as_f64() });
        }
        Ok(self.unary(a, Op::Log(a), |x| x.ln()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::MulScalar(a, c), |x| x * c)
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.nodes[a.0].value.data() {
            acc = acc + v;
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::scalar(acc), Op::Sum(a), ng)
    }

    /// Rows `start..end` of a `[C, T]` tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (c, t) = self.shape2(x, "slice_rows")?;
        if start >= end || end > c {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {}..{} out of bounds for {} channels", start, end, c),
            });
        }
        let data = self.nodes[x.0].value.data()[start * t..end * t].to_vec();
        let out = Tensor::new(vec![end - start, t], data)?;
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::SliceRows { x, start, end }, ng))
    }

    /// Stacks two `[C, T]` tensors along the channel axis.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ta) = self.shape2(a, "concat_rows")?;
        let (cb, tb) = self.shape2(b, "concat_rows")?;
        if ta != tb {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                detail: format!("time lengths {} and {} differ", ta, tb),
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * ta);
        data.extend_from_slice(self.nodes[a.0].value.data());
        data.extend_from_slice(self.nodes[b.0].value.data());
        let out = Tensor::new(vec![ca + cb, ta], data)?;
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(out, Op::ConcatRows(a, b), ng))
    }

    /// Dilated same-padded 1-D convolution: `x [C_in, L]`, `w [C_out, C_in, K]`
    /// with odd `K`, `b [C_out]`, output `[C_out, L]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (c_in, t) = self.shape2(x, "conv1d")?;
        let ws = self.nodes[w.0].value.shape().to_vec();
        if ws.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("weight must be rank 3 [C_out, C_in, K], got {:?}", ws),
            });
        }
        let (c_out, c_in_w, k) = (ws[0], ws[1], ws[2]);
        if c_in_w != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("input has {} channels but weight expects {}", c_in, c_in_w),
            });
        }
        if k % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("kernel size {} must be odd for same padding", k),
            });
        }
        let bs = self.nodes[b.0].value.shape().to_vec();
        if bs != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("bias shape {:?} must be [{}]", bs, c_out),
            });
        }
        if dilation == 0 {
            return Err(Error::ShapeMismatch { op: "conv1d", detail: "dilation must be positive".into() });
        }
        let mut out = vec![T::zero(); c_out * t];
        kernels::conv1d(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            self.nodes[b.0].value.data(),
            c_in,
            c_out,
            k,
            dilation,
            t,
            &mut out,
        );
        let t_out = Tensor::new(vec![c_out, t], out)?;
        let ng = self.nodes[x.0].needs_grad
            || self.nodes[w.0].needs_grad
            || self.nodes[b.0].needs_grad;
        Ok(self.push(t_out, Op::Conv1d { x, w, b, dilation }, ng))
    }

    /// Per-frame matrix application: `out[:, t] = W * x[:, t]` for `W [C, C]`.
    pub fn channel_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, t) = self.shape2(x, "channel_mix")?;
        let (cw, cw2) = self.shape2(w, "channel_mix")?;
        if cw != cw2 || cw != c {
            return Err(Error::ShapeMismatch {
                op: "channel_mix",
                detail: format!("W shape [{}, {}] must be square of size {}", cw, cw2, c),
            });
        }
        let mut out = vec![T::zero(); c * t];
        kernels::matmul_ct(
            self.nodes[w.0].value.data(),
            self.nodes[x.0].value.data(),
            None,
            c,
            c,
            t,
            &mut out,
        );
        let t_out = Tensor::new(vec![c, t], out)?;
        let ng = self.nodes[x.0].needs_grad || self.nodes[w.0].needs_grad;
        Ok(self.push(t_out, Op::ChannelMix { x, w }, ng))
    }

    /// Row gather: `out[i, :] = table[indices[i], :]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, e) = self.shape2(table, "embedding")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::IndexOutOfRange { op: "embedding", index: bad, bound: v });
        }
        let src = self.nodes[table.0].value.data();
        let mut data = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            data.extend_from_slice(&src[i * e..(i + 1) * e]);
        }
        let out = Tensor::new(vec![indices.len(), e], data)?;
        let ng = self.nodes[table.0].needs_grad;
        Ok(self.push(out, Op::Embedding { table, indices: indices.to_vec() }, ng))
    }

    /// Regroups `[N, E]` rows into frames of `group` consecutive rows:
    /// output `[group*E, N/group]` with `out[j*E+e, f] = in[f*group + j, e]`.
    pub fn group_channels(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, e) = self.shape2(x, "group_channels")?;
        if group == 0 || n % group != 0 {
            return Err(Error::ShapeMismatch {
                op: "group_channels",
                detail: format!("{} rows not divisible into groups of {}", n, group),
            });
        }
        let frames = n / group;
        let src = self.nodes[x.0].value.data();
        let mut data = vec![T::zero(); n * e];
        for f in 0..frames {
            for j in 0..group {
                let in_row = &src[(f * group + j) * e..(f * group + j + 1) * e];
                for (col, &v) in in_row.iter().enumerate() {
                    data[(j * e + col) * frames + f] = v;
                }
            }
        }
        let out = Tensor::new(vec![group * e, frames], data)?;
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::GroupChannels { x, group }, ng))
    }

    /// Nearest-neighbor upsampling along time: each column repeated `times`.
    pub fn repeat_cols(&mut self, x: Var, times: usize) -> Result<Var> {
        let (c, t) = self.shape2(x, "repeat_cols")?;
        if times == 0 {
            return Err(Error::ShapeMismatch { op: "repeat_cols", detail: "times must be positive".into() });
        }
        let src = self.nodes[x.0].value.data();
        let mut data = vec![T::zero(); c * t * times];
        for row in 0..c {
            let irow = &src[row * t..(row + 1) * t];
            let orow = &mut data[row * t * times..(row + 1) * t * times];
            for (tt, &v) in irow.iter().enumerate() {
                for r in 0..times {
                    orow[tt * times + r] = v;
                }
            }
        }
        let out = Tensor::new(vec![c, t * times], data)?;
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(out, Op::RepeatCols { x, times }, ng))
    }

    /// `log |det X|` of a square matrix, differentiable through
    /// `d log|det X| = X^{-T} : dX`. Errors when `|det|` is below `floor`.
    pub fn logdet(&mut self, x: Var, floor: f64) -> Result<Var> {
        let (n, n2) = self.shape2(x, "logdet")?;
        if n != n2 {
            return Err(Error::ShapeMismatch {
                op: "logdet",
                detail: format!("matrix must be square, got [{}, {}]", n, n2),
            });
        }
        let ld = kernels::logabsdet(self.nodes[x.0].value.data(), n, floor)?;
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(Tensor::scalar(ld), Op::LogDet { x, floor }, ng))
    }

    /// Reverse sweep from a scalar loss. Fills gradients for every node that
    /// transitively requires them; the rest stay `None` (treated as zero).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: self.nodes[loss.0].value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn slot<'a>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut [T] {
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b].into_iter() {
                    if self.needs(p) {
                        let d = Self::slot(grads, p, g.len());
                        for (o, &gv) in d.iter_mut().zip(g) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.nodes[b.0].value.data();
                    let d = Self::slot(grads, *a, g.len());
                    for ((o, &gv), &x) in d.iter_mut().zip(g).zip(bv) {
                        *o = *o + gv * x;
                    }
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].value.data();
                    let d = Self::slot(grads, *b, g.len());
                    for ((o, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        *o = *o + gv * x;
                    }
                }
            }
            Op::Neg(a) => {
                if self.needs(*a) {
                    let d = Self::slot(grads, *a, g.len());
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o = *o - gv;
                    }
                }
            }
            Op::Exp(a) => {
                if self.needs(*a) {
                    let out = node.value.data();
                    let d = Self::slot(grads, *a, g.len());
                    for ((o, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                        *o = *o + gv * y;
                    }
                }
            }
            Op::Log(a) => {
                if self.needs(*a) {
                    let xv = self.nodes[a.0].value.data();
                    let d = Self::slot(grads, *a, g.len());
                    for ((o, &gv), &x) in d.iter_mut().zip(g).zip(xv) {
                        *o = *o + gv / x;
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let out = node.value.data();
                    let d = Self::slot(grads, *a, g.len());
                    for ((o, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                        *o = *o + gv * (T::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let out = node.value.data();
                    let d = Self::slot(grads, *a, g.len());
                    for ((o, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                        *o = *o + gv * y * (T::one() - y);
                    }
                }
            }
            Op::AddScalar(a) => {
                if self.needs(*a) {
                    let d = Self::slot(grads, *a, g.len());
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
            }
            Op::MulScalar(a, c) => {
                if self.needs(*a) {
                    let d = Self::slot(grads, *a, g.len());
                    for (o, &gv) in d.iter_mut().zip(g) {
                        *o = *o + gv * *c;
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let n = self.nodes[a.0].value.numel();
                    let gv = g[0];
                    let d = Self::slot(grads, *a, n);
                    for o in d.iter_mut() {
                        *o = *o + gv;
                    }
                }
            }
            Op::SliceRows { x, start, end } => {
                if self.needs(*x) {
                    let t = self.nodes[x.0].value.shape()[1];
                    let n = self.nodes[x.0].value.numel();
                    let d = Self::slot(grads, *x, n);
                    let dst = &mut d[start * t..end * t];
                    for (o, &gv) in dst.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.nodes[a.0].value.numel();
                if self.needs(*a) {
                    let d = Self::slot(grads, *a, na);
                    for (o, &gv) in d.iter_mut().zip(&g[..na]) {
                        *o = *o + gv;
                    }
                }
                if self.needs(*b) {
                    let nb = self.nodes[b.0].value.numel();
                    let d = Self::slot(grads, *b, nb);
                    for (o, &gv) in d.iter_mut().zip(&g[na..]) {
                        *o = *o + gv;
                    }
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let xs = self.nodes[x.0].value.shape();
                let (c_in, t) = (xs[0], xs[1]);
                let ws = self.nodes[w.0].value.shape();
                let (c_out, k) = (ws[0], ws[2]);
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.data();
                    let d = Self::slot(grads, *x, c_in * t);
                    kernels::conv1d_grad_x(wv, g, c_in, c_out, k, *dilation, t, d);
                }
                if self.needs(*w) || self.needs(*b) {
                    let xv = self.nodes[x.0].value.data();
                    let mut dw = vec![T::zero(); c_out * c_in * k];
                    let mut db = vec![T::zero(); c_out];
                    kernels::conv1d_grad_wb(xv, g, c_in, c_out, k, *dilation, t, &mut dw, &mut db);
                    if self.needs(*w) {
                        let d = Self::slot(grads, *w, dw.len());
                        for (o, &gv) in d.iter_mut().zip(&dw) {
                            *o = *o + gv;
                        }
                    }
                    if self.needs(*b) {
                        let d = Self::slot(grads, *b, db.len());
                        for (o, &gv) in d.iter_mut().zip(&db) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::ChannelMix { x, w } => {
                let (c, t) = {
                    let s = self.nodes[x.0].value.shape();
                    (s[0], s[1])
                };
                if self.needs(*x) {
                    let wv = self.nodes[w.0].value.data();
                    let d = Self::slot(grads, *x, c * t);
                    kernels::matmul_ct_grad_x(wv, g, c, c, t, d);
                }
                if self.needs(*w) {
                    let xv = self.nodes[x.0].value.data();
                    let d = Self::slot(grads, *w, c * c);
                    kernels::matmul_ct_grad_w(xv, g, c, c, t, d);
                }
            }
            Op::Embedding { table, indices } => {
                if self.needs(*table) {
                    let e = self.nodes[table.0].value.shape()[1];
                    let n = self.nodes[table.0].value.numel();
                    let d = Self::slot(grads, *table, n);
                    for (i, &row) in indices.iter().enumerate() {
                        let dst = &mut d[row * e..(row + 1) * e];
                        let src = &g[i * e..(i + 1) * e];
                        for (o, &gv) in dst.iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::GroupChannels { x, group } => {
                if self.needs(*x) {
                    let (n, e) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let frames = n / group;
                    let d = Self::slot(grads, *x, n * e);
                    for f in 0..frames {
                        for j in 0..*group {
                            for col in 0..e {
                                let src = g[(j * e + col) * frames + f];
                                let dst = (f * group + j) * e + col;
                                d[dst] = d[dst] + src;
                            }
                        }
                    }
                }
            }
            Op::RepeatCols { x, times } => {
                if self.needs(*x) {
                    let (c, t) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let d = Self::slot(grads, *x, c * t);
                    for row in 0..c {
                        let grow = &g[row * t * times..(row + 1) * t * times];
                        let drow = &mut d[row * t..(row + 1) * t];
                        for tt in 0..t {
                            let mut acc = T::zero();
                            for r in 0..*times {
                                acc = acc + grow[tt * times + r];
                            }
                            drow[tt] = drow[tt] + acc;
                        }
                    }
                }
            }
            Op::LogDet { x, floor } => {
                if self.needs(*x) {
                    let n = self.nodes[x.0].value.shape()[0];
                    let inv = kernels::invert(self.nodes[x.0].value.data(), n, *floor)?;
                    let gv = g[0];
                    let d = Self::slot(grads, *x, n * n);
                    for i in 0..n {
                        for j in 0..n {
                            d[i * n + j] = d[i * n + j] + gv * inv[j * n + i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn param(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Parameter<f64> {
        Parameter::new(name, Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn sum_of_squares_gradient_is_two_p() {
        let p = param("p", vec![3], vec![1.0, -2.0, 0.5]);
        let mut g = Graph::new();
        let v = g.param(&p).unwrap();
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let gr = g.grad_by_name("p").unwrap();
        assert_eq!(gr, &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_leaves_params_untouched() {
        let p = param("p", vec![2], vec![1.0, 2.0]);
        let mut g = Graph::new();
        let _bound = g.param(&p).unwrap();
        let c = g.input(Tensor::scalar(5.0));
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        assert!(g.grad_by_name("p").is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn conv_hand_evaluated_example() {
        // input [1,2,3], K=3 weight [1,0,-1], dilation 1, zero bias.
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.input(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
        let b = g.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = g.conv1d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv_dilated_impulse_spreads_kernel() {
        // Direct-sum oracle: out[l] = sum_k w[k] * x[l + (k-1)*2].
        let x_data = {
            let mut v = vec![0.0; 9];
            v[4] = 1.0;
            v
        };
        let w_data = vec![0.25, -1.0, 0.5];
        let oracle: Vec<f64> = (0..9)
            .map(|l| {
                (0..3)
                    .map(|k| {
                        let idx = l as isize + (k as isize - 1) * 2;
                        if (0..9).contains(&idx) {
                            w_data[k] * x_data[idx as usize]
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 9], x_data).unwrap());
        let w = g.input(Tensor::new(vec![1, 1, 3], w_data).unwrap());
        let b = g.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = g.conv1d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).data(), &oracle[..]);
    }

    #[test]
    fn channel_mix_swaps_channels_for_permutation() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.input(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = g.channel_mix(x, w).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn embedding_repeated_index_accumulates_gradient() {
        let tbl = param("tbl", vec![4, 2], vec![0.0; 8]);
        let mut g = Graph::new();
        let t = g.param(&tbl).unwrap();
        let rows = g.embedding(t, &[3, 3]).unwrap();
        let loss = g.sum(rows);
        g.backward(loss).unwrap();
        let gr = g.grad_by_name("tbl").unwrap();
        assert_eq!(&gr[6..8], &[2.0, 2.0]);
        assert!(gr[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_out_of_range_is_an_error() {
        let mut g = Graph::<f64>::new();
        let t = g.input(Tensor::zeros(vec![4, 2]));
        assert!(matches!(
            g.embedding(t, &[4]),
            Err(Error::IndexOutOfRange { index: 4, bound: 4, .. })
        ));
    }

    #[test]
    fn log_of_non_positive_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(g.log(x), Err(Error::NonPositiveLog { .. })));
    }

    #[test]
    fn gated_activation_matches_direct_evaluation() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(1.0f64));
        let b = g.input(Tensor::scalar(-1.0f64));
        let ta = g.tanh(a);
        let sb = g.sigmoid(b);
        let gate = g.mul(ta, sb).unwrap();
        let expect = 1.0f64.tanh() * (1.0 / (1.0 + 1.0f64.exp()));
        assert_relative_eq!(g.value(gate).item(), expect, epsilon = 1e-15);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3], vec![0.3f64, 1.0, 7.5]).unwrap());
        let l = g.log(x).unwrap();
        let e = g.exp(l);
        for (&a, &b) in g.value(e).data().iter().zip(g.value(x).data()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn group_channels_layout() {
        // Rows [[0,1],[2,3],[4,5],[6,7]] grouped by 2 -> [4, 2] columns are frames.
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![4, 2], (0..8).map(|v| v as f64).collect()).unwrap());
        let y = g.group_channels(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 2]);
        // out[j*E+e, f] = in[f*2 + j, e]
        assert_eq!(g.value(y).data(), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn repeat_cols_duplicates_frames() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let y = g.repeat_cols(x, 3).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_linearity_in_the_loss() {
        // backward(a + b) equals backward(a) + backward(b), run on twin graphs.
        let p = param("p", vec![2], vec![0.7, -1.3]);
        let build = |which: u8| -> Vec<f64> {
            let mut g = Graph::new();
            let v = g.param(&p).unwrap();
            let sq = g.mul(v, v).unwrap();
            let a = g.sum(sq);
            let e = g.exp(v);
            let b = g.sum(e);
            let loss = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b).unwrap(),
            };
            g.backward(loss).unwrap();
            g.grad_by_name("p").unwrap().to_vec()
        };
        let ga = build(0);
        let gb = build(1);
        let gab = build(2);
        for i in 0..2 {
            assert_relative_eq!(gab[i], ga[i] + gb[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let p = param("p", vec![4], vec![0.1, 0.2, 0.3, 0.4]);
        let run = || {
            let mut g = Graph::new();
            let v = g.param(&p).unwrap();
            let t = g.tanh(v);
            let s = g.sigmoid(t);
            let loss = g.sum(s);
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad_by_name("p").unwrap().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
