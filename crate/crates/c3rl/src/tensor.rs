//! Reverse-mode automatic differentiation over dense n-dimensional `f64` arrays.
//!
//! Operations recorded on a [`Tape`] during the forward pass are replayed in
//! reverse append order to propagate gradients. The tape lives for one
//! training step and is discarded after [`Tape::backward`].

use std::cell::RefCell;
use std::rc::Rc;

/// Receives gradient contributions for a bound leaf (typically a trainable
/// parameter). Accumulation semantics: repeated backward calls add.
pub trait GradSink {
    fn accumulate(&self, grad: &[f64]);
}

struct Node {
    parents: Vec<usize>,
    numel: usize,
    /// Maps the incoming gradient (flat, `numel` long) to one flat gradient
    /// per parent, in `parents` order.
    backward: Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    sinks: Vec<(usize, Rc<dyn GradSink>)>,
}

/// Wengert list. One tape per training step; exclusively owned by one run.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient w.r.t. a tensor on the tape; `None` if the tensor was not
    /// reachable from the loss or not on the tape.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        t.node
            .and_then(|id| self.by_node.get(id).and_then(|g| g.as_deref()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, parents: Vec<usize>, numel: usize, backward: Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { parents, numel, backward });
        id
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar loss. Every bound sink reachable from the
    /// loss receives its gradient; repeated calls accumulate.
    pub fn backward(&self, loss: &Tensor) -> Grads {
        assert!(
            loss.numel() == 1,
            "backward: loss must be scalar, got shape {:?}",
            loss.shape
        );
        let loss_node = loss
            .node
            .expect("backward: loss is not on the active tape");
        let inner = self.inner.borrow();
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss_node] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            debug_assert_eq!(g.len(), node.numel);
            if !node.parents.is_empty() {
                let parent_grads = (node.backward)(&g);
                assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[pid] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        for (id, sink) in &inner.sinks {
            if let Some(g) = &grads[*id] {
                sink.accumulate(g);
            }
        }
        Grads { by_node: grads }
    }
}

/// Dense n-dimensional value. Row-major flat storage; cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Rc<[f64]>,
    tape: Option<Tape>,
    node: Option<usize>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Right-aligned broadcast; only missing or size-1 axes may expand.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed as `out_shape`, zero on broadcast axes.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let rank = out_shape.len();
    let pad = rank - shape.len();
    let mut s = vec![0; rank];
    for i in 0..shape.len() {
        s[pad + i] = if shape[i] == 1 && out_shape[pad + i] != 1 { 0 } else { own[i] };
    }
    s
}

/// Walks all flat indices of `out_shape`, yielding the flat offset into a
/// tensor of `shape` broadcast to it.
fn for_each_bcast(out_shape: &[usize], shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = bcast_strides(shape, out_shape);
    let rank = out_shape.len();
    let total = numel_of(out_shape);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for flat in 0..total {
        f(flat, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        assert!(
            numel_of(&shape) == data.len(),
            "tensor: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data: data.into(), tape: None, node: None }
    }

    pub fn scalar_value(v: f64) -> Self {
        Tensor::new(vec![v], vec![])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(vec![0.0; numel_of(shape)], shape.to_vec())
    }

    /// Leaf variable on `tape`; gradients become readable via [`Grads::wrt`].
    pub fn leaf(tape: &Tape, data: Vec<f64>, shape: Vec<usize>) -> Self {
        let mut t = Tensor::new(data, shape);
        let numel = t.numel();
        t.node = Some(tape.push(vec![], numel, Box::new(|_| vec![])));
        t.tape = Some(tape.clone());
        t
    }

    /// Leaf bound to a gradient sink (parameter binding).
    pub fn bound_leaf(tape: &Tape, data: Vec<f64>, shape: Vec<usize>, sink: Rc<dyn GradSink>) -> Self {
        let t = Tensor::leaf(tape, data, shape);
        tape.inner.borrow_mut().sinks.push((t.node.unwrap(), sink));
        t
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn item(&self) -> f64 {
        assert!(self.numel() == 1, "item: tensor has shape {:?}", self.shape);
        self.data[0]
    }

    /// Same values, no tape participation. Gradients never flow through the
    /// result into this tensor's producers.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), tape: None, node: None }
    }

    fn tape_of(a: &Tensor, b: Option<&Tensor>) -> Option<Tape> {
        match (&a.tape, b.and_then(|b| b.tape.as_ref())) {
            (Some(ta), Some(tb)) => {
                assert!(ta.same_tape(tb), "operands recorded on different tapes");
                Some(ta.clone())
            }
            (Some(t), None) | (None, Some(t)) => Some(t.clone()),
            (None, None) => None,
        }
    }

    fn unary(
        &self,
        out_data: Vec<f64>,
        out_shape: Vec<usize>,
        backward: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Tensor {
        let mut out = Tensor::new(out_data, out_shape);
        if let (Some(tape), Some(node)) = (&self.tape, self.node) {
            let numel = out.numel();
            out.node = Some(tape.push(vec![node], numel, Box::new(move |g| vec![backward(g)])));
            out.tape = Some(tape.clone());
        }
        out
    }

    fn binary(
        a: &Tensor,
        b: &Tensor,
        out_data: Vec<f64>,
        out_shape: Vec<usize>,
        backward: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + 'static,
    ) -> Tensor {
        let mut out = Tensor::new(out_data, out_shape);
        let tape = Tensor::tape_of(a, Some(b));
        if let Some(tape) = tape {
            let numel = out.numel();
            match (a.node, b.node) {
                (Some(na), Some(nb)) => {
                    out.node = Some(tape.push(
                        vec![na, nb],
                        numel,
                        Box::new(move |g| {
                            let (ga, gb) = backward(g);
                            vec![ga, gb]
                        }),
                    ));
                }
                (Some(na), None) => {
                    out.node = Some(tape.push(vec![na], numel, Box::new(move |g| vec![backward(g).0])));
                }
                (None, Some(nb)) => {
                    out.node = Some(tape.push(vec![nb], numel, Box::new(move |g| vec![backward(g).1])));
                }
                (None, None) => {}
            }
            if out.node.is_some() {
                out.tape = Some(tape);
            }
        }
        out
    }

    fn broadcast_binop(&self, other: &Tensor, name: &str, f: fn(f64, f64) -> f64, df: fn(f64, f64) -> (f64, f64)) -> Tensor {
        let out_shape = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("{name}: shapes {:?} and {:?} are not broadcastable", self.shape, other.shape)
        });
        let total = numel_of(&out_shape);
        let mut out = vec![0.0; total];
        let mut a_off = vec![0usize; total];
        let mut b_off = vec![0usize; total];
        for_each_bcast(&out_shape, &self.shape, |flat, off| a_off[flat] = off);
        for_each_bcast(&out_shape, &other.shape, |flat, off| b_off[flat] = off);
        for i in 0..total {
            out[i] = f(self.data[a_off[i]], other.data[b_off[i]]);
        }
        let (ad, bd) = (self.data.clone(), other.data.clone());
        let (a_len, b_len) = (self.numel(), other.numel());
        Tensor::binary(self, other, out, out_shape, move |g| {
            let mut ga = vec![0.0; a_len];
            let mut gb = vec![0.0; b_len];
            for i in 0..g.len() {
                let (da, db) = df(ad[a_off[i]], bd[b_off[i]]);
                ga[a_off[i]] += g[i] * da;
                gb[b_off[i]] += g[i] * db;
            }
            (ga, gb)
        })
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.broadcast_binop(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.broadcast_binop(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.broadcast_binop(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.broadcast_binop(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|v| v * c).collect();
        self.unary(out, self.shape.clone(), move |g| g.iter().map(|v| v * c).collect())
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|v| v + c).collect();
        self.unary(out, self.shape.clone(), |g| g.to_vec())
    }

    /// Batched matrix product over the trailing two axes; leading axes
    /// broadcast. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC, sum-reduced over
    /// broadcast batch axes.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(
            self.rank() >= 2 && other.rank() >= 2,
            "matmul: operands must have rank >= 2, got {:?} x {:?}",
            self.shape,
            other.shape
        );
        let (m, k) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (k2, n) = (other.shape[other.rank() - 2], other.shape[other.rank() - 1]);
        assert!(
            k == k2,
            "matmul: inner dimensions do not conform: {:?} x {:?}",
            self.shape,
            other.shape
        );
        let a_batch = &self.shape[..self.rank() - 2];
        let b_batch = &other.shape[..other.rank() - 2];
        let batch = broadcast_shape(a_batch, b_batch).unwrap_or_else(|| {
            panic!("matmul: batch dimensions do not broadcast: {:?} x {:?}", self.shape, other.shape)
        });
        let nbatch = numel_of(&batch);
        let mut a_base = vec![0usize; nbatch];
        let mut b_base = vec![0usize; nbatch];
        for_each_bcast(&batch, a_batch, |flat, off| a_base[flat] = off * m * k);
        for_each_bcast(&batch, b_batch, |flat, off| b_base[flat] = off * k * n);

        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0; nbatch * m * n];
        for bi in 0..nbatch {
            let a = &self.data[a_base[bi]..a_base[bi] + m * k];
            let b = &other.data[b_base[bi]..b_base[bi] + k * n];
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        c[i * n + j] += av * b[p * n + j];
                    }
                }
            }
        }
        let (ad, bd) = (self.data.clone(), other.data.clone());
        let (a_len, b_len) = (self.numel(), other.numel());
        Tensor::binary(self, other, out, out_shape, move |g| {
            let mut ga = vec![0.0; a_len];
            let mut gb = vec![0.0; b_len];
            for bi in 0..nbatch {
                let a = &ad[a_base[bi]..a_base[bi] + m * k];
                let b = &bd[b_base[bi]..b_base[bi] + k * n];
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                let ga_b = &mut ga[a_base[bi]..a_base[bi] + m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gc[i * n + j] * b[p * n + j];
                        }
                        ga_b[i * k + p] += acc;
                    }
                }
                let gb_b = &mut gb[b_base[bi]..b_base[bi] + k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += a[i * k + p] * gc[i * n + j];
                        }
                        gb_b[p * n + j] += acc;
                    }
                }
            }
            (ga, gb)
        })
    }

    /// Reorders axes; backward applies the inverse permutation.
    pub fn permute(&self, axes: &[usize]) -> Tensor {
        assert!(
            axes.len() == self.rank(),
            "permute: axes {:?} do not match rank of {:?}",
            axes,
            self.shape
        );
        let mut seen = vec![false; axes.len()];
        for &ax in axes {
            assert!(ax < axes.len() && !seen[ax], "permute: invalid axes {:?}", axes);
            seen[ax] = true;
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides_of(&self.shape);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let total = self.numel();
        let mut out = vec![0.0; total];
        let mut src = vec![0usize; total];
        {
            let rank = out_shape.len();
            let mut idx = vec![0usize; rank];
            let mut off = 0usize;
            for flat in 0..total {
                src[flat] = off;
                out[flat] = self.data[off];
                for ax in (0..rank).rev() {
                    idx[ax] += 1;
                    off += perm_strides[ax];
                    if idx[ax] < out_shape[ax] {
                        break;
                    }
                    off -= perm_strides[ax] * out_shape[ax];
                    idx[ax] = 0;
                }
            }
        }
        let in_len = total;
        self.unary(out, out_shape, move |g| {
            let mut gi = vec![0.0; in_len];
            for (flat, &s) in src.iter().enumerate() {
                gi[s] = g[flat];
            }
            gi
        })
    }

    pub fn transpose_last_two(&self) -> Tensor {
        assert!(
            self.rank() >= 2,
            "transpose_last_two: rank must be >= 2, got shape {:?}",
            self.shape
        );
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        let r = self.rank();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert!(
            numel_of(shape) == self.numel(),
            "reshape: cannot view {:?} as {:?}",
            self.shape,
            shape
        );
        self.unary(self.data.to_vec(), shape.to_vec(), |g| g.to_vec())
    }

    fn reduce(&self, axis: Option<usize>, mean: bool, keepdim: bool) -> Tensor {
        match axis {
            None => {
                let total = self.numel() as f64;
                let s: f64 = self.data.iter().sum();
                let v = if mean { s / total } else { s };
                let shape = if keepdim { vec![1; self.rank()] } else { vec![] };
                let scale = if mean { 1.0 / total } else { 1.0 };
                let in_len = self.numel();
                self.unary(vec![v], shape, move |g| vec![g[0] * scale; in_len])
            }
            Some(ax) => {
                assert!(ax < self.rank(), "reduce: axis {} out of range for shape {:?}", ax, self.shape);
                let n = self.shape[ax];
                let outer: usize = self.shape[..ax].iter().product();
                let inner: usize = self.shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let base = (o * n + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += self.data[base + i];
                        }
                    }
                }
                let scale = if mean { 1.0 / n as f64 } else { 1.0 };
                if mean {
                    for v in &mut out {
                        *v *= scale;
                    }
                }
                let mut shape: Vec<usize> = self.shape.clone();
                if keepdim {
                    shape[ax] = 1;
                } else {
                    shape.remove(ax);
                }
                let in_len = self.numel();
                self.unary(out, shape, move |g| {
                    let mut gi = vec![0.0; in_len];
                    for o in 0..outer {
                        for j in 0..n {
                            let base = (o * n + j) * inner;
                            for i in 0..inner {
                                gi[base + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                    gi
                })
            }
        }
    }

    pub fn sum(&self, axis: Option<usize>, keepdim: bool) -> Tensor {
        self.reduce(axis, false, keepdim)
    }

    pub fn mean(&self, axis: Option<usize>, keepdim: bool) -> Tensor {
        self.reduce(axis, true, keepdim)
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|&v| v.max(0.0)).collect();
        let d = self.data.clone();
        self.unary(out, self.shape.clone(), move |g| {
            g.iter().zip(d.iter()).map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 }).collect()
        })
    }

    /// Tanh-based GELU approximation.
    pub fn gelu_approx(&self) -> Tensor {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let out: Vec<f64> = self
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        let d = self.data.clone();
        self.unary(out, self.shape.clone(), move |g| {
            g.iter()
                .zip(d.iter())
                .map(|(&gv, &x)| {
                    let u = C * (x + A * x * x * x);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    gv * (0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * A * x * x))
                })
                .collect()
        })
    }

    pub fn sqrt_elem(&self) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|&v| v.sqrt()).collect();
        let o = out.clone();
        self.unary(out, self.shape.clone(), move |g| {
            g.iter().zip(o.iter()).map(|(&gv, &y)| gv * 0.5 / y).collect()
        })
    }

    /// Numerically-stable softmax over the last axis; rows sum to 1.
    pub fn softmax_last(&self) -> Tensor {
        assert!(self.rank() >= 1, "softmax_last: rank must be >= 1");
        let d = *self.shape.last().unwrap();
        let rows = self.numel() / d;
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let row = &self.data[r * d..(r + 1) * d];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for i in 0..d {
                let e = (row[i] - mx).exp();
                out[r * d + i] = e;
                s += e;
            }
            for i in 0..d {
                out[r * d + i] /= s;
            }
        }
        let y = out.clone();
        self.unary(out, self.shape.clone(), move |g| {
            let mut gi = vec![0.0; g.len()];
            for r in 0..rows {
                let yr = &y[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    gi[r * d + i] = yr[i] * (gr[i] - dot);
                }
            }
            gi
        })
    }

    /// Each last-axis vector divided by `max(||v||_2, eps)`. Zero vectors
    /// pass through scaled by `1/eps` (finite).
    pub fn l2_normalize_last(&self, eps: f64) -> Tensor {
        assert!(eps > 0.0, "l2_normalize_last: eps must be positive");
        let d = *self.shape.last().unwrap_or(&1);
        let rows = self.numel() / d;
        let mut out = vec![0.0; self.numel()];
        let mut norms = vec![0.0; rows];
        let mut clamped = vec![false; rows];
        for r in 0..rows {
            let row = &self.data[r * d..(r + 1) * d];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = if n > eps { n } else { eps };
            clamped[r] = n <= eps;
            norms[r] = s;
            for i in 0..d {
                out[r * d + i] = row[i] / s;
            }
        }
        let y = out.clone();
        self.unary(out, self.shape.clone(), move |g| {
            let mut gi = vec![0.0; g.len()];
            for r in 0..rows {
                let s = norms[r];
                let yr = &y[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                if clamped[r] {
                    for i in 0..d {
                        gi[r * d + i] = gr[i] / s;
                    }
                } else {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        gi[r * d + i] = (gr[i] - dot * yr[i]) / s;
                    }
                }
            }
            gi
        })
    }

    /// Moving average over the last axis with replicate padding of
    /// `(kernel-1)/2` frames at each end. Kernel must be odd.
    pub fn moving_average_last(&self, kernel: usize) -> Tensor {
        assert!(kernel % 2 == 1, "moving_average_last: kernel must be odd, got {kernel}");
        let len = *self.shape.last().unwrap();
        assert!(kernel <= len, "moving_average_last: kernel {kernel} exceeds axis length {len}");
        let rows = self.numel() / len;
        let half = (kernel - 1) / 2;
        let inv = 1.0 / kernel as f64;
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let row = &self.data[r * len..(r + 1) * len];
            for t in 0..len {
                let mut acc = 0.0;
                for i in 0..kernel {
                    let p = (t + i).saturating_sub(half).min(len - 1);
                    acc += row[p];
                }
                out[r * len + t] = acc * inv;
            }
        }
        self.unary(out, self.shape.clone(), move |g| {
            let mut gi = vec![0.0; g.len()];
            for r in 0..rows {
                for t in 0..len {
                    let gv = g[r * len + t] * inv;
                    for i in 0..kernel {
                        let p = (t + i).saturating_sub(half).min(len - 1);
                        gi[r * len + p] += gv;
                    }
                }
            }
            gi
        })
    }

    /// Sliding windows over the last axis: `[..., L] -> [..., n, l]` with
    /// `n = (L - l) / stride + 1`. Backward scatter-adds overlaps.
    pub fn unfold_last(&self, l: usize, stride: usize) -> Tensor {
        let len = *self.shape.last().unwrap();
        assert!(
            l >= 1 && stride >= 1 && l <= len,
            "unfold_last: invalid patch length {l} / stride {stride} for axis length {len}"
        );
        let n = (len - l) / stride + 1;
        let rows = self.numel() / len;
        let mut out = vec![0.0; rows * n * l];
        for r in 0..rows {
            let row = &self.data[r * len..(r + 1) * len];
            for j in 0..n {
                for i in 0..l {
                    out[(r * n + j) * l + i] = row[j * stride + i];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.pop();
        shape.push(n);
        shape.push(l);
        let in_len = self.numel();
        self.unary(out, shape, move |g| {
            let mut gi = vec![0.0; in_len];
            for r in 0..rows {
                for j in 0..n {
                    for i in 0..l {
                        gi[r * len + j * stride + i] += g[(r * n + j) * l + i];
                    }
                }
            }
            gi
        })
    }
}
