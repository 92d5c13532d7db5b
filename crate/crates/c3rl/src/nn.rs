//! Trainable layers, normalizers, series decomposition, and the Adam
//! optimizer shared by every base model and siamese head.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{numel_of, GradSink, Tape, Tensor};

pub struct ParamInner {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

pub struct ParamCell(RefCell<ParamInner>);

impl GradSink for ParamCell {
    fn accumulate(&self, grad: &[f64]) {
        let mut inner = self.0.borrow_mut();
        for (a, b) in inner.grad.iter_mut().zip(grad) {
            *a += b;
        }
    }
}

/// A named trainable tensor. Cloning shares storage.
#[derive(Clone)]
pub struct Param(pub Rc<ParamCell>);

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = numel_of(&shape);
        assert_eq!(n, value.len(), "parameter value does not match shape");
        Param(Rc::new(ParamCell(RefCell::new(ParamInner {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            value,
        }))))
    }

    /// Uniform init in ±1/√D_in; biases are created with [`Param::zeros`].
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, d_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let n = numel_of(&shape);
        let value: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Param::new(name, shape, value)
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Param::new(name, shape, vec![0.0; n])
    }

    pub fn ones(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Param::new(name, shape, vec![1.0; n])
    }

    pub fn name(&self) -> String {
        self.0 .0.borrow().name.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0 .0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0 .0.borrow().value.len()
    }

    pub fn value(&self) -> Vec<f64> {
        self.0 .0.borrow().value.clone()
    }

    pub fn set_value(&self, v: Vec<f64>) {
        let mut inner = self.0 .0.borrow_mut();
        assert_eq!(v.len(), inner.value.len());
        inner.value = v;
    }

    pub fn grad(&self) -> Vec<f64> {
        self.0 .0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        for g in self.0 .0.borrow_mut().grad.iter_mut() {
            *g = 0.0;
        }
    }

    /// Forward-time view. With a tape the leaf is bound so backward
    /// accumulates into this parameter's grad; without, a constant.
    pub fn tensor(&self, tape: Option<&Tape>) -> Tensor {
        let inner = self.0 .0.borrow();
        match tape {
            Some(t) => Tensor::bound_leaf(t, inner.value.clone(), inner.shape.clone(), self.0.clone()),
            None => Tensor::new(inner.value.clone(), inner.shape.clone()),
        }
    }
}

/// Affine map along the last axis.
pub struct Linear {
    pub w: Param,
    pub b: Param,
    d_in: usize,
    name: String,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let name = name.into();
        Linear {
            w: Param::uniform(format!("{name}.weight"), vec![d_in, d_out], d_in, rng),
            b: Param::zeros(format!("{name}.bias"), vec![d_out]),
            d_in,
            name,
        }
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        assert!(
            x.shape.last() == Some(&self.d_in),
            "linear {}: input shape {:?} does not end in {}",
            self.name,
            x.shape,
            self.d_in
        );
        x.matmul(&self.w.tensor(tape)).add(&self.b.tensor(tape))
    }

    pub fn collect_params(&self, out: &mut Vec<Param>) {
        out.push(self.w.clone());
        out.push(self.b.clone());
    }
}

/// Zero-mean unit-variance per last-axis vector (population variance),
/// then a learned affine.
pub struct LayerNorm {
    pub gain: Param,
    pub shift: Param,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> Self {
        LayerNorm {
            gain: Param::ones(format!("{name}.gain"), vec![d]),
            shift: Param::zeros(format!("{name}.shift"), vec![d]),
            eps: 1e-8,
        }
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        let rank = x.rank();
        let m = x.mean(Some(rank - 1), true);
        let centered = x.sub(&m);
        let var = centered.mul(&centered).mean(Some(rank - 1), true);
        let std = var.add_scalar(self.eps).sqrt_elem();
        let normed = centered.div(&std);
        normed.mul(&self.gain.tensor(tape)).add(&self.shift.tensor(tape))
    }

    pub fn collect_params(&self, out: &mut Vec<Param>) {
        out.push(self.gain.clone());
        out.push(self.shift.clone());
    }
}

/// Scaled dot-product attention over tokens, `softmax(QKᵀ/√d_h)V` per head.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(
            dim % heads == 0,
            "attention {name}: model dim {dim} not divisible by {heads} heads"
        );
        MultiHeadAttention {
            wq: Linear::new(format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(format!("{name}.wo"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// q, k, v: [B, T, D] -> [B, T, D]
    pub fn forward(&self, q: &Tensor, k: &Tensor, v: &Tensor, tape: Option<&Tape>) -> Tensor {
        let (b, t, d) = (q.shape[0], q.shape[1], q.shape[2]);
        assert_eq!(d, self.dim);
        let h = self.heads;
        let dh = d / h;
        let split = |x: &Tensor| -> Tensor {
            // [B, T, D] -> [B, H, T, dh]
            x.reshape(&[b, t, h, dh]).permute(&[0, 2, 1, 3])
        };
        let qh = split(&self.wq.forward(q, tape));
        let kh = split(&self.wk.forward(k, tape));
        let vh = split(&self.wv.forward(v, tape));
        let scores = qh.matmul(&kh.transpose_last_two()).scale(1.0 / (dh as f64).sqrt());
        let attn = scores.softmax_last();
        let mixed = attn.matmul(&vh); // [B, H, T, dh]
        let merged = mixed.permute(&[0, 2, 1, 3]).reshape(&[b, t, d]);
        self.wo.forward(&merged, tape)
    }

    pub fn collect_params(&self, out: &mut Vec<Param>) {
        self.wq.collect_params(out);
        self.wk.collect_params(out);
        self.wv.collect_params(out);
        self.wo.collect_params(out);
    }
}

/// Post-norm transformer block: attention and feed-forward sublayers with
/// residual adds and layer norms. Shape preserving on [B, T, D].
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let hidden = 4 * dim;
        EncoderBlock {
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng),
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            ff1: Linear::new(format!("{name}.ff1"), dim, hidden, rng),
            ff2: Linear::new(format!("{name}.ff2"), hidden, dim, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        let a = self.attn.forward(x, x, x, tape);
        let y = self.ln1.forward(&x.add(&a), tape);
        let f = self.ff2.forward(&self.ff1.forward(&y, tape).relu(), tape);
        self.ln2.forward(&y.add(&f), tape)
    }

    pub fn collect_params(&self, out: &mut Vec<Param>) {
        self.attn.collect_params(out);
        self.ln1.collect_params(out);
        self.ff1.collect_params(out);
        self.ff2.collect_params(out);
        self.ln2.collect_params(out);
    }
}

/// Statistics captured by one `normalize` call; consumed by the matching
/// `denormalize`. The generation counter guards against stale reuse.
pub struct RevinStats {
    pub mean: Tensor, // [B, 1, N]
    pub std: Tensor,  // [B, 1, N]
    generation: u64,
}

pub struct RevinOutput {
    /// Affine-transformed normalized input (feeds the backbone).
    pub normalized: Tensor,
    /// Pre-affine normalized input, parameter-free (feeds the siamese branch).
    pub raw_normalized: Tensor,
    pub stats: RevinStats,
}

/// Reversible per-instance, per-channel normalization over the time axis.
pub struct RevIn {
    pub affine: Option<(Param, Param)>, // (scale gamma, shift beta), each [N]
    pub eps: f64,
    generation: Cell<u64>,
}

impl RevIn {
    pub fn new(name: &str, channels: usize, affine: bool) -> Self {
        RevIn {
            affine: affine.then(|| {
                (
                    Param::ones(format!("{name}.gamma"), vec![channels]),
                    Param::zeros(format!("{name}.beta"), vec![channels]),
                )
            }),
            eps: 1e-10,
            generation: Cell::new(0),
        }
    }

    /// x: [B, L, N]
    pub fn normalize(&self, x: &Tensor, tape: Option<&Tape>) -> RevinOutput {
        assert!(x.rank() == 3, "revin: expected [B, L, N], got {:?}", x.shape);
        let mean = x.mean(Some(1), true);
        let centered = x.sub(&mean);
        let var = centered.mul(&centered).mean(Some(1), true);
        let std = var.add_scalar(self.eps).sqrt_elem();
        let raw = centered.div(&std);
        let normalized = match &self.affine {
            Some((gamma, beta)) => raw.mul(&gamma.tensor(tape)).add(&beta.tensor(tape)),
            None => raw.clone(),
        };
        let gen = self.generation.get() + 1;
        self.generation.set(gen);
        RevinOutput {
            normalized,
            raw_normalized: raw,
            stats: RevinStats { mean, std, generation: gen },
        }
    }

    /// pred: [B, P, N], inverted with the stats of the most recent normalize.
    pub fn denormalize(&self, pred: &Tensor, stats: &RevinStats, tape: Option<&Tape>) -> Tensor {
        assert!(
            stats.generation == self.generation.get(),
            "revin: stale stats (generation {} vs current {})",
            stats.generation,
            self.generation.get()
        );
        let raw = match &self.affine {
            Some((gamma, beta)) => pred
                .sub(&beta.tensor(tape))
                .div(&gamma.tensor(tape).add_scalar(self.eps)),
            None => pred.clone(),
        };
        raw.mul(&stats.std).add(&stats.mean)
    }

    pub fn collect_params(&self, out: &mut Vec<Param>) {
        if let Some((g, b)) = &self.affine {
            out.push(g.clone());
            out.push(b.clone());
        }
    }
}

/// Trend = moving average over time with replicate padding; seasonal is the
/// remainder, so seasonal + trend reconstructs the input exactly.
/// x: [B, L, N], kernel odd -> (seasonal, trend)
pub fn series_decompose(x: &Tensor, kernel: usize) -> (Tensor, Tensor) {
    assert!(x.rank() == 3, "series_decompose: expected [B, L, N], got {:?}", x.shape);
    assert!(kernel % 2 == 1, "series_decompose: kernel must be odd, got {kernel}");
    let trend = x
        .permute(&[0, 2, 1])
        .moving_average_last(kernel)
        .permute(&[0, 2, 1]);
    let seasonal = x.sub(&trend);
    (seasonal, trend)
}

/// Plain Adam with bias correction. Gradients are left untouched; the
/// caller zeroes them between steps.
pub struct Adam {
    params: Vec<Param>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam { params, m, v, step_count: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in self.params.iter().enumerate() {
            let mut inner = p.0 .0.borrow_mut();
            let ParamInner { value, grad, .. } = &mut *inner;
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ExportedParam {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Flat name -> array export (weight visualization / checkpointing).
pub fn export_params(params: &[Param]) -> serde_json::Value {
    let mut map = BTreeMap::new();
    for p in params {
        map.insert(p.name(), ExportedParam { shape: p.shape(), data: p.value() });
    }
    serde_json::to_value(map).expect("parameter export is plain data")
}

pub fn import_params(params: &[Param], exported: &serde_json::Value) -> crate::Result<()> {
    let map: BTreeMap<String, ExportedParam> = serde_json::from_value(exported.clone())
        .map_err(|e| crate::Error::Data(format!("malformed parameter container: {e}")))?;
    for p in params {
        let name = p.name();
        let entry = map
            .get(&name)
            .ok_or_else(|| crate::Error::Data(format!("missing parameter {name}")))?;
        if entry.shape != p.shape() {
            return Err(crate::Error::Data(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                entry.shape,
                p.shape()
            )));
        }
        p.set_value(entry.data.clone());
    }
    Ok(())
}

/// Snapshot of parameter values, used for best-epoch checkpointing.
pub fn snapshot(params: &[Param]) -> Vec<Vec<f64>> {
    params.iter().map(|p| p.value()).collect()
}

pub fn restore(params: &[Param], snap: &[Vec<f64>]) {
    for (p, v) in params.iter().zip(snap) {
        p.set_value(v.clone());
    }
}
