//! Siamese counterpart construction, the symmetrized stop-gradient
//! contrastive loss, and the weighted joint objective.
//!
//! The siamese branch mirrors the backbone's temporal modules with the input
//! feature dimension swapped (L-sized maps become N-sized), a siamese
//! projection brings its output to the backbone prediction shape [B, P, N],
//! and a shared bottleneck prediction head transforms one branch's output to
//! match the other's view before cosine comparison. Inference touches only
//! the backbone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ForecastModel, ModelKind};
use crate::nn::{series_decompose, EncoderBlock, Linear, Param};
use crate::tensor::{Tape, Tensor};

const COSINE_EPS: f64 = 1e-12;

/// Weights of the contrastive and prediction losses in the joint objective.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_simsia: f64,
    pub lambda_pred: f64,
}

impl LossWeights {
    pub fn new(lambda_simsia: f64, lambda_pred: f64) -> Result<Self> {
        if lambda_simsia < 0.0 || lambda_pred < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got ({lambda_simsia}, {lambda_pred})"
            )));
        }
        if lambda_simsia == 0.0 && lambda_pred == 0.0 {
            return Err(Error::Config("loss weights must not both be zero".into()));
        }
        Ok(LossWeights { lambda_simsia, lambda_pred })
    }
}

/// Head sizing knobs. Defaults: D_sia = L for the linear backbones, one
/// shared prediction head, bottleneck ratio 4 along the channel axis.
#[derive(Clone, Copy, Debug)]
pub struct HeadConfig {
    pub d_sia: Option<usize>,
    pub shared_prediction_head: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { d_sia: None, shared_prediction_head: true }
    }
}

/// Bottleneck map on [B, P, N] along the channel axis: N -> max(1, N/4) -> N
/// with a rectifier between.
pub struct PredictionHead {
    pub reduce: Linear,
    pub expand: Linear,
}

impl PredictionHead {
    fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let hidden = (channels / 4).max(1);
        PredictionHead {
            reduce: Linear::new(format!("{name}.reduce"), channels, hidden, rng),
            expand: Linear::new(format!("{name}.expand"), hidden, channels, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        self.expand.forward(&self.reduce.forward(x, tape).relu(), tape)
    }

    fn collect_params(&self, out: &mut Vec<Param>) {
        self.reduce.collect_params(out);
        self.expand.collect_params(out);
    }
}

/// Two stacked linears mapping the siamese feature [B, L, D] to [B, P, N]:
/// first over the token axis (L -> P), then over the feature axis (D -> N).
struct SiameseProjection {
    time: Linear,
    feat: Linear,
}

impl SiameseProjection {
    fn new(name: &str, lookback: usize, horizon: usize, d: usize, channels: usize, rng: &mut impl Rng) -> Self {
        SiameseProjection {
            time: Linear::new(format!("{name}.time"), lookback, horizon, rng),
            feat: Linear::new(format!("{name}.feat"), d, channels, rng),
        }
    }

    fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        let t = self.time.forward(&x.permute(&[0, 2, 1]), tape); // [B, D, P]
        self.feat.forward(&t.permute(&[0, 2, 1]), tape) // [B, P, N]
    }

    fn collect_params(&self, out: &mut Vec<Param>) {
        self.time.collect_params(out);
        self.feat.collect_params(out);
    }
}

enum SiameseArch {
    ITransformer {
        embed: Linear, // N -> D
        blocks: Vec<EncoderBlock>,
        projection: SiameseProjection,
    },
    DLinear {
        seasonal: Linear, // N -> D_sia
        trend: Linear,
        projection: SiameseProjection,
    },
    RLinear {
        map: Linear, // N -> D_sia
        projection: SiameseProjection,
    },
    PatchTst {
        embed: Linear, // n -> D
        pos: Param,    // [l, D]
        blocks: Vec<EncoderBlock>,
        head: Linear, // l*D -> P
    },
}

/// Backbone f + siamese encoder g + siamese projection + prediction head +
/// loss weights: one trainable C3RL unit.
pub struct SiameseBundle {
    pub backbone: ForecastModel,
    siamese: SiameseArch,
    pub head: PredictionHead,
    /// Second head used only when `shared_prediction_head` is off.
    head_sia: Option<PredictionHead>,
    pub weights: LossWeights,
    /// Test hook: disables the stop-gradient, reproducing the collapse the
    /// stop-grad prevents.
    pub disable_stop_grad: bool,
}

/// Mirrors the backbone's temporal modules with swapped input dimension.
pub fn build_siamese(
    base: ForecastModel,
    head_config: HeadConfig,
    weights: LossWeights,
    rng: &mut impl Rng,
) -> Result<SiameseBundle> {
    let cfg = base.config.clone();
    let (l, p, n_ch, d) = (cfg.lookback, cfg.horizon, cfg.channels, cfg.embed_dim);
    let d_sia = head_config.d_sia.unwrap_or(l);
    let siamese = match cfg.kind {
        ModelKind::ITransformerToy => SiameseArch::ITransformer {
            embed: Linear::new("siamese.embed", n_ch, d, rng),
            blocks: (0..cfg.layers)
                .map(|i| EncoderBlock::new(&format!("siamese.block{i}"), d, cfg.heads, rng))
                .collect(),
            projection: SiameseProjection::new("siamese.projection", l, p, d, n_ch, rng),
        },
        ModelKind::DLinear => SiameseArch::DLinear {
            seasonal: Linear::new("siamese.seasonal", n_ch, d_sia, rng),
            trend: Linear::new("siamese.trend", n_ch, d_sia, rng),
            projection: SiameseProjection::new("siamese.projection", l, p, d_sia, n_ch, rng),
        },
        ModelKind::RLinear => SiameseArch::RLinear {
            map: Linear::new("siamese.map", n_ch, d_sia, rng),
            projection: SiameseProjection::new("siamese.projection", l, p, d_sia, n_ch, rng),
        },
        ModelKind::PatchTstToy => {
            let n = cfg.patch_count();
            SiameseArch::PatchTst {
                embed: Linear::new("siamese.embed", n, d, rng),
                pos: Param::zeros("siamese.pos", vec![cfg.patch_len, d]),
                blocks: (0..cfg.layers)
                    .map(|i| EncoderBlock::new(&format!("siamese.block{i}"), d, cfg.heads, rng))
                    .collect(),
                head: Linear::new("siamese.head", cfg.patch_len * d, p, rng),
            }
        }
    };
    let head = PredictionHead::new("head", n_ch, rng);
    let head_sia = (!head_config.shared_prediction_head)
        .then(|| PredictionHead::new("head_sia", n_ch, rng));
    Ok(SiameseBundle { backbone: base, siamese, head, head_sia, weights, disable_stop_grad: false })
}

impl SiameseBundle {
    /// Siamese branch output [B, P, N] from the branch input view [B, L, N].
    fn siamese_forward(&self, x: &Tensor, tape: Option<&Tape>) -> Tensor {
        let cfg = &self.backbone.config;
        match &self.siamese {
            SiameseArch::ITransformer { embed, blocks, projection } => {
                // time steps as tokens: [B, L, N] -> [B, L, D]
                let mut h = embed.forward(x, tape);
                for b in blocks {
                    h = b.forward(&h, tape);
                }
                projection.forward(&h, tape)
            }
            SiameseArch::DLinear { seasonal, trend, projection } => {
                let (s, t) = series_decompose(x, cfg.decomp_kernel);
                let h = seasonal.forward(&s, tape).add(&trend.forward(&t, tape)); // [B, L, D_sia]
                projection.forward(&h, tape)
            }
            SiameseArch::RLinear { map, projection } => {
                let h = map.forward(x, tape); // [B, L, D_sia]
                projection.forward(&h, tape)
            }
            SiameseArch::PatchTst { embed, pos, blocks, head } => {
                let (b, l, n_ch) = (x.shape[0], cfg.lookback, cfg.channels);
                let d = cfg.embed_dim;
                let per_channel = x.permute(&[0, 2, 1]).reshape(&[b * n_ch, l]);
                let patches = per_channel
                    .unfold_last(cfg.patch_len, cfg.patch_stride) // [B*N, n, l]
                    .transpose_last_two(); // [B*N, l, n]
                let mut h = embed.forward(&patches, tape).add(&pos.tensor(tape)); // [B*N, l, D]
                for blk in blocks {
                    h = blk.forward(&h, tape);
                }
                let flat = h.reshape(&[b * n_ch, cfg.patch_len * d]);
                head.forward(&flat, tape)
                    .reshape(&[b, n_ch, cfg.horizon])
                    .permute(&[0, 2, 1])
            }
        }
    }

    pub fn backbone_params(&self) -> Vec<Param> {
        self.backbone.parameters()
    }

    pub fn siamese_params(&self) -> Vec<Param> {
        let mut out = vec![];
        match &self.siamese {
            SiameseArch::ITransformer { embed, blocks, projection } => {
                embed.collect_params(&mut out);
                for b in blocks {
                    b.collect_params(&mut out);
                }
                projection.collect_params(&mut out);
            }
            SiameseArch::DLinear { seasonal, trend, projection } => {
                seasonal.collect_params(&mut out);
                trend.collect_params(&mut out);
                projection.collect_params(&mut out);
            }
            SiameseArch::RLinear { map, projection } => {
                map.collect_params(&mut out);
                projection.collect_params(&mut out);
            }
            SiameseArch::PatchTst { embed, pos, blocks, head } => {
                embed.collect_params(&mut out);
                out.push(pos.clone());
                for b in blocks {
                    b.collect_params(&mut out);
                }
                head.collect_params(&mut out);
            }
        }
        out
    }

    pub fn head_params(&self) -> Vec<Param> {
        let mut out = vec![];
        self.head.collect_params(&mut out);
        if let Some(h) = &self.head_sia {
            h.collect_params(&mut out);
        }
        out
    }

    /// Backbone first, then siamese, then heads: the order the trainer
    /// consumes and the (0,1)-weights equivalence relies on.
    pub fn all_params(&self) -> Vec<Param> {
        let mut out = self.backbone_params();
        out.extend(self.siamese_params());
        out.extend(self.head_params());
        out
    }

    fn head_for_siamese(&self) -> &PredictionHead {
        self.head_sia.as_ref().unwrap_or(&self.head)
    }

    /// Both symmetrization terms of the contrastive loss, separately.
    /// Term 1 trains f and the head; term 2 trains g and the head.
    pub fn simsiam_terms(&self, x: &Tensor, tape: Option<&Tape>) -> SimsiamTerms {
        let out = self.backbone.forward(x, tape);
        let s_pro = self.siamese_forward(&out.siamese_input, tape);
        let pre = self.head.forward(&out.align, tape);
        let sia_pre = self.head_for_siamese().forward(&s_pro, tape);
        let stop = |t: &Tensor| if self.disable_stop_grad { t.clone() } else { t.detach() };
        let term1 = neg_cosine(&pre, &stop(&s_pro));
        let term2 = neg_cosine(&stop(&out.align), &sia_pre);
        SimsiamTerms { term1, term2, backbone_out: out, siamese_out: s_pro }
    }

    /// Full training forward: losses, collapse diagnostic, tape ready for
    /// backward.
    pub fn forward_train(&self, x: &Tensor, y: &Tensor, tape: Option<&Tape>) -> TrainOut {
        let terms = self.simsiam_terms(x, tape);
        let l_simsia = terms.term1.scale(0.5).add(&terms.term2.scale(0.5));
        let l_pred = prediction_loss(&terms.backbone_out.prediction, y);
        let l_total = total_loss(&l_simsia, &l_pred, self.weights);
        let b = terms.backbone_out.align.shape[0];
        let flat = terms
            .backbone_out
            .align
            .detach()
            .reshape(&[b, terms.backbone_out.align.numel() / b]);
        let collapse_std = if b >= 2 { collapse_metric(&flat) } else { f64::NAN };
        let report = LossReport {
            l_simsia: l_simsia.item(),
            l_pred: l_pred.item(),
            l_total: l_total.item(),
            collapse_std,
        };
        TrainOut { l_total, report, prediction: terms.backbone_out.prediction }
    }

    /// Inference evaluates only the backbone: bit-identical to the bare base
    /// model given identical weights.
    pub fn forward_infer(&self, x: &Tensor) -> Tensor {
        self.backbone.forward(x, None).prediction
    }
}

pub struct SimsiamTerms {
    pub term1: Tensor,
    pub term2: Tensor,
    pub backbone_out: crate::models::ForwardOut,
    pub siamese_out: Tensor,
}

pub struct TrainOut {
    pub l_total: Tensor,
    pub report: LossReport,
    pub prediction: Tensor,
}

/// Metrics of one training forward. `l_total` always equals the affine
/// combination of the parts.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub l_simsia: f64,
    pub l_pred: f64,
    pub l_total: f64,
    pub collapse_std: f64,
}

/// Mean over the batch of the negative cosine similarity between per-sample
/// flattened vectors. Result in [-1, 1].
pub fn neg_cosine(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(
        a.shape == b.shape,
        "neg_cosine: shapes {:?} and {:?} differ",
        a.shape,
        b.shape
    );
    let batch = a.shape[0];
    let per = a.numel() / batch;
    let an = a.reshape(&[batch, per]).l2_normalize_last(COSINE_EPS);
    let bn = b.reshape(&[batch, per]).l2_normalize_last(COSINE_EPS);
    an.mul(&bn).sum(Some(1), false).mean(None, false).neg()
}

/// Mean squared error between prediction and target.
pub fn prediction_loss(pred: &Tensor, target: &Tensor) -> Tensor {
    assert!(
        pred.shape == target.shape,
        "prediction_loss: shapes {:?} and {:?} differ",
        pred.shape,
        target.shape
    );
    let diff = pred.sub(target);
    diff.mul(&diff).mean(None, false)
}

/// `lambda_simsia * l_simsia + lambda_pred * l_pred`.
pub fn total_loss(l_simsia: &Tensor, l_pred: &Tensor, weights: LossWeights) -> Tensor {
    l_simsia
        .scale(weights.lambda_simsia)
        .add(&l_pred.scale(weights.lambda_pred))
}

/// Mean over dimensions of the per-dimension standard deviation of the
/// L2-normalized representations: ~1/sqrt(dim) when healthy, ~0 collapsed.
pub fn collapse_metric(representations: &Tensor) -> f64 {
    assert!(
        representations.rank() == 2 && representations.shape[0] >= 2,
        "collapse_metric: need [B >= 2, dim], got {:?}",
        representations.shape
    );
    let (b, dim) = (representations.shape[0], representations.shape[1]);
    let mut normed = vec![0.0; b * dim];
    for r in 0..b {
        let row = &representations.data[r * dim..(r + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(COSINE_EPS);
        for i in 0..dim {
            normed[r * dim + i] = row[i] / norm;
        }
    }
    let mut acc = 0.0;
    for i in 0..dim {
        let mean: f64 = (0..b).map(|r| normed[r * dim + i]).sum::<f64>() / b as f64;
        let var: f64 = (0..b)
            .map(|r| {
                let d = normed[r * dim + i] - mean;
                d * d
            })
            .sum::<f64>()
            / b as f64;
        acc += var.sqrt();
    }
    acc / dim as f64
}
