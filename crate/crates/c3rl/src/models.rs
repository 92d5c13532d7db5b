//! The four base forecasters. Each forward exposes the prediction
//! `[B, P, N]`, the backbone feature, and the hook points the siamese
//! construction needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{series_decompose, EncoderBlock, Linear, Param, RevIn};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    DLinear,
    RLinear,
    ITransformerToy,
    PatchTstToy,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dlinear" => Ok(ModelKind::DLinear),
            "rlinear" => Ok(ModelKind::RLinear),
            "itransformer" | "itransformertoy" => Ok(ModelKind::ITransformerToy),
            "patchtst" | "patchtsttoy" => Ok(ModelKind::PatchTstToy),
            other => Err(Error::Capability(format!(
                "unsupported model kind '{other}' (supported: dlinear, rlinear, itransformer, patchtst)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::DLinear => "DLinear",
            ModelKind::RLinear => "RLinear",
            ModelKind::ITransformerToy => "iTransformer",
            ModelKind::PatchTstToy => "PatchTST",
        }
    }

    /// Learning-rate lineage: linear models train faster than transformers.
    pub fn default_lr(&self) -> f64 {
        match self {
            ModelKind::DLinear | ModelKind::RLinear => 1e-3,
            ModelKind::ITransformerToy | ModelKind::PatchTstToy => 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub decomp_kernel: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, lookback: usize, horizon: usize, channels: usize) -> Self {
        ModelConfig {
            kind,
            lookback,
            horizon,
            channels,
            embed_dim: 128,
            layers: 2,
            heads: 8,
            decomp_kernel: 25,
            patch_len: 16,
            patch_stride: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback < 1 {
            return Err(Error::Config("lookback must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.channels < 1 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        match self.kind {
            ModelKind::DLinear => {
                if self.decomp_kernel % 2 == 0 || self.decomp_kernel > self.lookback {
                    return Err(Error::Config(format!(
                        "decomp_kernel must be odd and <= lookback, got {}",
                        self.decomp_kernel
                    )));
                }
            }
            ModelKind::ITransformerToy | ModelKind::PatchTstToy => {
                if self.embed_dim % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "embed_dim {} not divisible by heads {}",
                        self.embed_dim, self.heads
                    )));
                }
                if self.kind == ModelKind::PatchTstToy {
                    if self.patch_len < 1 || self.patch_len > self.lookback || self.patch_stride < 1 {
                        return Err(Error::Config(format!(
                            "patch_len {} / patch_stride {} inconsistent with lookback {}",
                            self.patch_len, self.patch_stride, self.lookback
                        )));
                    }
                }
            }
            ModelKind::RLinear => {}
        }
        Ok(())
    }

    /// PatchTST patch count, n = floor((L - l) / stride) + 1.
    pub fn patch_count(&self) -> usize {
        (self.lookback - self.patch_len) / self.patch_stride + 1
    }
}

/// One base-model forward pass.
pub struct ForwardOut {
    /// X^Pro analog used for inference and the prediction loss, [B, P, N].
    pub prediction: Tensor,
    /// Kind-specific internal feature (see each forward's contract).
    pub feature: Tensor,
    /// Projection-layer output compared against the siamese branch,
    /// [B, P, N]. For RLinear this is the pre-denormalization output;
    /// identical to `prediction` for the other kinds.
    pub align: Tensor,
    /// Input view consumed by the siamese branch, [B, L, N]. For RLinear
    /// this is the parameter-free normalized input.
    pub siamese_input: Tensor,
}

enum Arch {
    DLinear {
        seasonal: Linear,
        trend: Linear,
    },
    RLinear {
        revin: RevIn,
        map: Linear,
    },
    ITransformer {
        embed: Linear,
        blocks: Vec<EncoderBlock>,
        proj: Linear,
    },
    PatchTst {
        embed: Linear,
        pos: Param,
        blocks: Vec<EncoderBlock>,
        head: Linear,
    },
}

pub struct ForecastModel {
    pub config: ModelConfig,
    arch: Arch,
}

/// Initialized model; parameter count is deterministic from the config.
pub fn build_model(config: &ModelConfig, rng: &mut impl Rng) -> Result<ForecastModel> {
    config.validate()?;
    let (l, p, d) = (config.lookback, config.horizon, config.embed_dim);
    let arch = match config.kind {
        ModelKind::DLinear => Arch::DLinear {
            seasonal: Linear::new("dlinear.seasonal", l, p, rng),
            trend: Linear::new("dlinear.trend", l, p, rng),
        },
        ModelKind::RLinear => Arch::RLinear {
            revin: RevIn::new("rlinear.revin", config.channels, true),
            map: Linear::new("rlinear.map", l, p, rng),
        },
        ModelKind::ITransformerToy => Arch::ITransformer {
            embed: Linear::new("itransformer.embed", l, d, rng),
            blocks: (0..config.layers)
                .map(|i| EncoderBlock::new(&format!("itransformer.block{i}"), d, config.heads, rng))
                .collect(),
            proj: Linear::new("itransformer.proj", d, p, rng),
        },
        ModelKind::PatchTstToy => {
            let n = config.patch_count();
            Arch::PatchTst {
                embed: Linear::new("patchtst.embed", config.patch_len, d, rng),
                pos: Param::zeros("patchtst.pos", vec![n, d]),
                blocks: (0..config.layers)
                    .map(|i| EncoderBlock::new(&format!("patchtst.block{i}"), d, config.heads, rng))
                    .collect(),
                head: Linear::new("patchtst.head", n * d, p, rng),
            }
        }
    };
    Ok(ForecastModel { config: config.clone(), arch })
}

impl ForecastModel {
    pub fn parameters(&self) -> Vec<Param> {
        let mut out = vec![];
        match &self.arch {
            Arch::DLinear { seasonal, trend } => {
                seasonal.collect_params(&mut out);
                trend.collect_params(&mut out);
            }
            Arch::RLinear { revin, map } => {
                map.collect_params(&mut out);
                revin.collect_params(&mut out);
            }
            Arch::ITransformer { embed, blocks, proj } => {
                embed.collect_params(&mut out);
                for b in blocks {
                    b.collect_params(&mut out);
                }
                proj.collect_params(&mut out);
            }
            Arch::PatchTst { embed, pos, blocks, head } => {
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

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// x: [B, L, N] -> prediction [B, P, N] plus hook points.
    pub fn forward(&self, x: &Tensor, tape: Option<&Tape>) -> ForwardOut {
        let cfg = &self.config;
        assert!(
            x.rank() == 3 && x.shape[1] == cfg.lookback && x.shape[2] == cfg.channels,
            "model {}: input shape {:?} does not match [B, {}, {}]",
            cfg.kind.label(),
            x.shape,
            cfg.lookback,
            cfg.channels
        );
        match &self.arch {
            Arch::DLinear { seasonal, trend } => {
                let (s, t) = series_decompose(x, cfg.decomp_kernel);
                let s_out = seasonal.forward(&s.permute(&[0, 2, 1]), tape);
                let t_out = trend.forward(&t.permute(&[0, 2, 1]), tape);
                let feature = s_out.add(&t_out); // [B, N, P]
                let prediction = feature.permute(&[0, 2, 1]);
                ForwardOut {
                    align: prediction.clone(),
                    prediction,
                    feature,
                    siamese_input: x.clone(),
                }
            }
            Arch::RLinear { revin, map } => {
                let norm = revin.normalize(x, tape);
                let feature = map.forward(&norm.normalized.permute(&[0, 2, 1]), tape); // [B, N, P]
                let align = feature.permute(&[0, 2, 1]);
                let prediction = revin.denormalize(&align, &norm.stats, tape);
                ForwardOut {
                    prediction,
                    feature,
                    align,
                    siamese_input: norm.raw_normalized,
                }
            }
            Arch::ITransformer { embed, blocks, proj } => {
                let tokens = x.permute(&[0, 2, 1]); // [B, N, L]
                let mut h = embed.forward(&tokens, tape); // [B, N, D]
                for b in blocks {
                    h = b.forward(&h, tape);
                }
                let feature = h; // [B, N, D]
                let prediction = proj.forward(&feature, tape).permute(&[0, 2, 1]);
                ForwardOut {
                    align: prediction.clone(),
                    prediction,
                    feature,
                    siamese_input: x.clone(),
                }
            }
            Arch::PatchTst { embed, pos, blocks, head } => {
                let (b, l, n_ch) = (x.shape[0], cfg.lookback, cfg.channels);
                let n = cfg.patch_count();
                let d = cfg.embed_dim;
                let per_channel = x.permute(&[0, 2, 1]).reshape(&[b * n_ch, l]);
                let patches = per_channel.unfold_last(cfg.patch_len, cfg.patch_stride); // [B*N, n, l]
                let mut h = embed.forward(&patches, tape).add(&pos.tensor(tape));
                for blk in blocks {
                    h = blk.forward(&h, tape);
                }
                let feature = h.reshape(&[b, n_ch, n, d]);
                let flat = h.reshape(&[b * n_ch, n * d]);
                let prediction = head
                    .forward(&flat, tape)
                    .reshape(&[b, n_ch, cfg.horizon])
                    .permute(&[0, 2, 1]);
                ForwardOut {
                    align: prediction.clone(),
                    prediction,
                    feature,
                    siamese_input: x.clone(),
                }
            }
        }
    }
}
