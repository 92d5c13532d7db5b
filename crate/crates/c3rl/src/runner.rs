//! Experiment orchestration: config parsing, seeded training with early
//! stopping and best-checkpoint restore, paired baseline-vs-C3RL runs,
//! λ sweeps, and artifact emission.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::c3rl::{build_siamese, collapse_metric, HeadConfig, LossWeights, SiameseBundle};
use crate::data::{load_csv, mae, mse, RawSeries, Segment, SplitSpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{build_model, ForecastModel, ModelConfig, ModelKind};
use crate::nn::{export_params, restore, snapshot, Adam, Param};
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_SEED: u64 = 2025;
const DEFAULT_BATCH: usize = 32;
const DEFAULT_MAX_EPOCHS: usize = 30;
const DEFAULT_PATIENCE: usize = 5;
/// Exported prediction windows per run.
pub const EXPORT_WINDOWS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    C3rl,
    Paired,
    LambdaSweep,
    Unweighted,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "c3rl" => Ok(Mode::C3rl),
            "paired" => Ok(Mode::Paired),
            "lambda_sweep" | "sweep" => Ok(Mode::LambdaSweep),
            "unweighted" => Ok(Mode::Unweighted),
            other => Err(Error::Config(format!(
                "mode: unknown value '{other}' (baseline, c3rl, paired, lambda_sweep, unweighted)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::C3rl => "c3rl",
            Mode::Paired => "paired",
            Mode::LambdaSweep => "lambda_sweep",
            Mode::Unweighted => "unweighted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    /// Split protocol; `None` infers from the dataset name (ETTh* hourly,
    /// ETTm* 15-minute, otherwise 0.7/0.1/0.2).
    pub split: Option<SplitSpec>,
    pub kind: ModelKind,
    pub lookback: Option<usize>,
    pub horizon: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub decomp_kernel: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    /// `None` falls back to the tuned table / (0.1, 0.9).
    pub weights: Option<LossWeights>,
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub sweep_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            split: None,
            kind: ModelKind::DLinear,
            lookback: None,
            horizon: 96,
            embed_dim: 128,
            layers: 2,
            heads: 8,
            decomp_kernel: 25,
            patch_len: 16,
            patch_stride: 8,
            weights: None,
            lr: None,
            batch_size: DEFAULT_BATCH,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: DEFAULT_SEED,
            out: None,
            mode: Mode::Paired,
            sweep_grid: vec![0.05, 0.25, 0.5, 0.75, 0.95],
        }
    }
}

/// The cited baselines' official lookbacks: 336 for the linear lineage,
/// 96 for the transformer lineage.
pub fn default_lookback(kind: ModelKind) -> usize {
    match kind {
        ModelKind::DLinear | ModelKind::RLinear => 336,
        ModelKind::ITransformerToy | ModelKind::PatchTstToy => 96,
    }
}

impl ExperimentConfig {
    pub fn lookback(&self) -> usize {
        self.lookback.unwrap_or_else(|| default_lookback(self.kind))
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }

    pub fn dataset_name(&self) -> String {
        self.dataset
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into())
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.split.unwrap_or_else(|| {
            let name = self.dataset_name().to_ascii_lowercase();
            if name.starts_with("etth") {
                SplitSpec::EttHour
            } else if name.starts_with("ettm") {
                SplitSpec::EttMinute
            } else {
                SplitSpec::Ratio(0.7, 0.1, 0.2)
            }
        })
    }

    pub fn model_config(&self, channels: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.kind, self.lookback(), self.horizon, channels);
        m.embed_dim = self.embed_dim;
        m.layers = self.layers;
        m.heads = self.heads;
        m.decomp_kernel = self.decomp_kernel;
        m.patch_len = self.patch_len;
        m.patch_stride = self.patch_stride;
        m
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("lr: must be positive and finite, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs: must be >= 1".into()));
        }
        if self.mode == Mode::LambdaSweep {
            for &g in &self.sweep_grid {
                if !(0.0..=1.0).contains(&g) {
                    return Err(Error::Config(format!(
                        "sweep_grid: λ_simsia {g} outside [0, 1] (λ_pred = 1 − λ_simsia must hold)"
                    )));
                }
            }
        }
        // shape-level checks that do not need the channel count
        self.model_config(1).validate()
    }
}

/// Flag-level overrides; each `Some` wins over the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub model: Option<String>,
    pub horizon: Option<usize>,
    pub lookback: Option<usize>,
    pub lambda_simsia: Option<f64>,
    pub lambda_pred: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn want_int(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .filter(|i| *i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| Error::Config(format!("{key}: expected a non-negative integer, got {v}")))
}

fn want_float(key: &str, v: &toml::Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| Error::Config(format!("{key}: expected a number, got {v}")))
}

fn want_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Config(format!("{key}: expected a string, got {v}")))
}

fn parse_split(key: &str, s: &str) -> Result<SplitSpec> {
    match s {
        "ett_hour" => Ok(SplitSpec::EttHour),
        "ett_minute" => Ok(SplitSpec::EttMinute),
        other => {
            let parts: Vec<f64> = other
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::Config(format!(
                        "{key}: expected 'ett_hour', 'ett_minute', or 'train,val,test' ratios, got '{other}'"
                    ))
                })?;
            if parts.len() != 3 {
                return Err(Error::Config(format!("{key}: expected three ratios, got '{other}'")));
            }
            Ok(SplitSpec::Ratio(parts[0], parts[1], parts[2]))
        }
    }
}

/// Flat key-value TOML; unknown keys rejected; flags override file values.
pub fn parse_config(file: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut lambda_simsia: Option<f64> = None;
    let mut lambda_pred: Option<f64> = None;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (key, v) in &table {
            match key.as_str() {
                "dataset" => cfg.dataset = Some(PathBuf::from(want_str(key, v)?)),
                "split" => cfg.split = Some(parse_split(key, want_str(key, v)?)?),
                "model" => cfg.kind = ModelKind::parse(want_str(key, v)?)?,
                "mode" => cfg.mode = Mode::parse(want_str(key, v)?)?,
                "lookback" => cfg.lookback = Some(want_int(key, v)?),
                "horizon" => cfg.horizon = want_int(key, v)?,
                "embed_dim" => cfg.embed_dim = want_int(key, v)?,
                "layers" => cfg.layers = want_int(key, v)?,
                "heads" => cfg.heads = want_int(key, v)?,
                "decomp_kernel" => cfg.decomp_kernel = want_int(key, v)?,
                "patch_len" => cfg.patch_len = want_int(key, v)?,
                "patch_stride" => cfg.patch_stride = want_int(key, v)?,
                "lambda_simsia" => lambda_simsia = Some(want_float(key, v)?),
                "lambda_pred" => lambda_pred = Some(want_float(key, v)?),
                "lr" => cfg.lr = Some(want_float(key, v)?),
                "batch_size" => cfg.batch_size = want_int(key, v)?,
                "max_epochs" => cfg.max_epochs = want_int(key, v)?,
                "patience" => cfg.patience = want_int(key, v)?,
                "seed" => cfg.seed = want_int(key, v)? as u64,
                "out" => cfg.out = Some(PathBuf::from(want_str(key, v)?)),
                "sweep_grid" => {
                    let arr = v.as_array().ok_or_else(|| {
                        Error::Config(format!("{key}: expected an array of numbers"))
                    })?;
                    cfg.sweep_grid = arr
                        .iter()
                        .map(|e| want_float(key, e))
                        .collect::<Result<Vec<f64>>>()?;
                }
                other => {
                    return Err(Error::Config(format!("unknown config key '{other}'")));
                }
            }
        }
    }
    if let Some(d) = &flags.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(m) = &flags.model {
        cfg.kind = ModelKind::parse(m)?;
    }
    if let Some(h) = flags.horizon {
        cfg.horizon = h;
    }
    if let Some(l) = flags.lookback {
        cfg.lookback = Some(l);
    }
    if let Some(s) = flags.lambda_simsia {
        lambda_simsia = Some(s);
    }
    if let Some(p) = flags.lambda_pred {
        lambda_pred = Some(p);
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(o) = &flags.out {
        cfg.out = Some(o.clone());
    }
    match (lambda_simsia, lambda_pred) {
        (None, None) => {}
        (Some(s), Some(p)) => cfg.weights = Some(LossWeights::new(s, p)?),
        (Some(s), None) => cfg.weights = Some(LossWeights::new(s, 1.0 - s)?),
        (None, Some(p)) => cfg.weights = Some(LossWeights::new(1.0 - p, p)?),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Tuned (λ_simsia, λ_pred) per (model, dataset, horizon); unknown tuples
/// fall back to (0.1, 0.9), flagged in the result metadata.
pub fn default_lambdas(kind: ModelKind, dataset: &str, horizon: usize) -> (LossWeights, bool) {
    use ModelKind::*;
    let d = dataset.to_ascii_lowercase();
    let tuned: Option<f64> = match (kind, d.as_str(), horizon) {
        (DLinear, "etth1", 96) => Some(0.4),
        (DLinear, "etth1", 192) => Some(0.3),
        (DLinear, "etth1", 336) => Some(0.4),
        (DLinear, "etth1", 720) => Some(0.5),
        (DLinear, "etth2", 96 | 192 | 336 | 720) => Some(0.4),
        (DLinear, "ettm1", 96) => Some(0.4),
        (DLinear, "ettm1", 192) => Some(0.2),
        (DLinear, "ettm1", 336 | 720) => Some(0.1),
        (DLinear, "ettm2", 96 | 192) => Some(0.1),
        (DLinear, "ettm2", 336) => Some(0.8),
        (DLinear, "ettm2", 720) => Some(0.4),
        (DLinear, "exchange", 96 | 192 | 336 | 720) => Some(0.1),
        (DLinear, "weather", 96 | 192 | 336 | 720) => Some(0.2),
        (DLinear, "electricity", 96 | 192) => Some(0.2),
        (DLinear, "electricity", 336) => Some(0.4),
        (DLinear, "electricity", 720) => Some(0.2),
        (DLinear, "traffic", 96 | 192 | 336) => Some(0.4),
        (DLinear, "traffic", 720) => Some(0.5),
        (DLinear, "illness", 24 | 36) => Some(0.01),
        (DLinear, "illness", 48 | 60) => Some(0.4),

        (PatchTstToy, "etth1", 96 | 192) => Some(0.05),
        (PatchTstToy, "etth1", 336 | 720) => Some(0.4),
        (PatchTstToy, "etth2", 96 | 192) => Some(0.2),
        (PatchTstToy, "etth2", 336 | 720) => Some(0.4),
        (PatchTstToy, "ettm1", 96 | 192) => Some(0.2),
        (PatchTstToy, "ettm1", 336 | 720) => Some(0.4),
        (PatchTstToy, "ettm2", 96 | 192 | 336 | 720) => Some(0.1),
        (PatchTstToy, "exchange", 96 | 192 | 336 | 720) => Some(0.01),
        (PatchTstToy, "weather", 96 | 192 | 336) => Some(0.01),
        (PatchTstToy, "weather", 720) => Some(0.1),
        (PatchTstToy, "illness", 24) => Some(0.01),
        (PatchTstToy, "illness", 36) => Some(0.5),
        (PatchTstToy, "illness", 48) => Some(0.7),
        (PatchTstToy, "illness", 60) => Some(0.4),

        (ITransformerToy, "etth1", 96) => Some(0.1),
        (ITransformerToy, "etth1", 192) => Some(0.3),
        (ITransformerToy, "etth1", 336) => Some(0.4),
        (ITransformerToy, "etth1", 720) => Some(0.5),
        (ITransformerToy, "etth2", 96 | 192 | 336) => Some(0.2),
        (ITransformerToy, "etth2", 720) => Some(0.1),
        (ITransformerToy, "ettm1", 96 | 192) => Some(0.2),
        (ITransformerToy, "ettm1", 336 | 720) => Some(0.1),
        (ITransformerToy, "ettm2", 96) => Some(0.3),
        (ITransformerToy, "ettm2", 192) => Some(0.2),
        (ITransformerToy, "ettm2", 336 | 720) => Some(0.1),
        (ITransformerToy, "exchange", 96 | 192 | 336 | 720) => Some(0.01),
        (ITransformerToy, "weather", 96 | 192) => Some(0.2),
        (ITransformerToy, "weather", 336) => Some(0.1),
        (ITransformerToy, "weather", 720) => Some(0.05),
        (ITransformerToy, "electricity", 96 | 192 | 336) => Some(0.2),
        (ITransformerToy, "electricity", 720) => Some(0.1),
        (ITransformerToy, "traffic", 96 | 192) => Some(0.05),
        (ITransformerToy, "traffic", 336) => Some(0.1),
        (ITransformerToy, "traffic", 720) => Some(0.05),
        (ITransformerToy, "illness", 24 | 36 | 60) => Some(0.1),
        (ITransformerToy, "illness", 48) => Some(0.01),

        (RLinear, "etth1", 96) => Some(0.05),
        (RLinear, "etth1", 192) => Some(0.01),
        (RLinear, "etth1", 336) => Some(0.1),
        (RLinear, "etth1", 720) => Some(0.2),
        (RLinear, "etth2", 96 | 192 | 336 | 720) => Some(0.2),
        (RLinear, "ettm1", 96 | 192 | 336 | 720) => Some(0.1),
        (RLinear, "ettm2", 96 | 336 | 720) => Some(0.1),
        (RLinear, "ettm2", 192) => Some(0.01),
        (RLinear, "exchange", 96 | 192 | 336) => Some(0.01),
        (RLinear, "exchange", 720) => Some(0.1),
        (RLinear, "weather", 96 | 192) => Some(0.01),
        (RLinear, "weather", 336) => Some(0.2),
        (RLinear, "weather", 720) => Some(0.1),
        (RLinear, "electricity", 96 | 192 | 336 | 720) => Some(0.1),
        (RLinear, "traffic", 96 | 192 | 336 | 720) => Some(0.1),
        (RLinear, "illness", 24 | 36 | 48 | 60) => Some(0.1),

        _ => None,
    };
    match tuned {
        Some(s) => (LossWeights { lambda_simsia: s, lambda_pred: 1.0 - s }, false),
        None => (LossWeights { lambda_simsia: 0.1, lambda_pred: 0.9 }, true),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curves {
    pub train_l_total: Vec<f64>,
    pub train_l_simsia: Vec<f64>,
    pub train_l_pred: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub collapse_std: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: String,
    pub model: String,
    pub dataset: String,
    pub horizon: usize,
    pub lookback: usize,
    pub seed: u64,
    pub weights: Option<LossWeights>,
    pub test_mse: f64,
    pub test_mae: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_collapse_std: f64,
    pub curves: Curves,
    /// Documented defaults that were assumed rather than configured:
    /// λ fallback, assumed lookback, head widths.
    pub assumptions: Vec<String>,
}

/// One prediction-vs-truth test window, channel-major rows of length P.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionWindow {
    pub window: usize,
    pub prediction: Vec<f64>, // [P * N], time-major
    pub truth: Vec<f64>,
}

/// Everything one run produces: metrics plus the exportable artifacts.
pub struct RunArtifacts {
    pub result: RunResult,
    pub windows: Vec<PredictionWindow>,
    pub weights_export: serde_json::Value,
}

enum Arm {
    Baseline(ForecastModel),
    C3rl(SiameseBundle),
}

impl Arm {
    fn params(&self) -> Vec<Param> {
        match self {
            Arm::Baseline(m) => m.parameters(),
            Arm::C3rl(b) => b.all_params(),
        }
    }

    fn backbone_export(&self) -> serde_json::Value {
        match self {
            Arm::Baseline(m) => export_params(&m.parameters()),
            Arm::C3rl(b) => export_params(&b.backbone_params()),
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Arm::Baseline(m) => m.forward(x, None).prediction,
            Arm::C3rl(b) => b.forward_infer(x),
        }
    }

    /// (loss tensor, l_simsia, l_pred, collapse_std)
    fn train_step(&self, x: &Tensor, y: &Tensor, tape: &Tape) -> (Tensor, f64, f64, f64) {
        match self {
            Arm::Baseline(m) => {
                let out = m.forward(x, Some(tape));
                let l_pred = crate::c3rl::prediction_loss(&out.prediction, y);
                let b = out.align.shape[0];
                let collapse = if b >= 2 {
                    collapse_metric(&out.align.detach().reshape(&[b, out.align.numel() / b]))
                } else {
                    f64::NAN
                };
                let lp = l_pred.item();
                (l_pred, 0.0, lp, collapse)
            }
            Arm::C3rl(bundle) => {
                let out = bundle.forward_train(x, y, Some(tape));
                (
                    out.l_total,
                    out.report.l_simsia,
                    out.report.l_pred,
                    out.report.collapse_std,
                )
            }
        }
    }
}

/// Derived per-purpose generators: backbone init must not shift the batch
/// shuffle stream when the siamese branch adds parameters.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let shuffle = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    (init, shuffle)
}

/// One seeded training run of one arm. `weights: None` trains the bare
/// baseline; `Some` trains the siamese bundle with those loss weights.
pub fn run_arm(
    cfg: &ExperimentConfig,
    series: &RawSeries,
    weights: Option<LossWeights>,
    extra_assumptions: &[String],
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let ds = WindowedDataset::new(series, cfg.split_spec(), cfg.lookback(), cfg.horizon)?;
    let model_cfg = cfg.model_config(series.channels());
    let (mut init_rng, mut shuffle_rng) = streams(cfg.seed);
    let backbone = build_model(&model_cfg, &mut init_rng)?;
    let arm = match weights {
        None => Arm::Baseline(backbone),
        Some(w) => Arm::C3rl(build_siamese(backbone, HeadConfig::default(), w, &mut init_rng)?),
    };
    let params = arm.params();
    let mut opt = Adam::new(params.clone(), cfg.lr());
    let mut curves = Curves {
        train_l_total: Vec::new(),
        train_l_simsia: Vec::new(),
        train_l_pred: Vec::new(),
        val_loss: Vec::new(),
        collapse_std: Vec::new(),
    };
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = snapshot(&params);
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let batches = ds.batches(Segment::Train, cfg.batch_size, Some(&mut shuffle_rng))?;
        let (mut s_total, mut s_simsia, mut s_pred, mut s_collapse) = (0.0, 0.0, 0.0, 0.0);
        let mut n_collapse = 0usize;
        for (bi, (x, y)) in batches.iter().enumerate() {
            let tape = Tape::new();
            let (loss, l_simsia, l_pred, collapse) = arm.train_step(x, y, &tape);
            let l_total = loss.item();
            if !l_total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi}"
                )));
            }
            tape.backward(&loss);
            opt.step();
            opt.zero_grad();
            s_total += l_total;
            s_simsia += l_simsia;
            s_pred += l_pred;
            if collapse.is_finite() {
                s_collapse += collapse;
                n_collapse += 1;
            }
        }
        let nb = batches.len() as f64;
        curves.train_l_total.push(s_total / nb);
        curves.train_l_simsia.push(s_simsia / nb);
        curves.train_l_pred.push(s_pred / nb);
        curves
            .collapse_std
            .push(if n_collapse > 0 { s_collapse / n_collapse as f64 } else { f64::NAN });

        let val = eval_metrics(&arm, &ds, Segment::Val, cfg.batch_size)?.0;
        if !val.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        curves.val_loss.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_snap = snapshot(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    restore(&params, &best_snap);

    let (test_mse, test_mae) = eval_metrics(&arm, &ds, Segment::Test, cfg.batch_size)?;
    let final_collapse_std = final_collapse(&arm, &ds, cfg.batch_size)?;
    let windows = export_windows(&arm, &ds)?;

    let mut assumptions: Vec<String> = extra_assumptions.to_vec();
    if cfg.lookback.is_none() {
        assumptions.push(format!("lookback {} assumed from the cited baseline protocol", cfg.lookback()));
    }
    assumptions.push("prediction-head bottleneck width N/4".into());

    let result = RunResult {
        arm: if weights.is_some() { "c3rl" } else { "baseline" }.into(),
        model: cfg.kind.label().into(),
        dataset: cfg.dataset_name(),
        horizon: cfg.horizon,
        lookback: cfg.lookback(),
        seed: cfg.seed,
        weights,
        test_mse,
        test_mae,
        best_val_loss: best_val,
        best_epoch,
        epochs_run,
        final_collapse_std,
        curves,
        assumptions,
    };
    Ok(RunArtifacts { result, windows, weights_export: arm.backbone_export() })
}

fn eval_metrics(
    arm: &Arm,
    ds: &WindowedDataset,
    segment: Segment,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (x, y) in ds.batches(segment, batch_size, None::<&mut ChaCha8Rng>)? {
        let p = arm.infer(&x);
        preds.extend_from_slice(&p.data);
        truths.extend_from_slice(&y.data);
    }
    Ok((mse(&preds, &truths), mae(&preds, &truths)))
}

/// Collapse diagnostic of the restored model on the first test batch.
fn final_collapse(arm: &Arm, ds: &WindowedDataset, batch_size: usize) -> Result<f64> {
    let batches = ds.batches(Segment::Test, batch_size, None::<&mut ChaCha8Rng>)?;
    let (x, _) = &batches[0];
    let pred = arm.infer(x);
    let b = pred.shape[0];
    if b < 2 {
        return Ok(f64::NAN);
    }
    Ok(collapse_metric(&pred.reshape(&[b, pred.numel() / b])))
}

fn export_windows(arm: &Arm, ds: &WindowedDataset) -> Result<Vec<PredictionWindow>> {
    let count = ds.window_count(Segment::Test).min(EXPORT_WINDOWS);
    let n = ds.channels();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let (x, y) = ds.window(Segment::Test, w);
        let xt = Tensor::new(x, vec![1, ds.lookback, n]);
        let pred = arm.infer(&xt);
        out.push(PredictionWindow { window: w, prediction: pred.data.to_vec(), truth: y });
    }
    Ok(out)
}

fn load_series(cfg: &ExperimentConfig) -> Result<RawSeries> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("dataset: required (file key or --dataset)".into()))?;
    load_csv(path)
}

/// Resolve loss weights: configured value, else the tuned table.
fn resolve_weights(cfg: &ExperimentConfig) -> (LossWeights, Vec<String>) {
    match cfg.weights {
        Some(w) => (w, Vec::new()),
        None => {
            let (w, fallback) = default_lambdas(cfg.kind, &cfg.dataset_name(), cfg.horizon);
            let mut notes = Vec::new();
            if fallback {
                notes.push(format!(
                    "λ fallback (0.1, 0.9): no tuned entry for ({}, {}, {})",
                    cfg.kind.label(),
                    cfg.dataset_name(),
                    cfg.horizon
                ));
            }
            (w, notes)
        }
    }
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let series = load_series(cfg)?;
    match cfg.mode {
        Mode::Baseline => run_arm(cfg, &series, None, &[]),
        _ => {
            let (w, notes) = resolve_weights(cfg);
            run_arm(cfg, &series, Some(w), &notes)
        }
    }
}

/// Baseline and C3RL with the same seed and data; the caller gets both
/// results plus the flat comparison row.
pub fn run_paired(cfg: &ExperimentConfig) -> Result<(RunArtifacts, RunArtifacts)> {
    let series = load_series(cfg)?;
    let baseline = run_arm(cfg, &series, None, &[])?;
    let (w, notes) = resolve_weights(cfg);
    let c3rl = run_arm(cfg, &series, Some(w), &notes)?;
    Ok((baseline, c3rl))
}

/// One C3RL run per grid point with λ_pred = 1 − λ_simsia, shared seed.
pub fn run_lambda_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<RunArtifacts>> {
    let series = load_series(cfg)?;
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("sweep point λ_simsia {lambda} outside [0, 1]")));
        }
        let w = LossWeights::new(lambda, 1.0 - lambda)?;
        out.push(run_arm(cfg, &series, Some(w), &[])?);
    }
    Ok(out)
}

/// Tuned weights vs the unweighted (1, 1) setting, shared seed.
pub fn run_unweighted(cfg: &ExperimentConfig) -> Result<(RunArtifacts, RunArtifacts)> {
    let series = load_series(cfg)?;
    let (tuned_w, notes) = resolve_weights(cfg);
    let tuned = run_arm(cfg, &series, Some(tuned_w), &notes)?;
    let unweighted = run_arm(
        cfg,
        &series,
        Some(LossWeights { lambda_simsia: 1.0, lambda_pred: 1.0 }),
        &[],
    )?;
    Ok((tuned, unweighted))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// results.json + comparison.csv + per-run curves, prediction windows, and
/// backbone weight exports.
pub fn emit_results(runs: &[RunArtifacts], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    let results: Vec<&RunResult> = runs.iter().map(|r| &r.result).collect();
    let json = serde_json::to_string_pretty(&results).expect("results are plain data");
    write_file(&out.join("results.json"), &json)?;

    let mut table = String::from(
        "model,dataset,horizon,arm,lambda_simsia,lambda_pred,test_mse,test_mae,best_val_loss,best_epoch\n",
    );
    for r in &results {
        let (ls, lp) = r
            .weights
            .map(|w| (w.lambda_simsia.to_string(), w.lambda_pred.to_string()))
            .unwrap_or_else(|| ("".into(), "".into()));
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model, r.dataset, r.horizon, r.arm, ls, lp, r.test_mse, r.test_mae, r.best_val_loss, r.best_epoch
        )
        .unwrap();
    }
    write_file(&out.join("comparison.csv"), &table)?;

    for (i, run) in runs.iter().enumerate() {
        let tag = format!("{}_{}", i, run.result.arm);
        let c = &run.result.curves;
        let mut curves = String::from("epoch,train_l_total,train_l_simsia,train_l_pred,val_loss,collapse_std\n");
        for e in 0..c.train_l_total.len() {
            writeln!(
                curves,
                "{},{},{},{},{},{}",
                e + 1,
                c.train_l_total[e],
                c.train_l_simsia[e],
                c.train_l_pred[e],
                c.val_loss[e],
                c.collapse_std[e]
            )
            .unwrap();
        }
        write_file(&out.join(format!("curves_{tag}.csv")), &curves)?;

        let mut pw = String::from("window,step,channel,prediction,truth\n");
        for w in &run.windows {
            let p = run.result.horizon;
            let n = w.prediction.len() / p;
            for t in 0..p {
                for ch in 0..n {
                    writeln!(
                        pw,
                        "{},{},{},{},{}",
                        w.window,
                        t,
                        ch,
                        w.prediction[t * n + ch],
                        w.truth[t * n + ch]
                    )
                    .unwrap();
                }
            }
        }
        write_file(&out.join(format!("predictions_{tag}.csv")), &pw)?;

        let wjson = serde_json::to_string(&run.weights_export).expect("weights are plain data");
        write_file(&out.join(format!("weights_{tag}.json")), &wjson)?;
    }
    Ok(())
}

/// Sweep summary: one row per grid point.
pub fn emit_sweep_summary(runs: &[RunArtifacts], out: &Path) -> Result<()> {
    let mut s = String::from("lambda_simsia,lambda_pred,test_mse,test_mae\n");
    for r in runs {
        let w = r.result.weights.expect("sweep runs carry weights");
        writeln!(s, "{},{},{},{}", w.lambda_simsia, w.lambda_pred, r.result.test_mse, r.result.test_mae)
            .unwrap();
    }
    write_file(&out.join("sweep_summary.csv"), &s)
}

/// Deterministic multi-channel sine mixture used by the toy experiments.
pub fn write_toy_sine(path: &Path, len: usize, channels: usize) -> Result<()> {
    let mut s = String::from("date");
    for c in 0..channels {
        write!(s, ",ch{c}").unwrap();
    }
    s.push('\n');
    for t in 0..len {
        let day = t / 24;
        let hour = t % 24;
        write!(s, "2020-{:02}-{:02} {:02}:00:00", 1 + day / 28, 1 + day % 28, hour).unwrap();
        for c in 0..channels {
            let phase = c as f64 * 0.7;
            let v = (t as f64 * 0.23 + phase).sin()
                + 0.5 * (t as f64 * 0.071 + 1.3 * phase).sin()
                + 0.1 * ((t * 2654435761 + c * 40503) % 1000) as f64 / 1000.0;
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    write_file(path, &s)
}
