//! Python bindings: base forecasters, the C3RL training unit, the metric
//! helpers, and the config-driven experiment entry point.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use c3rl::c3rl::{build_siamese, HeadConfig, LossWeights, SiameseBundle};
use c3rl::models::{build_model, ForecastModel, ModelConfig, ModelKind};
use c3rl::nn::Adam;
use c3rl::runner;
use c3rl::tensor::{Tape, Tensor};

fn err(e: c3rl::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn batch_tensor(data: Vec<f64>, batch: usize, steps: usize, channels: usize) -> PyResult<Tensor> {
    if data.len() != batch * steps * channels {
        return Err(PyValueError::new_err(format!(
            "expected {} values for shape [{batch}, {steps}, {channels}], got {}",
            batch * steps * channels,
            data.len()
        )));
    }
    Ok(Tensor::new(data, vec![batch, steps, channels]))
}

/// One base forecaster with deterministic seeded initialization.
#[pyclass(unsendable)]
struct Model {
    inner: ForecastModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (kind, lookback, horizon, channels, seed=2025))]
    fn new(kind: &str, lookback: usize, horizon: usize, channels: usize, seed: u64) -> PyResult<Self> {
        let mut cfg = ModelConfig::new(ModelKind::parse(kind).map_err(err)?, lookback, horizon, channels);
        if cfg.decomp_kernel > lookback {
            cfg.decomp_kernel = if lookback % 2 == 1 { lookback } else { lookback - 1 };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Model { inner: build_model(&cfg, &mut rng).map_err(err)? })
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Flat row-major x of shape [batch, lookback, channels] ->
    /// flat prediction of shape [batch, horizon, channels].
    fn predict(&self, x: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
        let cfg = &self.inner.config;
        let xt = batch_tensor(x, batch, cfg.lookback, cfg.channels)?;
        Ok(self.inner.forward(&xt, None).prediction.data.to_vec())
    }
}

/// A backbone plus its siamese branch and joint loss, trainable per batch.
#[pyclass(unsendable)]
struct C3rl {
    bundle: SiameseBundle,
    opt: Adam,
}

#[pymethods]
impl C3rl {
    #[new]
    #[pyo3(signature = (kind, lookback, horizon, channels, lambda_simsia, lambda_pred, seed=2025, lr=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        lookback: usize,
        horizon: usize,
        channels: usize,
        lambda_simsia: f64,
        lambda_pred: f64,
        seed: u64,
        lr: Option<f64>,
    ) -> PyResult<Self> {
        let kind = ModelKind::parse(kind).map_err(err)?;
        let mut cfg = ModelConfig::new(kind, lookback, horizon, channels);
        if cfg.decomp_kernel > lookback {
            cfg.decomp_kernel = if lookback % 2 == 1 { lookback } else { lookback - 1 };
        }
        let weights = LossWeights::new(lambda_simsia, lambda_pred).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = build_model(&cfg, &mut rng).map_err(err)?;
        let bundle = build_siamese(backbone, HeadConfig::default(), weights, &mut rng).map_err(err)?;
        let opt = Adam::new(bundle.all_params(), lr.unwrap_or_else(|| kind.default_lr()));
        Ok(C3rl { bundle, opt })
    }

    /// One optimizer step; returns (l_total, l_simsia, l_pred, collapse_std).
    fn train_batch(&mut self, x: Vec<f64>, y: Vec<f64>, batch: usize) -> PyResult<(f64, f64, f64, f64)> {
        let cfg = &self.bundle.backbone.config;
        let xt = batch_tensor(x, batch, cfg.lookback, cfg.channels)?;
        let yt = batch_tensor(y, batch, cfg.horizon, cfg.channels)?;
        let tape = Tape::new();
        let out = self.bundle.forward_train(&xt, &yt, Some(&tape));
        if !out.report.l_total.is_finite() {
            return Err(PyRuntimeError::new_err("non-finite training loss"));
        }
        tape.backward(&out.l_total);
        self.opt.step();
        self.opt.zero_grad();
        let r = out.report;
        Ok((r.l_total, r.l_simsia, r.l_pred, r.collapse_std))
    }

    /// Inference runs the backbone only.
    fn predict(&self, x: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
        let cfg = &self.bundle.backbone.config;
        let xt = batch_tensor(x, batch, cfg.lookback, cfg.channels)?;
        Ok(self.bundle.forward_infer(&xt).data.to_vec())
    }

    fn parameter_count(&self) -> usize {
        self.bundle.all_params().iter().map(|p| p.numel()).sum()
    }
}

/// Tuned (lambda_simsia, lambda_pred, used_fallback) for a task triple.
#[pyfunction]
fn default_lambdas(kind: &str, dataset: &str, horizon: usize) -> PyResult<(f64, f64, bool)> {
    let kind = ModelKind::parse(kind).map_err(err)?;
    let (w, fallback) = runner::default_lambdas(kind, dataset, horizon);
    Ok((w.lambda_simsia, w.lambda_pred, fallback))
}

#[pyfunction]
fn mse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    if pred.len() != truth.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(c3rl::data::mse(&pred, &truth))
}

#[pyfunction]
fn mae(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    if pred.len() != truth.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(c3rl::data::mae(&pred, &truth))
}

/// Run a full config-driven experiment; returns the results as a JSON string.
#[pyfunction]
fn run_experiment(config_path: PathBuf) -> PyResult<String> {
    let cfg = runner::parse_config(Some(&config_path), &runner::Overrides::default()).map_err(err)?;
    let runs = match cfg.mode {
        runner::Mode::Baseline | runner::Mode::C3rl => vec![runner::run_single(&cfg).map_err(err)?],
        runner::Mode::Paired => {
            let (a, b) = runner::run_paired(&cfg).map_err(err)?;
            vec![a, b]
        }
        runner::Mode::LambdaSweep => {
            let grid = cfg.sweep_grid.clone();
            runner::run_lambda_sweep(&cfg, &grid).map_err(err)?
        }
        runner::Mode::Unweighted => {
            let (a, b) = runner::run_unweighted(&cfg).map_err(err)?;
            vec![a, b]
        }
    };
    if let Some(out) = &cfg.out {
        runner::emit_results(&runs, out).map_err(err)?;
    }
    let results: Vec<_> = runs.iter().map(|r| &r.result).collect();
    serde_json::to_string(&results).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Deterministic toy sine CSV for quick end-to-end exercises.
#[pyfunction]
fn write_toy_sine(path: PathBuf, len: usize, channels: usize) -> PyResult<()> {
    runner::write_toy_sine(&path, len, channels).map_err(err)
}

#[pymodule]
fn c3rl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<C3rl>()?;
    m.add_function(wrap_pyfunction!(default_lambdas, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_sine, m)?)?;
    Ok(())
}
