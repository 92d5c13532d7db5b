//! Acceptance gate. One test per criterion; each prints a single
//! pass/fail/skip line (visible with `--nocapture`).
//!
//! Criteria 7 and 10 need the ETT benchmark CSVs, which are not bundled.
//! Drop `ETTh1.csv` and `ETTh2.csv` into `data/` at the workspace root to
//! enable them; otherwise they report SKIP.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use c3rl::c3rl::{
    build_siamese, collapse_metric, neg_cosine, prediction_loss, total_loss, HeadConfig,
    LossWeights,
};
use c3rl::check::finite_diff_max_rel_err;
use c3rl::data::{
    apply_scaler, fit_scaler, load_csv, mae, mse, split, Segment, SplitSpec, WindowedDataset,
};
use c3rl::models::{build_model, ModelConfig, ModelKind};
use c3rl::nn::Adam;
use c3rl::runner::{
    emit_sweep_summary, run_arm, run_lambda_sweep, write_toy_sine, ExperimentConfig, Mode,
};
use c3rl::tensor::{Tape, Tensor};

const KINDS: [ModelKind; 4] = [
    ModelKind::DLinear,
    ModelKind::RLinear,
    ModelKind::ITransformerToy,
    ModelKind::PatchTstToy,
];

fn toy_cfg(kind: ModelKind) -> ModelConfig {
    let mut c = ModelConfig::new(kind, 8, 4, 3);
    c.embed_dim = 4;
    c.layers = 1;
    c.heads = 2;
    c.decomp_kernel = 3;
    c.patch_len = 4;
    c.patch_stride = 2;
    c
}

fn runif(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random values bounded away from zero (for kinked / singular ops).
fn runif_away(rng: &mut impl Rng, n: usize, margin: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.gen_range(margin..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

const FD_TOL: f64 = 1e-4;

fn check20(
    name: &str,
    rng: &mut ChaCha8Rng,
    mut gen: impl FnMut(&mut ChaCha8Rng) -> Vec<(Vec<f64>, Vec<usize>)>,
    f: impl Fn(&Tape, &[Tensor], &mut ChaCha8Rng) -> Tensor,
) {
    for i in 0..20 {
        let inputs = gen(rng);
        let loss_rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let err = finite_diff_max_rel_err(&inputs, 1e-5, |tape, leaves| {
            f(tape, leaves, &mut loss_rng.clone())
        });
        assert!(
            err < FD_TOL,
            "{name}: instance {i} max relative error {err:.3e} >= {FD_TOL:.1e}"
        );
    }
}

/// Weighted sum with a fixed random coefficient tensor: keeps the loss
/// sensitive to every output element (plain sums are degenerate for
/// normalizing ops).
fn wsum(out: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let w = Tensor::new(runif(rng, out.numel(), -1.0, 1.0), out.shape.clone());
    out.mul(&w).sum(None, false)
}

#[test]
fn criterion_01_gradient_suite() {
    let start = std::time::Instant::now();
    let rng = &mut ChaCha8Rng::seed_from_u64(11);

    check20("add", rng, |r| vec![(runif(r, 6, -2.0, 2.0), vec![2, 3]), (runif(r, 3, -2.0, 2.0), vec![3])],
        |_, l, r| wsum(&l[0].add(&l[1]), r));
    check20("sub", rng, |r| vec![(runif(r, 6, -2.0, 2.0), vec![2, 3]), (runif(r, 6, -2.0, 2.0), vec![2, 3])],
        |_, l, r| wsum(&l[0].sub(&l[1]), r));
    check20("mul", rng, |r| vec![(runif(r, 12, -2.0, 2.0), vec![4, 3]), (runif(r, 3, -2.0, 2.0), vec![3])],
        |_, l, r| wsum(&l[0].mul(&l[1]), r));
    check20("div", rng, |r| vec![(runif(r, 6, -2.0, 2.0), vec![2, 3]), (runif_away(r, 3, 0.5, 2.0), vec![3])],
        |_, l, r| wsum(&l[0].div(&l[1]), r));
    check20("scale", rng, |r| vec![(runif(r, 5, -2.0, 2.0), vec![5])],
        |_, l, r| wsum(&l[0].scale(1.7), r));
    check20("neg", rng, |r| vec![(runif(r, 5, -2.0, 2.0), vec![5])],
        |_, l, r| wsum(&l[0].neg(), r));
    check20("add_scalar", rng, |r| vec![(runif(r, 5, -2.0, 2.0), vec![5])],
        |_, l, r| wsum(&l[0].add_scalar(-0.3), r));
    check20("matmul", rng, |r| vec![(runif(r, 6, -1.0, 1.0), vec![2, 3]), (runif(r, 12, -1.0, 1.0), vec![3, 4])],
        |_, l, r| wsum(&l[0].matmul(&l[1]), r));
    check20("matmul_batched", rng,
        |r| vec![(runif(r, 12, -1.0, 1.0), vec![2, 2, 3]), (runif(r, 12, -1.0, 1.0), vec![3, 4])],
        |_, l, r| wsum(&l[0].matmul(&l[1]), r));
    check20("permute", rng, |r| vec![(runif(r, 24, -1.0, 1.0), vec![2, 3, 4])],
        |_, l, r| wsum(&l[0].permute(&[2, 0, 1]), r));
    check20("transpose_last_two", rng, |r| vec![(runif(r, 24, -1.0, 1.0), vec![2, 3, 4])],
        |_, l, r| wsum(&l[0].transpose_last_two(), r));
    check20("reshape", rng, |r| vec![(runif(r, 12, -1.0, 1.0), vec![2, 6])],
        |_, l, r| wsum(&l[0].reshape(&[3, 4]), r));
    check20("sum_axis", rng, |r| vec![(runif(r, 6, -1.0, 1.0), vec![2, 3])],
        |_, l, r| wsum(&l[0].sum(Some(1), false), r));
    check20("mean_axis", rng, |r| vec![(runif(r, 6, -1.0, 1.0), vec![2, 3])],
        |_, l, r| wsum(&l[0].mean(Some(0), true), r));
    check20("relu", rng, |r| vec![(runif_away(r, 8, 0.05, 2.0), vec![8])],
        |_, l, r| wsum(&l[0].relu(), r));
    check20("gelu", rng, |r| vec![(runif(r, 8, -2.0, 2.0), vec![8])],
        |_, l, r| wsum(&l[0].gelu_approx(), r));
    check20("sqrt", rng, |r| vec![(runif(r, 8, 0.3, 2.0), vec![8])],
        |_, l, r| wsum(&l[0].sqrt_elem(), r));
    check20("softmax_last", rng, |r| vec![(runif(r, 8, -2.0, 2.0), vec![2, 4])],
        |_, l, r| wsum(&l[0].softmax_last(), r));
    check20("l2_normalize_last", rng, |r| vec![(runif_away(r, 8, 0.2, 2.0), vec![2, 4])],
        |_, l, r| wsum(&l[0].l2_normalize_last(1e-12), r));
    check20("moving_average_last", rng, |r| vec![(runif(r, 14, -1.0, 1.0), vec![2, 7])],
        |_, l, r| wsum(&l[0].moving_average_last(3), r));
    check20("unfold_last", rng, |r| vec![(runif(r, 16, -1.0, 1.0), vec![2, 8])],
        |_, l, r| wsum(&l[0].unfold_last(4, 2), r));

    // full base-model forwards
    for kind in KINDS {
        let cfg = toy_cfg(kind);
        let numel = 2 * cfg.lookback * cfg.channels;
        for i in 0..20 {
            let mut init = ChaCha8Rng::seed_from_u64(500 + i);
            let model = build_model(&cfg, &mut init).unwrap();
            let data = runif(rng, numel, -1.5, 1.5);
            let loss_rng = ChaCha8Rng::seed_from_u64(700 + i);
            let err = finite_diff_max_rel_err(&[(data, vec![2, cfg.lookback, cfg.channels])], 1e-5,
                |tape, leaves| {
                    let out = model.forward(&leaves[0], Some(tape));
                    wsum(&out.prediction, &mut loss_rng.clone())
                });
            assert!(err < FD_TOL, "{:?} forward: instance {i} rel err {err:.3e}", kind);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "gradient suite took {secs:.1}s (budget 120s)");
    println!("criterion 1 (gradient suite, {secs:.1}s): PASS");
}

fn toy_batch(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        runif(&mut rng, b * cfg.lookback * cfg.channels, -1.5, 1.5),
        vec![b, cfg.lookback, cfg.channels],
    )
}

#[test]
fn criterion_02_stop_grad_suite() {
    let start = std::time::Instant::now();
    for kind in KINDS {
        let cfg = toy_cfg(kind);
        let x = toy_batch(&cfg, 3, 42);
        // term 1: zero gradient on every siamese-encoder parameter
        {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let base = build_model(&cfg, &mut rng).unwrap();
            let bundle =
                build_siamese(base, HeadConfig::default(), LossWeights::new(0.5, 0.5).unwrap(), &mut rng)
                    .unwrap();
            let tape = Tape::new();
            let terms = bundle.simsiam_terms(&x, Some(&tape));
            tape.backward(&terms.term1);
            for p in bundle.siamese_params() {
                assert!(
                    p.grad().iter().all(|g| *g == 0.0),
                    "{:?}: term 1 leaked gradient into siamese parameter {}",
                    kind,
                    p.name()
                );
            }
        }
        // term 2: zero gradient on every backbone parameter
        {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let base = build_model(&cfg, &mut rng).unwrap();
            let bundle =
                build_siamese(base, HeadConfig::default(), LossWeights::new(0.5, 0.5).unwrap(), &mut rng)
                    .unwrap();
            let tape = Tape::new();
            let terms = bundle.simsiam_terms(&x, Some(&tape));
            tape.backward(&terms.term2);
            for p in bundle.backbone_params() {
                assert!(
                    p.grad().iter().all(|g| *g == 0.0),
                    "{:?}: term 2 leaked gradient into backbone parameter {}",
                    kind,
                    p.name()
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "stop-grad suite took {secs:.1}s (budget 60s)");
    println!("criterion 2 (stop-grad suite, {secs:.1}s): PASS");
}

#[test]
fn criterion_03_loss_identities() {
    // l_simsia bounded on 1000 random batches
    let cfg = toy_cfg(ModelKind::DLinear);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base = build_model(&cfg, &mut rng).unwrap();
    let bundle =
        build_siamese(base, HeadConfig::default(), LossWeights::new(0.5, 0.5).unwrap(), &mut rng)
            .unwrap();
    for i in 0..1000 {
        let x = toy_batch(&cfg, 3, 10_000 + i);
        let terms = bundle.simsiam_terms(&x, None);
        let l = terms.term1.scale(0.5).add(&terms.term2.scale(0.5)).item();
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&l), "l_simsia {l} out of [-1, 1]");
    }

    // engineered colinear case: both branches equal -> exactly -1
    let pro = Tensor::new(vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75], vec![2, 3]);
    let l = neg_cosine(&pro, &pro.detach())
        .scale(0.5)
        .add(&neg_cosine(&pro.detach(), &pro).scale(0.5));
    assert!((l.item() + 1.0).abs() < 1e-9, "colinear case gave {}", l.item());

    // affine identity
    let mut wr = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let ls = Tensor::scalar_value(wr.gen_range(-1.0..1.0));
        let lp = Tensor::scalar_value(wr.gen_range(0.0..4.0));
        let w = LossWeights::new(wr.gen_range(0.0..1.0), wr.gen_range(0.01..1.0)).unwrap();
        let total = total_loss(&ls, &lp, w).item();
        let direct = w.lambda_simsia * ls.item() + w.lambda_pred * lp.item();
        assert!((total - direct).abs() < 1e-12);
    }

    // weights (0, 1): backbone gradients equal the bare-baseline gradients
    for kind in KINDS {
        let cfg = toy_cfg(kind);
        let x = toy_batch(&cfg, 4, 77);
        let mut yr = ChaCha8Rng::seed_from_u64(78);
        let y = Tensor::new(
            runif(&mut yr, 4 * cfg.horizon * cfg.channels, -1.0, 1.0),
            vec![4, cfg.horizon, cfg.channels],
        );

        let mut rng_a = ChaCha8Rng::seed_from_u64(31);
        let base_a = build_model(&cfg, &mut rng_a).unwrap();
        let bundle =
            build_siamese(base_a, HeadConfig::default(), LossWeights::new(0.0, 1.0).unwrap(), &mut rng_a)
                .unwrap();
        let tape = Tape::new();
        let out = bundle.forward_train(&x, &y, Some(&tape));
        tape.backward(&out.l_total);
        let grads_bundle: Vec<Vec<f64>> = bundle.backbone_params().iter().map(|p| p.grad()).collect();

        let mut rng_b = ChaCha8Rng::seed_from_u64(31);
        let base_b = build_model(&cfg, &mut rng_b).unwrap();
        let tape2 = Tape::new();
        let pred = base_b.forward(&x, Some(&tape2));
        let l_pred = prediction_loss(&pred.prediction, &y);
        tape2.backward(&l_pred);
        let grads_base: Vec<Vec<f64>> = base_b.parameters().iter().map(|p| p.grad()).collect();

        for (ga, gb) in grads_bundle.iter().zip(&grads_base) {
            for (a, b) in ga.iter().zip(gb) {
                assert!((a - b).abs() < 1e-10, "{:?}: (0,1) gradient mismatch {a} vs {b}", kind);
            }
        }
    }
    println!("criterion 3 (loss identities): PASS");
}

#[test]
fn criterion_04_inference_invariance() {
    for kind in KINDS {
        let cfg = toy_cfg(kind);
        let mut rng_a = ChaCha8Rng::seed_from_u64(61);
        let base_a = build_model(&cfg, &mut rng_a).unwrap();
        let bundle =
            build_siamese(base_a, HeadConfig::default(), LossWeights::new(0.3, 0.7).unwrap(), &mut rng_a)
                .unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(61);
        let bare = build_model(&cfg, &mut rng_b).unwrap();
        for i in 0..100 {
            let x = toy_batch(&cfg, 2, 40_000 + i);
            let a = bundle.forward_infer(&x);
            let b = bare.forward(&x, None).prediction;
            assert_eq!(a.shape, b.shape);
            for (va, vb) in a.data.iter().zip(b.data.iter()) {
                assert_eq!(va.to_bits(), vb.to_bits(), "{:?}: inference differs", kind);
            }
        }
    }
    println!("criterion 4 (inference invariance): PASS");
}

#[test]
fn criterion_05_pipeline_properties() {
    // ETT border arithmetic
    let b = split(17420, SplitSpec::EttHour, 336, 96).unwrap();
    assert_eq!(b.train, (0, 8640));
    assert_eq!(b.val, (8640 - 336, 11520));
    assert_eq!(b.test, (11520 - 336, 14400));
    let bm = split(69680, SplitSpec::EttMinute, 96, 96).unwrap();
    assert_eq!(bm.train, (0, 34560));
    assert_eq!(bm.val, (34560 - 96, 46080));
    assert_eq!(bm.test, (46080 - 96, 57600));

    // no-leakage: scaler fitted on train only, unchanged by test perturbation
    let mut values: Vec<Vec<f64>> = (0..100).map(|i| vec![(i as f64 * 0.37).sin(), i as f64]).collect();
    let train_end = 70;
    let s1 = fit_scaler(&values[..train_end]);
    for row in values.iter_mut().skip(90) {
        row[0] += 1e6;
    }
    let s2 = fit_scaler(&values[..train_end]);
    assert_eq!(s1.mean, s2.mean);
    assert_eq!(s1.std, s2.std);
    let scaled = apply_scaler(&values[..train_end], &s1);
    for c in 0..2 {
        let m: f64 = scaled.iter().map(|r| r[c]).sum::<f64>() / train_end as f64;
        assert!(m.abs() < 1e-9, "standardized train mean {m} not ~0");
    }

    // window reconstruction: concatenated val targets rebuild the segment
    let series = c3rl::data::RawSeries {
        timestamps: (0..60).map(|i| format!("2020-01-0{} {:02}:00:00", 1 + i / 24, i % 24)).collect(),
        values: (0..60).map(|i| vec![(i as f64 * 0.11).cos()]).collect(),
        channel_names: vec!["a".into()],
    };
    let ds = WindowedDataset::new(&series, SplitSpec::Ratio(0.5, 0.25, 0.25), 4, 1).unwrap();
    let (vs, ve) = ds.borders.val;
    let mut rebuilt = Vec::new();
    for w in 0..ds.window_count(Segment::Val) {
        rebuilt.extend(ds.window(Segment::Val, w).1);
    }
    let expect: Vec<f64> = ds.values[vs + 4..ve].iter().map(|r| r[0]).collect();
    assert_eq!(rebuilt, expect);

    // metrics vs an independent scalar implementation
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let n = rng.gen_range(1..20);
        let p = runif(&mut rng, n, -5.0, 5.0);
        let t = runif(&mut rng, n, -5.0, 5.0);
        let (mut se, mut ae) = (0.0f64, 0.0f64);
        for i in 0..n {
            let d: f64 = p[i] - t[i];
            se += d * d;
            ae += d.abs();
        }
        assert!((mse(&p, &t) - se / n as f64).abs() < 1e-12);
        assert!((mae(&p, &t) - ae / n as f64).abs() < 1e-12);
    }
    println!("criterion 5 (pipeline properties): PASS");
}

#[test]
fn criterion_06_dlinear_least_squares_oracle() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    // sine plus substantial iid noise: keeps the lag covariance well
    // conditioned so both solvers sit at a sharp, reachable optimum
    {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut s = String::from("date,v\n");
        for t in 0..400usize {
            let v = (t as f64 * 0.23).sin() + 0.6 * rng.gen_range(-1.0..1.0);
            s.push_str(&format!(
                "2020-{:02}-{:02} {:02}:00:00,{v:.6}\n",
                1 + t / (24 * 28),
                1 + (t / 24) % 28,
                t % 24
            ));
        }
        std::fs::write(&data, s).unwrap();
    }
    let (l, p) = (8usize, 1usize);
    let spec = SplitSpec::Ratio(0.7, 0.1, 0.2);

    let cfg = ExperimentConfig {
        dataset: Some(data.clone()),
        split: Some(spec),
        kind: ModelKind::DLinear,
        lookback: Some(l),
        horizon: p,
        decomp_kernel: 1,
        lr: Some(5e-3),
        batch_size: 512,
        max_epochs: 3000,
        patience: 3000,
        mode: Mode::C3rl,
        ..ExperimentConfig::default()
    };
    let series = load_csv(&data).unwrap();
    let run = run_arm(&cfg, &series, Some(LossWeights::new(0.0, 1.0).unwrap()), &[]).unwrap();

    // independent normal-equations solve over the same standardized train windows
    let ds = WindowedDataset::new(&series, spec, l, p).unwrap();
    let n_train = ds.window_count(Segment::Train);
    let mut a = DMatrix::zeros(n_train, l + 1);
    let mut y = DVector::zeros(n_train);
    for w in 0..n_train {
        let (x, t) = ds.window(Segment::Train, w);
        for j in 0..l {
            a[(w, j)] = x[j];
        }
        a[(w, l)] = 1.0;
        y[w] = t[0];
    }
    let coef = (a.transpose() * &a)
        .try_inverse()
        .expect("normal equations are well-conditioned here")
        * a.transpose()
        * y;
    let n_test = ds.window_count(Segment::Test);
    let mut preds = Vec::with_capacity(n_test);
    let mut truths = Vec::with_capacity(n_test);
    for w in 0..n_test {
        let (x, t) = ds.window(Segment::Test, w);
        let mut v = coef[l];
        for j in 0..l {
            v += coef[j] * x[j];
        }
        preds.push(v);
        truths.push(t[0]);
    }
    let ols_mse = mse(&preds, &truths);
    let rel = (run.result.test_mse - ols_mse).abs() / ols_mse;
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "least-squares oracle took {secs:.1}s (budget 60s)");
    assert!(
        rel < 0.05,
        "trained mse {} vs normal-equations mse {} (rel {:.3})",
        run.result.test_mse,
        ols_mse,
        rel
    );
    println!(
        "criterion 6 (least-squares oracle, trained {:.5} vs direct {:.5}, {secs:.1}s): PASS",
        run.result.test_mse, ols_mse
    );
}

fn ett_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

struct EttPair {
    baseline_mse: f64,
    c3rl_mse: f64,
}

fn run_ett_pair(
    csv: &Path,
    kind: ModelKind,
    lookback: usize,
    weights: LossWeights,
) -> (EttPair, c3rl::runner::RunArtifacts) {
    let cfg = ExperimentConfig {
        dataset: Some(csv.to_path_buf()),
        kind,
        lookback: Some(lookback),
        horizon: 96,
        mode: Mode::Paired,
        ..ExperimentConfig::default()
    };
    let series = load_csv(csv).unwrap();
    let baseline = run_arm(&cfg, &series, None, &[]).unwrap();
    let c3rl_run = run_arm(&cfg, &series, Some(weights), &[]).unwrap();
    (
        EttPair { baseline_mse: baseline.result.test_mse, c3rl_mse: c3rl_run.result.test_mse },
        c3rl_run,
    )
}

#[test]
fn criterion_07_desk_scale_reproduction() {
    let etth1 = ett_dir().join("ETTh1.csv");
    let etth2 = ett_dir().join("ETTh2.csv");
    if !etth1.exists() || !etth2.exists() {
        println!(
            "criterion 7 (desk-scale reproduction): SKIP — ETT CSVs not present under data/ \
             (place ETTh1.csv and ETTh2.csv there to enable)"
        );
        return;
    }
    let (d, d_run) =
        run_ett_pair(&etth1, ModelKind::DLinear, 336, LossWeights::new(0.4, 0.6).unwrap());
    assert!((d.baseline_mse - 0.384).abs() <= 0.03, "DLinear baseline mse {}", d.baseline_mse);
    assert!((d.c3rl_mse - 0.374).abs() <= 0.03, "DLinear +C3RL mse {}", d.c3rl_mse);
    let (r, r_run) =
        run_ett_pair(&etth2, ModelKind::RLinear, 336, LossWeights::new(0.2, 0.8).unwrap());
    assert!((r.baseline_mse - 0.262).abs() <= 0.03, "RLinear baseline mse {}", r.baseline_mse);
    assert!((r.c3rl_mse - 0.260).abs() <= 0.03, "RLinear +C3RL mse {}", r.c3rl_mse);
    // criterion 8, first half: healthy runs stay above the collapse floor
    for run in [&d_run, &r_run] {
        let floor = 0.1 / ((run.result.horizon * 7) as f64).sqrt();
        assert!(run.result.final_collapse_std > floor, "collapse_std {}", run.result.final_collapse_std);
    }
    println!("criterion 7 (desk-scale reproduction): PASS");
}

#[test]
fn criterion_08_collapse_monitoring() {
    // The criterion-7 half (healthy ETT runs stay above the floor) executes
    // inside criterion 7 when the ETT data is present. The sabotage half
    // runs here unconditionally on the toy sine dataset.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sine.csv");
    write_toy_sine(&data, 400, 2).unwrap();
    let series = load_csv(&data).unwrap();
    let (l, p, n) = (24usize, 8usize, 2usize);
    let ds = WindowedDataset::new(&series, SplitSpec::Ratio(0.6, 0.2, 0.2), l, p).unwrap();
    let mut cfg = ModelConfig::new(ModelKind::DLinear, l, p, n);
    cfg.decomp_kernel = 9;
    let threshold = 0.1 / ((p * n) as f64).sqrt();

    let train = |sabotage: bool| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2025);
        let base = build_model(&cfg, &mut rng).unwrap();
        let weights = if sabotage {
            LossWeights::new(1.0, 0.0).unwrap()
        } else {
            LossWeights::new(0.5, 0.5).unwrap()
        };
        let mut bundle = build_siamese(base, HeadConfig::default(), weights, &mut rng).unwrap();
        bundle.disable_stop_grad = sabotage;
        let mut opt = Adam::new(bundle.all_params(), 1e-2);
        let mut shuffle = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            for (x, y) in ds.batches(Segment::Train, 32, Some(&mut shuffle)).unwrap() {
                let tape = Tape::new();
                let out = bundle.forward_train(&x, &y, Some(&tape));
                tape.backward(&out.l_total);
                opt.step();
                opt.zero_grad();
            }
        }
        let (x, _) = &ds.batches(Segment::Test, 32, None::<&mut ChaCha8Rng>).unwrap()[0];
        let terms = bundle.simsiam_terms(x, None);
        let align = &terms.backbone_out.align;
        let b = align.shape[0];
        collapse_metric(&align.reshape(&[b, align.numel() / b]))
    };

    let healthy = train(false);
    let collapsed = train(true);
    assert!(
        healthy > threshold,
        "healthy run collapse_std {healthy} not above floor {threshold}"
    );
    assert!(
        collapsed < threshold,
        "sabotaged run collapse_std {collapsed} not below floor {threshold}"
    );
    println!(
        "criterion 8 (collapse monitoring, healthy {healthy:.4} vs sabotaged {collapsed:.4}, floor {threshold:.4}): PASS"
    );
}

#[test]
fn criterion_09_lambda_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sine.csv");
    write_toy_sine(&data, 400, 2).unwrap();
    let cfg = ExperimentConfig {
        dataset: Some(data),
        split: Some(SplitSpec::Ratio(0.6, 0.2, 0.2)),
        kind: ModelKind::DLinear,
        lookback: Some(24),
        horizon: 12,
        decomp_kernel: 9,
        max_epochs: 8,
        patience: 8,
        mode: Mode::LambdaSweep,
        ..ExperimentConfig::default()
    };
    let grid = [0.05, 0.25, 0.5, 0.75, 0.95];
    let runs = run_lambda_sweep(&cfg, &grid).unwrap();
    assert_eq!(runs.len(), grid.len());
    let mse_lo = runs[0].result.test_mse;
    let mse_hi = runs[grid.len() - 1].result.test_mse;
    assert!(
        mse_hi > mse_lo,
        "test mse at λ_simsia 0.95 ({mse_hi}) should exceed mse at 0.05 ({mse_lo})"
    );

    emit_sweep_summary(&runs, dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + grid.len());
    assert_eq!(lines[0], "lambda_simsia,lambda_pred,test_mse,test_mae");
    for (row, lambda) in lines[1..].iter().zip(grid) {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0], lambda);
        assert!((cells[0] + cells[1] - 1.0).abs() < 1e-12);
        assert!(cells[2].is_finite() && cells[3].is_finite());
    }
    println!(
        "criterion 9 (λ-sweep shape, mse 0.05 → {mse_lo:.4}, 0.95 → {mse_hi:.4}): PASS"
    );
}

#[test]
fn criterion_10_determinism() {
    let etth1 = ett_dir().join("ETTh1.csv");
    if !etth1.exists() {
        println!(
            "criterion 10 (determinism of criterion-7 runs): SKIP — ETT CSVs not present under \
             data/; the same-seed bit-exactness contract is exercised at toy scale by the \
             runner unit tests"
        );
        return;
    }
    let w = LossWeights::new(0.4, 0.6).unwrap();
    let (a, a_run) = run_ett_pair(&etth1, ModelKind::DLinear, 336, w);
    let (b, b_run) = run_ett_pair(&etth1, ModelKind::DLinear, 336, w);
    assert_eq!(a.baseline_mse.to_bits(), b.baseline_mse.to_bits());
    assert_eq!(a.c3rl_mse.to_bits(), b.c3rl_mse.to_bits());
    assert_eq!(a_run.result.test_mae.to_bits(), b_run.result.test_mae.to_bits());
    assert_eq!(a_run.result.curves.val_loss, b_run.result.curves.val_loss);
    println!("criterion 10 (determinism): PASS");
}
