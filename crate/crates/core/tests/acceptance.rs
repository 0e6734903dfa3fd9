//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and writes a single `criterion NN ... PASS|FAIL` line to stderr (outside
//! the test harness capture, so the lines show up in plain `cargo test`).
//!
//! Training runs are shared between criteria and serialized through a lock,
//! so the wall-clock budget of the fast grokking run is measured without
//! competing training jobs.
//!
//! The full transformer reproduction is opt-in:
//! `cargo test --release -p grokscope --test acceptance -- --ignored`.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use grokscope::checkpoint::CheckpointStore;
use grokscope::config::RunConfig;
use grokscope::curvature::{extremal_eigs, pca_trajectory, sgd_expansion_check, PowerIterConfig};
use grokscope::data::{batch_encode, build_dataset, OpKind, TokenBatch};
use grokscope::harness::{
    fit_power_law, grid, loss_spike_steps, pearson, spearman, sweep, train, PhaseMarks, Prepared, TrainOutcome,
    DEFAULT_SPIKE_FACTOR,
};
use grokscope::intrinsic_dim::{
    id_battery, mle_from_distances, ManifoldKind, ManifoldSpec, MleMode,
};
use grokscope::landscape::{
    filter_normalize, make_direction, slice_1d, slice_2d, Direction, DirectionAux, DirectionKind, GridSpec,
    ZeroFilterPolicy,
};
use grokscope::model::{Model, ModelConfig};
use grokscope::objective::{ModelObjective, Objective, Quadratic};
use grokscope::optim::Algo;
use grokscope::spectral::{hjorth, periodogram, DEFAULT_CUTOFF};
use grokscope::testfn::{
    default_race_optimizers, eval_grad, race, TestFnKind, TestFnSpec, DEFAULT_RACE_STEPS, DEFAULT_REACH_THRESHOLD,
    RASTRIGIN_START, ROSENBROCK_START,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FAST_P: usize = 31;
const FAST_BUDGET: usize = 4000;
const FAST_R: f64 = 0.5;
const CLIP_ETA: f64 = 0.01;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:02} {name}: {verdict} ({detail})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn run(config: &RunConfig) -> TrainOutcome {
    let prep = Prepared::new(config).expect("config prepares");
    train(config, CheckpointStore::in_memory(prep.model.layout().clone())).expect("training succeeds")
}

struct TimedRun {
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn fast_config(r: f64) -> RunConfig {
    RunConfig::fast_mlp(FAST_P, r, 0, FAST_BUDGET)
}

/// The unclipped fast run at the default fraction, shared by several criteria.
fn fast_run() -> &'static TimedRun {
    static CELL: OnceLock<TimedRun> = OnceLock::new();
    CELL.get_or_init(|| {
        let _g = heavy();
        let start = Instant::now();
        let outcome = run(&fast_config(FAST_R));
        TimedRun {
            outcome,
            elapsed: start.elapsed(),
        }
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// An MLP of embedding width 8 on addition mod 7 with a batch of every
/// third equation.
fn tiny_mlp(width: usize, hidden: usize) -> (Model, TokenBatch, TokenBatch) {
    let ds = build_dataset(OpKind::ModAdd, 7, 7, false).unwrap();
    let model = Model::new(ModelConfig::mlp(width, hidden, ds.vocab_size, 7)).unwrap();
    let train: Vec<usize> = (0..ds.len()).filter(|i| i % 3 == 0).collect();
    let val: Vec<usize> = (0..ds.len()).filter(|i| i % 3 != 0).collect();
    (
        model,
        batch_encode(&train, &ds).unwrap(),
        batch_encode(&val, &ds).unwrap(),
    )
}

fn central_grad(obj: &dyn Objective, theta: &[f64], h: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let fp = obj.loss(&x).unwrap();
            x[i] = theta[i] - h;
            let fm = obj.loss(&x).unwrap();
            x[i] = theta[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / max_abs(b)
}

fn marks_ok_fast(m: &PhaseMarks) -> Option<(usize, usize)> {
    let (t2, t4) = (m.t2?, m.t4?);
    (t4 >= t2 && t4 - t2 >= 2 * t2).then_some((t2, t4))
}

#[test]
fn criterion_01_grokking_fast_variant() {
    let r = fast_run();
    let m = r.outcome.marks;
    let within_time = r.elapsed <= Duration::from_secs(300);
    let ok = marks_ok_fast(&m).is_some() && within_time;
    report(
        1,
        "grokking (fast mlp variant, p=31, r=0.5, 4k steps)",
        ok,
        &format!("t2={:?} t4={:?} need t4-t2 >= 2*t2, wall time {:.1}s <= 300s", m.t2, m.t4, r.elapsed.as_secs_f64()),
    );
}

#[test]
#[ignore = "reference transformer: about an hour per seed"]
fn criterion_01_grokking_reference_transformer() {
    let _g = heavy();
    let mut good = 0;
    let mut detail = Vec::new();
    for seed in 0..3 {
        let cfg = RunConfig::reference(97, 0.5, seed, 10_000);
        let m = run(&cfg).marks;
        let ok = matches!((m.t2, m.t4), (Some(t2), Some(t4)) if t2 <= 1000 && t4 >= t2 && t4 - t2 >= 5 * t2);
        good += ok as usize;
        detail.push(format!("seed {seed}: t2={:?} t4={:?}", m.t2, m.t4));
    }
    report(
        1,
        "grokking (reference transformer, p=97, 3 seeds)",
        good >= 2,
        &format!("{good}/3 seeds with t2 <= 1000 and t4-t2 >= 5*t2; {}", detail.join(", ")),
    );
}

#[test]
fn criterion_02_spectral_predictor_correlation() {
    let _g = heavy();
    let base = fast_config(FAST_R);
    let cells = grid(&[3e-4, 1e-3, 3e-3, 1e-2], &[0.0, 0.3, 1.0, 3.0], &[FAST_R], &[0]);
    let rows = sweep(&base, &cells, 1).unwrap();
    let mut activity = Vec::new();
    let mut val_acc = Vec::new();
    let mut failures = 0;
    for row in &rows {
        match &row.result {
            Ok(s) => match s.activity {
                Some(a) => {
                    activity.push(a);
                    val_acc.push(s.final_val_acc);
                }
                None => failures += 1,
            },
            Err(_) => failures += 1,
        }
    }
    let rho = spearman(&activity, &val_acc);
    let ok = failures == 0 && rho.is_some_and(|r| r > 0.0);
    report(
        2,
        "spectral predictor correlation (4x4 lr x wd sweep)",
        ok,
        &format!("spearman(activity, final val_acc) = {rho:?} over {} cells, {failures} failed cells", activity.len()),
    );
}

#[test]
fn criterion_03_spectral_math() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut parseval = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..2048);
        let x = randn(n, &mut rng);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let p = periodogram(&x).unwrap();
        parseval = parseval.max(rel_err(p.total_energy(), energy));
    }

    let n = 4096;
    let mut sine = 0.0f64;
    for f in [0.05, 0.1234, 0.2, 0.3711] {
        let w0 = 2.0 * std::f64::consts::PI * f;
        let x: Vec<f64> = (0..n).map(|t| (w0 * t as f64 + 0.3).sin()).collect();
        let s = hjorth(&x, DEFAULT_CUTOFF).unwrap();
        sine = sine.max(rel_err(s.mobility.unwrap(), w0)).max(rel_err(s.complexity.unwrap(), w0));
    }

    let mut scale = 0.0f64;
    for c in [0.5, 3.0, 17.0] {
        let x = randn(400, &mut rng);
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let a = hjorth(&x, DEFAULT_CUTOFF).unwrap().activity;
        let b = hjorth(&cx, DEFAULT_CUTOFF).unwrap().activity;
        scale = scale.max(rel_err(b, c * c * a));
    }
    let ok = parseval <= 1e-9 && sine <= 0.01 && scale <= 1e-9;
    report(
        3,
        "spectral math exactness",
        ok,
        &format!("parseval {parseval:.2e} <= 1e-9, sine hjorth {sine:.2e} <= 1e-2, scale equivariance {scale:.2e} <= 1e-9"),
    );
}

#[test]
fn criterion_04_gradient_and_hvp() {
    let (model, train, val) = tiny_mlp(8, 16);
    let obj = ModelObjective::new(&model, &train, &val);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut grad_err = 0.0f64;
    let mut hvp_err = 0.0f64;
    let mut sym = 0.0f64;
    for seed in 0..3 {
        let theta = model.init_params(seed).values;
        let (_, g) = obj.loss_grad(&theta).unwrap();
        grad_err = grad_err.max(max_rel_dev(&g, &central_grad(&obj, &theta, 1e-6)));

        let v = randn(theta.len(), &mut rng);
        let hv = obj.hvp(&theta, &v).unwrap();
        let h = 1e-4;
        let plus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - h * d).collect();
        let gp = obj.loss_grad(&plus).unwrap().1;
        let gm = obj.loss_grad(&minus).unwrap().1;
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        hvp_err = hvp_err.max(max_rel_dev(&hv, &fd));

        let u = randn(theta.len(), &mut rng);
        let hu = obj.hvp(&theta, &u).unwrap();
        let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
        sym = sym.max((uhv - vhu).abs() / uhv.abs().max(vhu.abs()));
    }
    let ok = grad_err <= 1e-6 && hvp_err <= 1e-4 && sym <= 1e-8;
    report(
        4,
        "gradient and hvp correctness (mlp width 8)",
        ok,
        &format!("gradient {grad_err:.2e} <= 1e-6, hvp {hvp_err:.2e} <= 1e-4, symmetry {sym:.2e} <= 1e-8"),
    );
}

#[test]
fn criterion_05_extremal_eigenvalues() {
    let cfg = PowerIterConfig {
        tol: 1e-9,
        max_iter: 20_000,
        seed: 5,
    };
    let mut diag_err = 0.0f64;
    for diag in [
        vec![0.5, 1.0, 2.0, 3.0, 7.5],
        vec![-4.0, -1.0, 0.25, 2.0],
        vec![-9.0, -3.0, -2.0, 1.5, 6.0],
        vec![0.1, 0.2, 0.3],
    ] {
        let q = Quadratic::diagonal(&diag);
        let theta = vec![0.3; diag.len()];
        let e = extremal_eigs(&q, &theta, &cfg).unwrap();
        let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        diag_err = diag_err.max((e.lambda_max() - hi).abs()).max((e.lambda_min() - lo).abs());
    }

    // dense Hessian from central differences of the gradient
    let (model, train, val) = tiny_mlp(4, 8);
    let obj = ModelObjective::new(&model, &train, &val);
    let theta = model.init_params(2).values;
    let n = theta.len();
    let h = 1e-5;
    let mut dense = DMatrix::<f64>::zeros(n, n);
    let mut x = theta.clone();
    for j in 0..n {
        x[j] = theta[j] + h;
        let gp = obj.loss_grad(&x).unwrap().1;
        x[j] = theta[j] - h;
        let gm = obj.loss_grad(&x).unwrap().1;
        x[j] = theta[j];
        for i in 0..n {
            dense[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&dense + dense.transpose()) * 0.5;
    let oracle = SymmetricEigen::new(sym).eigenvalues.max();
    let est = extremal_eigs(&obj, &theta, &cfg).unwrap();
    let dense_err = rel_err(est.lambda_max(), oracle);

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut a = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.sample(StandardNormal));
    a = &a * a.transpose();
    let quad = Quadratic::new(a.transpose().as_slice().to_vec(), randn(6, &mut rng)).unwrap();
    let q_theta = randn(6, &mut rng);
    let quad_gap = [0.3, 0.05, 0.01]
        .iter()
        .map(|&eps| sgd_expansion_check(&quad, &q_theta, eps).unwrap().gap)
        .fold(0.0f64, f64::max);

    let theta = model.init_params(9).values;
    let eps = [0.8, 0.4, 0.2, 0.1];
    let gaps: Vec<f64> = eps
        .iter()
        .map(|&e| sgd_expansion_check(&obj, &theta, e).unwrap().gap)
        .collect();
    let slopes: Vec<f64> = (1..eps.len())
        .map(|i| (gaps[i - 1] / gaps[i]).ln() / (eps[i - 1] / eps[i]).ln())
        .collect();
    let cubic = slopes.iter().all(|s| (2.5..=3.5).contains(s));

    let ok = diag_err <= 1e-6 && dense_err <= 1e-5 && quad_gap <= 1e-10 && cubic;
    report(
        5,
        "extremal eigenvalues and expansion check",
        ok,
        &format!(
            "diag quadratics {diag_err:.2e} <= 1e-6, dense-hessian lambda_max {dense_err:.2e} <= 1e-5 ({n} params), \
             quadratic expansion gap {quad_gap:.2e} <= 1e-10, mlp log-log gap slopes {slopes:.2?} in [2.5, 3.5]"
        ),
    );
}

#[test]
fn criterion_06_filter_normalization() {
    let (model, _, _) = tiny_mlp(8, 16);
    let layout = model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut theta = model.init_params(1).values;
    theta.iter_mut().for_each(|t| *t += 0.05 * rng.sample::<f64, _>(StandardNormal));
    let raw = Direction {
        values: randn(theta.len(), &mut rng),
        kind: DirectionKind::Random,
        anchor: 0,
    };
    let norm_of = |d: &Direction| filter_normalize(d, &theta, layout, ZeroFilterPolicy::Error).unwrap();
    let once = norm_of(&raw);
    let twice = norm_of(&once);
    let idem = max_rel_dev(&twice.values, &once.values);

    let mut scale = 0.0f64;
    for c in [1e-3, 0.37, 5.0, 1e4] {
        let scaled = Direction {
            values: raw.values.iter().map(|v| c * v).collect(),
            ..raw.clone()
        };
        scale = scale.max(max_rel_dev(&norm_of(&scaled).values, &once.values));
    }

    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut per_filter = 0.0f64;
    for e in &layout.entries {
        if e.kind.has_filters() {
            for w in e.filter_boundaries.windows(2) {
                per_filter = per_filter.max(rel_err(l2(&once.values[w[0]..w[1]]), l2(&theta[w[0]..w[1]])));
            }
        } else {
            for i in e.range() {
                per_filter = per_filter.max(rel_err(once.values[i].abs(), theta[i].abs()));
            }
        }
    }

    let own = Direction {
        values: theta.clone(),
        kind: DirectionKind::ToInit,
        anchor: 0,
    };
    let fixed = max_rel_dev(&norm_of(&own).values, &theta);

    let ok = idem <= 1e-12 && scale <= 1e-12 && per_filter <= 1e-12 && fixed <= 1e-12;
    report(
        6,
        "filter normalization",
        ok,
        &format!(
            "idempotence {idem:.2e}, scale invariance {scale:.2e}, per-filter norms {per_filter:.2e}, \
             self fixed point {fixed:.2e}, all <= 1e-12"
        ),
    );
}

#[test]
fn criterion_07_slices() {
    let (model, train, val) = tiny_mlp(8, 16);
    let obj = ModelObjective::new(&model, &train, &val);
    let theta = model.init_params(3).values;
    let target = model.init_params(4).values;
    let raw = make_direction(DirectionKind::ToOptimum, &theta, 0, DirectionAux::Target(&target)).unwrap();
    let dir = filter_normalize(&raw, &theta, model.layout(), ZeroFilterPolicy::Error).unwrap();
    let alphas = GridSpec::default_1d().points();
    let s = slice_1d(&obj, &theta, 0, &dir, &alphas).unwrap();
    let zero = alphas.iter().position(|&a| a == 0.0).unwrap();
    let anchor_train = model.forward_loss(&theta, &train).unwrap().loss;
    let anchor_val = model.forward_loss(&theta, &val).unwrap().loss;
    let f0 = (s.train_loss[zero] - anchor_train).abs().max((s.val_loss[zero] - anchor_val).abs());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 5;
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let a = &m * m.transpose();
    let center = randn(n, &mut rng);
    let q = Quadratic::new(a.transpose().as_slice().to_vec(), center.clone()).unwrap();
    let th = randn(n, &mut rng);
    let d1 = randn(n, &mut rng);
    let d2 = randn(n, &mut rng);
    // f(θ + αδ + βη) expanded around θ with the matrix applied explicitly
    let av = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect() };
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(x, y)| x * y).sum() };
    let off: Vec<f64> = th.iter().zip(&center).map(|(t, c)| t - c).collect();
    let (a_off, a_d1, a_d2) = (av(&off), av(&d1), av(&d2));
    let analytic = |al: f64, be: f64| {
        0.5 * dot(&off, &a_off)
            + al * dot(&d1, &a_off)
            + be * dot(&d2, &a_off)
            + 0.5 * al * al * dot(&d1, &a_d1)
            + al * be * dot(&d1, &a_d2)
            + 0.5 * be * be * dot(&d2, &a_d2)
    };
    let dir1 = Direction {
        values: d1.clone(),
        kind: DirectionKind::Random,
        anchor: 0,
    };
    let dir2 = Direction {
        values: d2.clone(),
        ..dir1.clone()
    };
    let qs = slice_1d(&q, &th, 0, &dir1, &alphas).unwrap();
    let mut toy = 0.0f64;
    for (i, &al) in alphas.iter().enumerate() {
        let want = analytic(al, 0.0);
        toy = toy.max((qs.train_loss[i] - want).abs() / want.abs().max(1.0));
    }
    let g2 = GridSpec::default_2d().points();
    let q2 = slice_2d(&q, &th, 0, &dir1, &dir2, &g2, &g2).unwrap();
    for (i, &al) in g2.iter().enumerate() {
        for (j, &be) in g2.iter().enumerate() {
            let want = analytic(al, be);
            toy = toy.max((q2.train_loss[i * g2.len() + j] - want).abs() / want.abs().max(1.0));
        }
    }
    let ok = f0 <= 1e-9 && toy <= 1e-9;
    report(
        7,
        "slice correctness",
        ok,
        &format!("f(0) vs anchor loss {f0:.2e} <= 1e-9, quadratic toy 1D+2D grid {toy:.2e} <= 1e-9"),
    );
}

#[test]
fn criterion_08_power_law_fit() {
    let (a, gamma, b) = (2.0, 3.0, 100.0);
    let pts: Vec<(f64, f64)> = (2..=9)
        .map(|i| {
            let r = i as f64 / 10.0;
            (r, a * r.powf(-gamma) + b)
        })
        .collect();
    let fit = fit_power_law(&pts).unwrap();
    let synth = rel_err(fit.a, a).max(rel_err(fit.gamma, gamma)).max(rel_err(fit.b, b));

    let mut points = Vec::new();
    let mut missing = Vec::new();
    if let Some(t4) = fast_run().outcome.marks.t4 {
        points.push((FAST_R, t4 as f64));
    } else {
        missing.push(FAST_R);
    }
    {
        let _g = heavy();
        for r in [0.6, 0.7, 0.8] {
            match run(&fast_config(r)).marks.t4 {
                Some(t4) => points.push((r, t4 as f64)),
                None => missing.push(r),
            }
        }
    }
    let desk = if points.len() >= 3 { fit_power_law(&points).ok() } else { None };
    let decreasing = desk.as_ref().is_some_and(|f| f.is_decreasing());
    let ok = synth <= 1e-6 && decreasing && missing.is_empty();
    report(
        8,
        "power-law fit",
        ok,
        &format!(
            "synthetic recovery {synth:.2e} <= 1e-6; desk r-sweep t4 points {points:?} (no t4 at {missing:?}), \
             fit a={:.3?} gamma={:.3?} b={:.3?}, decreasing={decreasing}",
            desk.as_ref().map(|f| f.a),
            desk.as_ref().map(|f| f.gamma),
            desk.as_ref().map(|f| f.b)
        ),
    );
}

#[test]
fn criterion_09_intrinsic_dimension() {
    let start = Instant::now();
    let hand = mle_from_distances(&[vec![1.0, 2.0, 4.0]], MleMode::Inverse).unwrap().value;
    let hand_err = (hand - 2.0 / (3.0 * 2f64.ln())).abs();

    let cubes: Vec<ManifoldSpec> = [1, 2, 4, 8]
        .iter()
        .map(|&d| ManifoldSpec {
            kind: ManifoldKind::Hypercube,
            d,
            ambient: 128,
            n: 2000,
            seed: 90 + d as u64,
        })
        .collect();
    let rows = id_battery(&cubes, 2).unwrap();
    let mut worst = 0.0f64;
    let mut shown = Vec::new();
    for r in &rows {
        let d = r.spec.d as f64;
        worst = worst.max(rel_err(r.mle.value, d)).max(rel_err(r.twonn.value, d));
        shown.push(format!("d={} mle {:.2} twonn {:.2}", r.spec.d, r.mle.value, r.twonn.value));
    }

    let mut battery = Vec::new();
    for d in 1..=8 {
        battery.push(ManifoldSpec {
            kind: ManifoldKind::Hypercube,
            d,
            ambient: 128,
            n: 500 + 200 * d,
            seed: 200 + d as u64,
        });
        battery.push(ManifoldSpec {
            kind: ManifoldKind::Sphere,
            d,
            ambient: 64,
            n: 2000 - 150 * d,
            seed: 300 + d as u64,
        });
    }
    for d in 1..=4 {
        battery.push(ManifoldSpec {
            kind: ManifoldKind::Torus,
            d,
            ambient: 32,
            n: 1000,
            seed: 400 + d as u64,
        });
    }
    let brows = id_battery(&battery, 2).unwrap();
    let mle: Vec<f64> = brows.iter().map(|r| r.mle.value).collect();
    let two: Vec<f64> = brows.iter().map(|r| r.twonn.value).collect();
    let corr = pearson(&mle, &two);
    let elapsed = start.elapsed();
    let ok = hand_err <= 1e-12
        && worst <= 0.15
        && corr.is_some_and(|c| c >= 0.95)
        && elapsed <= Duration::from_secs(120);
    report(
        9,
        "intrinsic dimension",
        ok,
        &format!(
            "hand MLE {hand_err:.2e} <= 1e-12; hypercubes in D=128, n=2000: worst rel {worst:.3} <= 0.15 [{}]; \
             pearson over {} manifolds {corr:.4?} >= 0.95; {:.1}s <= 120s",
            shown.join(", "),
            brows.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_test_functions() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut grad_err = 0.0f64;
    let specs = [
        TestFnSpec::new(TestFnKind::RosenbrockPairwise, 4),
        TestFnSpec::new(TestFnKind::RosenbrockChained, 5),
        TestFnSpec::new(TestFnKind::Rastrigin, 3),
        TestFnSpec::new(TestFnKind::RosenbrockChained, 2).log(),
        TestFnSpec::new(TestFnKind::Rastrigin, 2).log(),
    ];
    for spec in &specs {
        for _ in 0..5 {
            let x: Vec<f64> = (0..spec.n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, g) = eval_grad(spec, &x).unwrap();
            let h = 1e-5;
            let mut y = x.clone();
            let fd: Vec<f64> = (0..spec.n)
                .map(|i| {
                    y[i] = x[i] + h;
                    let fp = eval_grad(spec, &y).unwrap().0;
                    y[i] = x[i] - h;
                    let fm = eval_grad(spec, &y).unwrap().0;
                    y[i] = x[i];
                    (fp - fm) / (2.0 * h)
                })
                .collect();
            grad_err = grad_err.max(max_rel_dev(&g, &fd));
        }
    }

    let opts = default_race_optimizers();
    let rosen = race(
        &TestFnSpec::new(TestFnKind::RosenbrockChained, 2).log(),
        &opts,
        &ROSENBROCK_START,
        DEFAULT_RACE_STEPS,
        DEFAULT_REACH_THRESHOLD,
    )
    .unwrap();
    let rast = race(
        &TestFnSpec::new(TestFnKind::Rastrigin, 2).log(),
        &opts,
        &RASTRIGIN_START,
        DEFAULT_RACE_STEPS,
        DEFAULT_REACH_THRESHOLD,
    )
    .unwrap();
    let quartet = [Algo::Rmsprop, Algo::Rprop, Algo::Adam, Algo::Adamax];
    let quartet_ok = quartet.iter().all(|&a| rosen.entry(a).is_some_and(|e| e.reached));
    let sgd_ok = rosen.entry(Algo::Sgd).is_some_and(|e| !e.reached);
    let rast_ok = rast.entries.iter().all(|e| !e.reached);
    let elapsed = start.elapsed();
    let summary = |r: &grokscope::testfn::RaceResult| {
        r.entries
            .iter()
            .map(|e| format!("{} {:.1e}", e.optimizer.algo.name(), e.final_error))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let ok = grad_err <= 1e-7 && quartet_ok && sgd_ok && rast_ok && elapsed <= Duration::from_secs(30);
    report(
        10,
        "test functions",
        ok,
        &format!(
            "gradients {grad_err:.2e} <= 1e-7; log-rosenbrock final errors [{}]; log-rastrigin final errors [{}]; \
             {:.1}s <= 30s",
            summary(&rosen),
            summary(&rast),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_11_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 40;
    let origin = randn(dim, &mut rng);
    let u = randn(dim, &mut rng);
    let v = randn(dim, &mut rng);
    let planar: Vec<(usize, Vec<f64>)> = (0..60)
        .map(|t| {
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let p = (0..dim).map(|i| origin[i] + a * u[i] + b * v[i]).collect();
            (t, p)
        })
        .collect();
    let plane = pca_trajectory(&planar, 500).unwrap().explained_top2();
    let plane_err = (plane - 1.0).abs();

    let out = &fast_run().outcome;
    let ckpts: Vec<(usize, Vec<f64>)> = out
        .store
        .steps()
        .into_iter()
        .map(|s| (s, out.store.load(s).unwrap().values))
        .collect();
    let top2 = pca_trajectory(&ckpts, 500).unwrap().explained_top2();
    let spikes = loss_spike_steps(&out.trace.train_loss(), DEFAULT_SPIKE_FACTOR);
    let mut min_cos = f64::INFINITY;
    let mut checked = 0;
    for row in &out.trace.rows {
        if spikes.binary_search(&row.step).is_err() {
            if let Some(c) = row.cos_prev {
                min_cos = min_cos.min(c);
                checked += 1;
            }
        }
    }
    let ok = plane_err <= 1e-9 && top2 >= 0.9 && min_cos >= 0.999 && out.marks.t4.is_some();
    report(
        11,
        "trajectory analysis",
        ok,
        &format!(
            "planar PCA |explained-1| {plane_err:.2e} <= 1e-9; grokking run ({} checkpoints) top-2 explained {top2:.4} >= 0.9; \
             min cos(theta_t, theta_t+1) {min_cos:.6} >= 0.999 over {checked} steps ({} spike steps excluded)",
            ckpts.len(),
            spikes.len()
        ),
    );
}

#[test]
fn criterion_12_clipping() {
    let unclipped = fast_run().outcome.marks;
    let clipped = {
        let _g = heavy();
        let mut cfg = fast_config(FAST_R);
        cfg.clip.enabled = true;
        cfg.clip.eta = CLIP_ETA;
        run(&cfg).marks
    };
    let ok = matches!((clipped.t4, unclipped.t4), (Some(c), Some(u)) if c >= u);
    report(
        12,
        "gradient clipping slows but does not prevent grokking",
        ok,
        &format!("t4 clipped (eta={CLIP_ETA}) = {:?} >= t4 unclipped = {:?}", clipped.t4, unclipped.t4),
    );
}
