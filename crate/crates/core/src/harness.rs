//! Full-batch training with per-step metrics and checkpoints, phase
//! detection, the power-law fit of grokking time against training fraction,
//! the stop rule, and hyperparameter sweeps.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointStore;
use crate::config::RunConfig;
use crate::data::{batch_encode, build_dataset, split, TokenBatch};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Optimizer;
use crate::spectral::grok_score;
use crate::tensor::{cosine, norm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// `‖G_t‖` before any clipping.
    pub grad_norm: f64,
    /// Learning rate of the update that leaves step `t`.
    pub lr: f64,
    /// `cos(θ_t, θ_{t+1})`.
    pub cos_prev: Option<f64>,
    /// `cos(θ_t, θ₀)`.
    pub cos_init: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn train_loss(&self) -> Vec<f64> {
        self.column(|r| r.train_loss)
    }

    pub fn val_acc(&self) -> Vec<f64> {
        self.column(|r| r.val_acc)
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.rows.last().map(|r| r.val_acc)
    }
}

/// Steps adjacent to a sudden rise of the training loss.
///
/// A spike is an update `t → t+1` with `loss[t+1] > factor · loss[t]`; both
/// `t` and `t + 1` are reported, in ascending order.
pub fn loss_spike_steps(train_loss: &[f64], factor: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 0..train_loss.len().saturating_sub(1) {
        if train_loss[t + 1] > factor * train_loss[t] {
            if out.last() != Some(&t) {
                out.push(t);
            }
            out.push(t + 1);
        }
    }
    out
}

pub const DEFAULT_SPIKE_FACTOR: f64 = 1.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMarks {
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub t3: Option<usize>,
    pub t4: Option<usize>,
}

impl PhaseMarks {
    pub fn is_transition(&self, step: usize) -> bool {
        [self.t1, self.t2, self.t3, self.t4].contains(&Some(step))
    }
}

/// Accuracy levels that define the four first-crossing steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub train: f64,
    pub val: f64,
    /// Level that training accuracy must exceed for `t1`.
    pub train_chance: f64,
    /// Level that validation accuracy must exceed for `t3`.
    pub val_chance: f64,
}

/// `1/q + 2σ` with `σ` the binomial standard deviation of a uniform guesser
/// over `n` samples.
pub fn chance_level(q: usize, n: usize) -> f64 {
    let p = 1.0 / q as f64;
    p + 2.0 * (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

impl PhaseThresholds {
    pub fn for_task(q: usize, n_train: usize, n_val: usize) -> Self {
        Self {
            train: 1.0,
            val: 1.0,
            train_chance: chance_level(q, n_train),
            val_chance: chance_level(q, n_val),
        }
    }

    pub fn with_val(mut self, val: f64) -> Self {
        self.val = val;
        self
    }
}

struct PhaseTracker {
    th: PhaseThresholds,
    marks: PhaseMarks,
}

impl PhaseTracker {
    /// Returns true when `row` sets a new mark.
    fn observe(&mut self, row: &TraceRow) -> bool {
        let before = self.marks;
        let m = &mut self.marks;
        let t = row.step;
        if m.t1.is_none() && row.train_acc > self.th.train_chance {
            m.t1 = Some(t);
        }
        if m.t2.is_none() && row.train_acc >= self.th.train {
            m.t2 = Some(t);
        }
        if m.t3.is_none() && row.val_acc > self.th.val_chance {
            m.t3 = Some(t);
        }
        if m.t4.is_none() && row.val_acc >= self.th.val {
            m.t4 = Some(t);
        }
        before != *m
    }
}

pub fn detect_phases(trace: &TrainTrace, th: &PhaseThresholds) -> PhaseMarks {
    let mut tr = PhaseTracker {
        th: *th,
        marks: PhaseMarks::default(),
    };
    for row in &trace.rows {
        tr.observe(row);
    }
    tr.marks
}

/// Batches, model, and initial parameters derived from a config.
pub struct Prepared {
    pub config: RunConfig,
    pub model: Model,
    pub train: TokenBatch,
    pub val: TokenBatch,
    pub theta0: Vec<f64>,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved()?;
        let t = &config.task;
        let ds = build_dataset(t.op_kind, t.p, t.q, t.symmetric)?;
        let sp = split(&ds, t.r, t.seed)?;
        let train = batch_encode(&sp.train, &ds)?;
        let val = batch_encode(&sp.val, &ds)?;
        let model = Model::new(config.model.clone())?;
        let theta0 = model.init_params(t.seed).values;
        Ok(Self {
            config,
            model,
            train,
            val,
            theta0,
        })
    }

    pub fn thresholds(&self) -> PhaseThresholds {
        PhaseThresholds::for_task(self.config.task.q, self.train.len(), self.val.len())
    }
}

pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub marks: PhaseMarks,
    pub store: CheckpointStore,
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training stopped at step {step}: {source}")]
pub struct TrainFailure {
    pub step: usize,
    pub trace: TrainTrace,
    #[source]
    pub source: Error,
}

/// Full-batch training for `config.budget` steps.
///
/// Row `t` of the trace holds the metrics of `θ_t`, so a budget of `B` gives
/// rows `0..B`. Checkpoints are written at multiples of the stride, at each
/// phase transition, and at the final step `B`.
pub fn train(config: &RunConfig, mut store: CheckpointStore) -> std::result::Result<TrainOutcome, TrainFailure> {
    let fail = |step, trace: &TrainTrace, source| TrainFailure {
        step,
        trace: trace.clone(),
        source,
    };
    let empty = TrainTrace::default();
    let prep = Prepared::new(config).map_err(|e| fail(0, &empty, e))?;
    let cfg = &prep.config;
    let layout = prep.model.layout().clone();
    let mask = layout.decay_mask(cfg.optimizer.decay_embeddings);
    let mut opt = Optimizer::with_decay_mask(cfg.optimizer.clone(), mask).map_err(|e| fail(0, &empty, e))?;
    let schedule = cfg.schedule();
    let mut tracker = PhaseTracker {
        th: prep.thresholds(),
        marks: PhaseMarks::default(),
    };
    let stride = cfg.checkpoint_stride;
    let theta0 = prep.theta0.clone();
    let mut theta = theta0.clone();
    let mut trace = TrainTrace::default();
    store.save(0, &theta).map_err(|e| fail(0, &trace, e))?;

    for t in 0..cfg.budget {
        let (rep, mut grad) = prep
            .model
            .loss_and_grad(&theta, &prep.train)
            .map_err(|e| fail(t, &trace, e))?;
        let val = prep.model.forward_loss(&theta, &prep.val).map_err(|e| fail(t, &trace, e))?;
        for (what, v) in [("train loss", rep.loss), ("val loss", val.loss)] {
            if !v.is_finite() {
                let e = Error::NonFinite { what: what.into(), step: t };
                return Err(fail(t, &trace, e));
            }
        }
        let grad_norm = norm(&grad);
        let lr = schedule.lr_at(t + 1);
        cfg.clip.apply(&mut grad);
        let prev = theta.clone();
        opt.step(&mut theta, &grad, lr).map_err(|e| fail(t, &trace, e))?;
        let row = TraceRow {
            step: t,
            train_loss: rep.loss,
            val_loss: val.loss,
            train_acc: rep.accuracy,
            val_acc: val.accuracy,
            grad_norm,
            lr,
            cos_prev: cosine(&prev, &theta),
            cos_init: cosine(&prev, &theta0),
        };
        let transition = tracker.observe(&row);
        trace.rows.push(row);
        if t > 0 && (t % stride == 0 || transition) {
            store.save(t, &prev).map_err(|e| fail(t, &trace, e))?;
        }
    }
    if cfg.budget > 0 {
        store
            .save(cfg.budget, &theta)
            .map_err(|e| fail(cfg.budget, &trace, e))?;
    }
    Ok(TrainOutcome {
        trace,
        marks: tracker.marks,
        store,
    })
}

pub const METRICS_HEADER: [&str; 9] = [
    "step",
    "train_loss",
    "val_loss",
    "train_acc",
    "val_acc",
    "grad_norm",
    "lr",
    "cos_prev",
    "cos_init",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, trace: &TrainTrace) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRICS_HEADER)?;
    for r in &trace.rows {
        wr.write_record([
            r.step.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
            r.grad_norm.to_string(),
            r.lr.to_string(),
            opt(r.cos_prev),
            opt(r.cos_init),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<TrainTrace> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(TrainTrace { rows })
}

pub fn read_metrics_file(path: impl AsRef<Path>) -> Result<TrainTrace> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.display().to_string()));
    }
    read_metrics_csv(std::fs::File::open(path)?)
}

/// `t₄(r) = a·r^(−γ) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub gamma: f64,
    pub b: f64,
    /// Root-mean-square residual over the fitted points.
    pub residual_rms: f64,
    pub points: Vec<(f64, f64)>,
    /// False when the data carry no information about `γ` (a flat curve).
    pub gamma_identified: bool,
}

impl PowerLawFit {
    pub fn predict(&self, r: f64) -> f64 {
        self.a * r.powf(-self.gamma) + self.b
    }

    pub fn r_min(&self) -> f64 {
        self.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
    }

    /// Strictly decreasing in `r` on `(0, ∞)`.
    pub fn is_decreasing(&self) -> bool {
        self.gamma_identified && self.a > 0.0 && self.gamma > 0.0
    }
}

/// Linear least squares for `(a, b)` at fixed `γ`; returns `(a, b, ssr)`.
fn profile(points: &[(f64, f64)], gamma: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(r, _)| r.powf(-gamma)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, (_, y)) in xs.iter().zip(points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let ssr = xs
        .iter()
        .zip(points)
        .map(|(x, (_, y))| (y - a * x - b).powi(2))
        .sum();
    (a, b, ssr)
}

fn ssr_of(points: &[(f64, f64)], a: f64, g: f64, b: f64) -> f64 {
    points.iter().map(|(r, y)| (y - a * r.powf(-g) - b).powi(2)).sum()
}

const GAMMA_GRID: [f64; 17] = [
    0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0,
];

/// Least-squares fit of `t₄(r) = a·r^(−γ) + b`.
///
/// `γ` starts from the best point of a coarse grid, is refined by a
/// golden-section search of the profile residual (with `a, b` solved
/// linearly at each `γ`), and all three parameters are then polished by
/// damped Gauss–Newton.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("{} points (need at least 3)", points.len())));
    }
    for &(r, t) in points {
        if !(r > 0.0 && r < 1.0) || !(t > 0.0 && t.is_finite()) {
            return Err(Error::Fit(format!("point ({r}, {t}) outside r in (0,1), t4 > 0")));
        }
    }
    let r0 = points[0].0;
    if points.iter().all(|p| p.0 == r0) {
        return Err(Error::Fit("all points share the same r; the curve is not identifiable".into()));
    }
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);

    let grid: Vec<(f64, f64)> = GAMMA_GRID.iter().map(|&g| (g, profile(points, g).2)).collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| grid[i].1.total_cmp(&grid[j].1))
        .expect("non-empty grid");
    let lo = if best == 0 { 0.05 } else { grid[best - 1].0 };
    let hi = if best + 1 == grid.len() { 64.0 } else { grid[best + 1].0 };
    let mut gamma = golden_section(|g| profile(points, g).2, lo, hi, 200);
    let (mut a, mut b, mut ssr) = profile(points, gamma);

    // Damped Gauss-Newton on (a, γ, b).
    let mut damping = 1e-3;
    for _ in 0..200 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(r, y) in points {
            let x = r.powf(-gamma);
            let j = Vector3::new(x, -a * r.ln() * x, 1.0);
            let res = y - a * x - b;
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj;
            for k in 0..3 {
                m[(k, k)] += damping * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = m.lu().solve(&jtr) else {
                damping *= 10.0;
                continue;
            };
            let (na, ng, nb) = (a + delta[0], gamma + delta[1], b + delta[2]);
            let nssr = if ng > 0.0 { ssr_of(points, na, ng, nb) } else { f64::INFINITY };
            if nssr.is_finite() && nssr < ssr {
                let done = (ssr - nssr) <= 1e-30 * scale * scale;
                (a, gamma, b, ssr) = (na, ng, nb, nssr);
                damping = (damping / 10.0).max(1e-12);
                improved = !done;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite() && gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Fit(format!("fit diverged: a={a}, gamma={gamma}, b={b}")));
    }
    let rs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let (rmin, rmax) = rs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    let spread = (a * (rmin.powf(-gamma) - rmax.powf(-gamma))).abs();
    let gamma_identified = spread > 1e-9 * scale.max(1.0);
    Ok(PowerLawFit {
        a,
        gamma,
        b,
        residual_rms: (ssr / points.len() as f64).sqrt(),
        points: points.to_vec(),
        gamma_identified,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_steps: u64,
    /// `r` lies below the smallest fitted training fraction.
    pub out_of_domain: bool,
}

/// `ceil(a·r^(−γ) + b) + ε`, saturating at `u64::MAX`.
pub fn stop_rule(fit: &PowerLawFit, r: f64, epsilon: u64) -> Result<StopRule> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::config("r", format!("must lie in (0, 1), got {r}")));
    }
    let t = fit.predict(r).ceil();
    let base = if t.is_finite() && t < u64::MAX as f64 {
        t.max(0.0) as u64
    } else {
        u64::MAX
    };
    Ok(StopRule {
        max_steps: base.saturating_add(epsilon),
        out_of_domain: r < fit.r_min(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lr: f64,
    pub weight_decay: f64,
    pub r: f64,
    pub seed: u64,
}

/// Row-major product of the four axes: lr outermost, seed innermost.
pub fn grid(lrs: &[f64], wds: &[f64], rs: &[f64], seeds: &[u64]) -> Vec<SweepCell> {
    let mut out = Vec::new();
    for &lr in lrs {
        for &weight_decay in wds {
            for &r in rs {
                for &seed in seeds {
                    out.push(SweepCell {
                        lr,
                        weight_decay,
                        r,
                        seed,
                    });
                }
            }
        }
    }
    out
}

impl SweepCell {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.optimizer.lr = self.lr;
        c.optimizer.weight_decay = self.weight_decay;
        c.task.r = self.r;
        c.task.seed = self.seed;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub final_val_acc: f64,
    pub marks: PhaseMarks,
    /// Activity of the first spectral window; absent when the run is shorter.
    pub activity: Option<f64>,
    pub grokked: bool,
}

pub fn summarize(config: &RunConfig, trace: &TrainTrace, marks: &PhaseMarks) -> RunSummary {
    let a = &config.analysis;
    let window = a.spectral_windows.first().map(|w| w.1).unwrap_or(crate::spectral::DEFAULT_WINDOW);
    let activity = grok_score(&trace.train_loss(), window, a.spectral_cutoff, a.spectral_log).ok();
    RunSummary {
        config_hash: config.hash(),
        final_val_acc: trace.final_val_acc().unwrap_or(0.0),
        marks: *marks,
        activity,
        grokked: marks.t4.is_some(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub result: std::result::Result<RunSummary, String>,
}

/// Trains every cell of `cells` on top of `base`, `workers` at a time.
///
/// Results keep the order of `cells`; a failing cell records its error and
/// the others continue. Checkpoints are kept in memory and only at the
/// phase transitions and the ends.
pub fn sweep(base: &RunConfig, cells: &[SweepCell], workers: usize) -> Result<Vec<SweepRow>> {
    if cells.is_empty() {
        return Err(Error::config("grid", "sweep grid is empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let mut cfg = cell.apply(base);
                cfg.checkpoint_stride = cfg.budget.max(1);
                let result = cfg
                    .resolved()
                    .map_err(|e| e.to_string())
                    .and_then(|c| {
                        let store = CheckpointStore::in_memory(
                            Model::new(c.model.clone()).map_err(|e| e.to_string())?.layout().clone(),
                        );
                        train(&c, store).map_err(|e| e.to_string())
                    })
                    .map(|out| summarize(&cfg, &out.trace, &out.marks));
                SweepRow { cell: *cell, result }
            })
            .collect()
    }))
}

pub const SWEEP_HEADER: [&str; 11] = [
    "lr",
    "weight_decay",
    "r",
    "seed",
    "final_val_acc",
    "t1",
    "t2",
    "t3",
    "t4",
    "activity",
    "error",
];

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SWEEP_HEADER)?;
    for row in rows {
        let c = &row.cell;
        let mut rec = vec![c.lr.to_string(), c.weight_decay.to_string(), c.r.to_string(), c.seed.to_string()];
        match &row.result {
            Ok(s) => {
                rec.push(s.final_val_acc.to_string());
                for m in [s.marks.t1, s.marks.t2, s.marks.t3, s.marks.t4] {
                    rec.push(opt_usize(m));
                }
                rec.push(opt(s.activity));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat(String::new()).take(6));
                rec.push(e.clone());
            }
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// One parsed `sweep.csv` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lr: f64,
    pub weight_decay: f64,
    pub r: f64,
    pub seed: u64,
    pub final_val_acc: Option<f64>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub t3: Option<usize>,
    pub t4: Option<usize>,
    pub activity: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}
