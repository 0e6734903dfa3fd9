//! Analytic benchmark objectives (Rosenbrock in two flavours, Rastrigin)
//! and a race that runs several optimizers from a shared start.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Algo, Optimizer, OptimizerConfig};

pub const DEFAULT_REACH_THRESHOLD: f64 = 1e-2;
pub const DEFAULT_RACE_STEPS: usize = 10_000;
pub const ROSENBROCK_START: [f64; 2] = [-2.0, 2.0];
pub const RASTRIGIN_START: [f64; 2] = [2.5, 2.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFnKind {
    /// `Σᵢ 100(x₂ᵢ − x₂ᵢ₋₁²)² + (1 − x₂ᵢ₋₁)²` over disjoint pairs.
    RosenbrockPairwise,
    /// `Σᵢ 100(xᵢ₊₁ − xᵢ²)² + (1 − xᵢ)²` over consecutive coordinates.
    RosenbrockChained,
    /// `a·n + Σᵢ xᵢ² − a·cos(2πxᵢ)`.
    Rastrigin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFnSpec {
    pub kind: TestFnKind,
    pub n: usize,
    #[serde(default = "default_a")]
    pub a: f64,
    /// Report `ln(1 + g)` instead of `g`.
    #[serde(default)]
    pub log_scale: bool,
}

fn default_a() -> f64 {
    10.0
}

impl TestFnSpec {
    pub fn new(kind: TestFnKind, n: usize) -> Self {
        Self {
            kind,
            n,
            a: default_a(),
            log_scale: false,
        }
    }

    pub fn log(mut self) -> Self {
        self.log_scale = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 && self.kind != TestFnKind::Rastrigin {
            return Err(Error::config("n", "Rosenbrock needs at least 2 coordinates"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.kind == TestFnKind::RosenbrockPairwise && self.n % 2 != 0 {
            return Err(Error::config("n", "pairwise Rosenbrock needs an even dimension"));
        }
        Ok(())
    }

    /// Global minimizer.
    pub fn minimizer(&self) -> Vec<f64> {
        match self.kind {
            TestFnKind::Rastrigin => vec![0.0; self.n],
            _ => vec![1.0; self.n],
        }
    }
}

/// Value and exact gradient.
pub fn eval_grad(spec: &TestFnSpec, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    if x.len() != spec.n {
        return Err(Error::Shape(format!("{} coordinates for an {}-dim function", x.len(), spec.n)));
    }
    let n = spec.n;
    let mut g = vec![0.0; n];
    let value = match spec.kind {
        TestFnKind::RosenbrockPairwise => {
            let mut v = 0.0;
            for i in (0..n).step_by(2) {
                let (u, w) = (x[i], x[i + 1]);
                let r = w - u * u;
                v += 100.0 * r * r + (1.0 - u) * (1.0 - u);
                g[i] = -400.0 * u * r - 2.0 * (1.0 - u);
                g[i + 1] = 200.0 * r;
            }
            v
        }
        TestFnKind::RosenbrockChained => {
            let mut v = 0.0;
            for i in 0..n - 1 {
                let r = x[i + 1] - x[i] * x[i];
                v += 100.0 * r * r + (1.0 - x[i]) * (1.0 - x[i]);
                g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
                g[i + 1] += 200.0 * r;
            }
            v
        }
        TestFnKind::Rastrigin => {
            let a = spec.a;
            let mut v = a * n as f64;
            for i in 0..n {
                v += x[i] * x[i] - a * (2.0 * PI * x[i]).cos();
                g[i] = 2.0 * x[i] + 2.0 * PI * a * (2.0 * PI * x[i]).sin();
            }
            v
        }
    };
    if spec.log_scale {
        let s = 1.0 / (1.0 + value);
        g.iter_mut().for_each(|gi| *gi *= s);
        Ok((value.ln_1p(), g))
    } else {
        Ok((value, g))
    }
}

/// The documented per-optimizer race settings.
pub fn default_race_optimizers() -> Vec<OptimizerConfig> {
    let mut momentum = OptimizerConfig::new(Algo::Momentum, 1e-3);
    momentum.momentum = 0.9;
    vec![
        OptimizerConfig::new(Algo::Sgd, 1e-3),
        momentum,
        OptimizerConfig::new(Algo::Rmsprop, 1e-3),
        OptimizerConfig::new(Algo::Rprop, 1e-2),
        OptimizerConfig::new(Algo::Adam, 1e-2),
        OptimizerConfig::new(Algo::Adamax, 1e-2),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaceEntry {
    pub optimizer: OptimizerConfig,
    /// Iterates `x₀ … x_T`; shorter when the run diverged.
    pub trajectory: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub final_error: f64,
    pub reached: bool,
    /// Step at which an iterate or gradient stopped being finite.
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaceResult {
    pub spec: TestFnSpec,
    pub threshold: f64,
    pub entries: Vec<RaceEntry>,
}

impl RaceResult {
    pub fn entry(&self, algo: Algo) -> Option<&RaceEntry> {
        self.entries.iter().find(|e| e.optimizer.algo == algo)
    }
}

fn run_one(spec: &TestFnSpec, cfg: &OptimizerConfig, x0: &[f64], steps: usize, threshold: f64) -> Result<RaceEntry> {
    let star = spec.minimizer();
    let err = |x: &[f64]| x.iter().zip(&star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut opt = Optimizer::new(cfg.clone(), spec.n)?;
    let mut x = x0.to_vec();
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut errors = Vec::with_capacity(steps + 1);
    let mut diverged_at = None;
    for t in 0..=steps {
        let (v, g) = eval_grad(spec, &x)?;
        trajectory.push(x.clone());
        values.push(v);
        errors.push(err(&x));
        if t == steps {
            break;
        }
        if opt.step(&mut x, &g, cfg.lr).is_err() || x.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(t + 1);
            break;
        }
    }
    let final_error = *errors.last().expect("at least x0");
    Ok(RaceEntry {
        optimizer: cfg.clone(),
        trajectory,
        values,
        errors,
        final_error,
        reached: diverged_at.is_none() && final_error <= threshold,
        diverged_at,
    })
}

/// Runs every optimizer from `x0` for `steps` updates at its own constant
/// learning rate.
pub fn race(
    spec: &TestFnSpec,
    optimizers: &[OptimizerConfig],
    x0: &[f64],
    steps: usize,
    threshold: f64,
) -> Result<RaceResult> {
    spec.validate()?;
    if x0.len() != spec.n {
        return Err(Error::Shape(format!("start of length {} for n = {}", x0.len(), spec.n)));
    }
    let entries = optimizers
        .par_iter()
        .map(|c| run_one(spec, c, x0, steps, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(RaceResult {
        spec: *spec,
        threshold,
        entries,
    })
}

/// `race.csv`: optimizer, step, x0..x{n-1}, value, error.
pub fn write_race_csv<W: std::io::Write>(w: W, r: &RaceResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["optimizer".to_string(), "step".to_string()];
    header.extend((0..r.spec.n).map(|i| format!("x{i}")));
    header.extend(["value".to_string(), "error".to_string()]);
    wr.write_record(&header)?;
    for e in &r.entries {
        for (t, x) in e.trajectory.iter().enumerate() {
            let mut rec = vec![e.optimizer.algo.name().to_string(), t.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(e.values[t].to_string());
            rec.push(e.errors[t].to_string());
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Values of a 2-dim function on an `n × n` grid over `[lo, hi]²`, written as
/// `x,y,value` rows with `x` outer.
pub fn write_contour_csv<W: std::io::Write>(w: W, spec: &TestFnSpec, lo: f64, hi: f64, n: usize) -> Result<()> {
    if spec.n != 2 {
        return Err(Error::config("n", "contour dumps need a 2-dim function"));
    }
    if n < 2 || !(lo < hi) {
        return Err(Error::config("grid", "need n >= 2 and lo < hi"));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "value"])?;
    let pt = |i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (pt(i), pt(j));
            let (v, _) = eval_grad(spec, &[x, y])?;
            wr.write_record([x.to_string(), y.to_string(), v.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}
