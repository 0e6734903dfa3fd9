//! First-order optimizers, linear warmup, and gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Sgd,
    Momentum,
    Rmsprop,
    Rprop,
    Adam,
    Adamax,
    Adamw,
}

impl Algo {
    pub const ALL: [Algo; 7] = [
        Algo::Sgd,
        Algo::Momentum,
        Algo::Rmsprop,
        Algo::Rprop,
        Algo::Adam,
        Algo::Adamax,
        Algo::Adamw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Sgd => "sgd",
            Algo::Momentum => "momentum",
            Algo::Rmsprop => "rmsprop",
            Algo::Rprop => "rprop",
            Algo::Adam => "adam",
            Algo::Adamax => "adamax",
            Algo::Adamw => "adamw",
        }
    }
}

fn d_betas() -> (f64, f64) {
    (0.9, 0.98)
}
fn d_momentum() -> f64 {
    0.9
}
fn d_alpha() -> f64 {
    0.99
}
fn d_etas() -> (f64, f64) {
    (0.5, 1.2)
}
fn d_bounds() -> (f64, f64) {
    (1e-6, 50.0)
}
fn d_eps() -> f64 {
    1e-8
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algo: Algo,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_betas")]
    pub betas: (f64, f64),
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    /// RMSProp smoothing constant.
    #[serde(default = "d_alpha")]
    pub rmsprop_alpha: f64,
    /// Rprop step multipliers `(η⁻, η⁺)`.
    #[serde(default = "d_etas")]
    pub rprop_etas: (f64, f64),
    #[serde(default = "d_bounds")]
    pub rprop_step_bounds: (f64, f64),
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_true")]
    pub decay_embeddings: bool,
}

impl OptimizerConfig {
    pub fn new(algo: Algo, lr: f64) -> Self {
        Self {
            algo,
            lr,
            weight_decay: 0.0,
            betas: d_betas(),
            momentum: d_momentum(),
            rmsprop_alpha: d_alpha(),
            rprop_etas: d_etas(),
            rprop_step_bounds: d_bounds(),
            eps: d_eps(),
            decay_embeddings: true,
        }
    }

    /// AdamW, lr 1e-4, weight decay 1, betas (0.9, 0.98).
    pub fn reference() -> Self {
        Self {
            weight_decay: 1.0,
            ..Self::new(Algo::Adamw, 1e-4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = |name: &str| format!("optimizer.{name}");
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(f("lr"), format!("must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(f("weight_decay"), "must be non-negative"));
        }
        for (name, b) in [("betas.0", self.betas.0), ("betas.1", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(f(name), format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(f("momentum"), "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            return Err(Error::config(f("rmsprop_alpha"), "must lie in [0, 1)"));
        }
        let (dn, up) = self.rprop_etas;
        if !(0.0 < dn && dn < 1.0 && up > 1.0) {
            return Err(Error::config(f("rprop_etas"), "need 0 < eta- < 1 < eta+"));
        }
        let (lo, hi) = self.rprop_step_bounds;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::config(f("rprop_step_bounds"), "need 0 < min <= max"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(f("eps"), "must be positive"));
        }
        Ok(())
    }
}

fn d_warmup() -> usize {
    10
}

/// Linear warmup to `base_lr`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    pub base_lr: f64,
}

impl Schedule {
    pub fn new(base_lr: f64, warmup_steps: usize) -> Self {
        Self {
            warmup_steps,
            base_lr,
        }
    }

    pub fn constant(base_lr: f64) -> Self {
        Self::new(base_lr, 0)
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * t as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub enabled: bool,
    pub eta: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            eta: 1.0,
        }
    }
}

impl ClipConfig {
    pub fn apply(&self, grad: &mut [f64]) {
        if self.enabled {
            clip_grad_norm(grad, self.eta);
        }
    }
}

/// Rescales `grad` in place to norm at most `eta`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], eta: f64) -> f64 {
    let n = crate::tensor::norm(grad);
    if n > eta && n > 0.0 {
        let s = eta / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}

/// Per-coordinate optimizer buffers plus the update counter.
#[derive(Clone, Debug)]
pub struct OptState {
    pub t: usize,
    /// First moment, momentum buffer, or Rprop step sizes.
    pub m: Vec<f64>,
    /// Second moment, infinity norm, or Rprop previous gradient.
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    decay_mask: Vec<bool>,
    state: OptState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n: usize) -> Result<Self> {
        Self::with_decay_mask(config, vec![true; n])
    }

    /// `decay_mask[i]` selects which coordinates receive weight decay.
    pub fn with_decay_mask(config: OptimizerConfig, decay_mask: Vec<bool>) -> Result<Self> {
        config.validate()?;
        let n = decay_mask.len();
        let m = if config.algo == Algo::Rprop {
            vec![config.lr; n]
        } else {
            vec![0.0; n]
        };
        Ok(Self {
            config,
            decay_mask,
            state: OptState {
                t: 0,
                m,
                v: vec![0.0; n],
            },
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptState {
        &self.state
    }

    /// One update with learning rate `lr`. A non-finite gradient leaves the
    /// state untouched and reports the first offending coordinate.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.decay_mask.len() || grad.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {}, got params {} grad {}",
                self.decay_mask.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient component {i}"),
                step: self.state.t,
            });
        }
        self.state.t += 1;
        let t = self.state.t as f64;
        let c = &self.config;
        let wd = c.weight_decay;
        let (b1, b2) = c.betas;
        let st = &mut self.state;
        for i in 0..params.len() {
            let decay = if self.decay_mask[i] { wd } else { 0.0 };
            let mut g = grad[i];
            if c.algo != Algo::Adamw {
                g += decay * params[i];
            }
            match c.algo {
                Algo::Sgd => params[i] -= lr * g,
                Algo::Momentum => {
                    st.m[i] = if st.t == 1 { g } else { c.momentum * st.m[i] + g };
                    params[i] -= lr * st.m[i];
                }
                Algo::Rmsprop => {
                    let a = c.rmsprop_alpha;
                    st.v[i] = a * st.v[i] + (1.0 - a) * g * g;
                    params[i] -= lr * g / (st.v[i].sqrt() + c.eps);
                }
                Algo::Rprop => {
                    let (dn, up) = c.rprop_etas;
                    let (lo, hi) = c.rprop_step_bounds;
                    let prod = st.v[i] * g;
                    if prod > 0.0 {
                        st.m[i] = (st.m[i] * up).min(hi);
                    } else if prod < 0.0 {
                        st.m[i] = (st.m[i] * dn).max(lo);
                        g = 0.0;
                    }
                    params[i] -= st.m[i] * sign(g);
                    st.v[i] = g;
                }
                Algo::Adam | Algo::Adamw => {
                    if c.algo == Algo::Adamw {
                        params[i] -= lr * decay * params[i];
                    }
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                    let mh = st.m[i] / (1.0 - b1.powf(t));
                    let vh = st.v[i] / (1.0 - b2.powf(t));
                    params[i] -= lr * mh / (vh.sqrt() + c.eps);
                }
                Algo::Adamax => {
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                    st.v[i] = (b2 * st.v[i]).max(g.abs() + c.eps);
                    params[i] -= lr / (1.0 - b1.powf(t)) * st.m[i] / st.v[i];
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn warmup_schedule() {
        let s = Schedule::new(1e-4, 10);
        assert!((s.lr_at(5) - 5e-5).abs() < 1e-20);
        assert_eq!(s.lr_at(10), 1e-4);
        assert_eq!(s.lr_at(10_000), 1e-4);
        assert_eq!(s.lr_at(0), 0.0);
        for t in 0..10 {
            assert!(s.lr_at(t) <= s.lr_at(t + 1));
        }
        assert_eq!(Schedule::constant(0.3).lr_at(0), 0.3);
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![6.0, 8.0];
        clip_grad_norm(&mut g, 1.0);
        assert!((crate::tensor::norm(&g) - 1.0).abs() < 1e-15);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-15);
        let mut g = vec![0.3, 0.4];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![0.0; 3];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn clipping_is_idempotent_and_bounded(g in prop::collection::vec(-100.0f64..100.0, 1..20), eta in 0.01f64..10.0) {
            let mut once = g.clone();
            clip_grad_norm(&mut once, eta);
            prop_assert!(crate::tensor::norm(&once) <= eta * (1.0 + 1e-12));
            let mut twice = once.clone();
            clip_grad_norm(&mut twice, eta);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
        }

        #[test]
        fn zero_gradient_is_a_fixed_point(x in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            for algo in Algo::ALL {
                let mut opt = Optimizer::new(OptimizerConfig::new(algo, 0.1), x.len()).unwrap();
                let mut p = x.clone();
                for _ in 0..3 {
                    opt.step(&mut p, &vec![0.0; x.len()], 0.1).unwrap();
                }
                prop_assert_eq!(&p, &x, "{}", algo.name());
            }
        }
    }

    #[test]
    fn adam_first_step() {
        let mut opt = Optimizer::new(OptimizerConfig::new(Algo::Adam, 0.1), 1).unwrap();
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adamw_decoupled_decay() {
        let mut opt = Optimizer::new(OptimizerConfig::reference(), 1).unwrap();
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.0], 1e-4).unwrap();
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerConfig::new(Algo::Sgd, 0.1), 1).unwrap();
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.5], 0.1).unwrap();
        assert!((p[0] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn decay_mask_respected() {
        let mut cfg = OptimizerConfig::reference();
        cfg.decay_embeddings = false;
        let mut opt = Optimizer::with_decay_mask(cfg, vec![false, true]).unwrap();
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[0.0, 0.0], 1e-2).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1.0);
    }

    #[test]
    fn sgd_on_quadratic_stability_threshold() {
        let lambda = 4.0;
        for (lr, converge) in [(0.4, true), (0.49, true), (0.51, false), (0.7, false)] {
            let mut opt = Optimizer::new(OptimizerConfig::new(Algo::Sgd, lr), 1).unwrap();
            let mut p = vec![1.0];
            let mut prev = 0.5 * lambda;
            for _ in 0..200 {
                let g = [lambda * p[0]];
                opt.step(&mut p, &g, lr).unwrap();
                let loss = 0.5 * lambda * p[0] * p[0];
                if converge {
                    assert!(loss < prev);
                }
                prev = loss;
            }
            assert_eq!(prev < 1e-6, converge, "lr {lr}");
        }
    }

    #[test]
    fn rprop_ignores_gradient_scale() {
        let run = |scale: f64| {
            let mut opt = Optimizer::new(OptimizerConfig::new(Algo::Rprop, 0.01), 2).unwrap();
            let mut p = vec![1.5, -0.7];
            let mut traj = Vec::new();
            for _ in 0..50 {
                let g = [scale * (p[0] - 0.2) * 3.0, scale * (p[1] + 0.1)];
                opt.step(&mut p, &g, 0.01).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(1.0), run(10.0));
    }

    #[test]
    fn non_finite_gradient_faults() {
        let mut opt = Optimizer::new(OptimizerConfig::new(Algo::Adam, 0.1), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        let err = opt.step(&mut p, &[1.0, f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p, vec![0.0, 0.0]);
        assert_eq!(opt.state().t, 0);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = OptimizerConfig::reference();
        c.lr = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("optimizer.lr"));
        let mut c = OptimizerConfig::reference();
        c.betas.1 = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("optimizer.betas.1"));
    }
}
