//! Run configuration: task, model, optimizer, budget, and analysis settings,
//! serialized as JSON. Validation errors name the offending field by path.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curvature::{PowerIterConfig, DEFAULT_PCA_MAX_CHECKPOINTS};
use crate::data::{build_dataset, OpKind};
use crate::error::{Error, Result};
use crate::intrinsic_dim::IdMethod;
use crate::landscape::{DirectionKind, GridSpec, ZeroFilterPolicy};
use crate::model::ModelConfig;
use crate::optim::{ClipConfig, OptimizerConfig, Schedule};
use crate::spectral::{DEFAULT_CUTOFF, DEFAULT_WINDOW};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub op_kind: OpKind,
    pub p: usize,
    pub q: usize,
    #[serde(default)]
    pub symmetric: bool,
    /// Training fraction.
    pub r: f64,
    pub seed: u64,
}

fn d_windows() -> Vec<(usize, usize)> {
    vec![(0, DEFAULT_WINDOW)]
}
fn d_cutoff() -> f64 {
    DEFAULT_CUTOFF
}
fn d_kinds() -> Vec<DirectionKind> {
    vec![DirectionKind::ToOptimum]
}
fn d_grid1() -> GridSpec {
    GridSpec::default_1d()
}
fn d_grid2() -> GridSpec {
    GridSpec::default_2d()
}
fn d_curv_stride() -> usize {
    100
}
fn d_power() -> PowerIterConfig {
    PowerIterConfig {
        tol: 1e-4,
        max_iter: 300,
        seed: 0,
    }
}
fn d_pca_max() -> usize {
    DEFAULT_PCA_MAX_CHECKPOINTS
}
fn d_id_method() -> IdMethod {
    IdMethod::MleInverse
}
fn d_id_k() -> usize {
    2
}
fn d_id_stride() -> usize {
    100
}
fn d_ckpt_stride() -> usize {
    10
}
fn d_warmup() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Half-open step ranges of the training loss to summarize.
    #[serde(default = "d_windows")]
    pub spectral_windows: Vec<(usize, usize)>,
    #[serde(default = "d_cutoff")]
    pub spectral_cutoff: f64,
    /// Analyze `ln(loss)` instead of the raw loss.
    #[serde(default)]
    pub spectral_log: bool,
    #[serde(default = "d_kinds")]
    pub slice_kinds: Vec<DirectionKind>,
    /// Anchor steps; empty means the step where training accuracy saturates,
    /// or step 0 when it never does.
    #[serde(default)]
    pub slice_anchors: Vec<usize>,
    #[serde(default = "d_grid1")]
    pub slice_alphas: GridSpec,
    #[serde(default = "d_grid2")]
    pub slice_grid_2d: GridSpec,
    /// Also write a 2D slice spanned by the first kind and a random direction.
    #[serde(default)]
    pub slice_2d: bool,
    #[serde(default)]
    pub zero_filter_policy: ZeroFilterPolicy,
    #[serde(default)]
    pub slice_seed: u64,
    /// Curvature is evaluated at checkpoints whose step is a multiple of this.
    #[serde(default = "d_curv_stride")]
    pub curvature_stride: usize,
    #[serde(default = "d_power")]
    pub power_iteration: PowerIterConfig,
    #[serde(default = "d_pca_max")]
    pub pca_max_checkpoints: usize,
    #[serde(default = "d_id_method")]
    pub id_method: IdMethod,
    #[serde(default = "d_id_k")]
    pub id_k: usize,
    #[serde(default = "d_id_stride")]
    pub id_stride: usize,
    /// Layer names to track; empty means every layer.
    #[serde(default)]
    pub id_layers: Vec<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all analysis fields have defaults")
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |n: &str| format!("analysis.{n}");
        for (i, &(a, b)) in self.spectral_windows.iter().enumerate() {
            if a >= b || b - a < 8 {
                return Err(Error::config(
                    format!("analysis.spectral_windows[{i}]"),
                    format!("window {a}..{b} must span at least 8 steps"),
                ));
            }
        }
        if !(self.spectral_cutoff > 0.0 && self.spectral_cutoff < 0.5) {
            return Err(Error::config(f("spectral_cutoff"), "must lie in (0, 0.5)"));
        }
        self.slice_alphas.validate(&f("slice_alphas"))?;
        self.slice_grid_2d.validate(&f("slice_grid_2d"))?;
        if self.curvature_stride == 0 {
            return Err(Error::config(f("curvature_stride"), "must be positive"));
        }
        if !(self.power_iteration.tol > 0.0) || self.power_iteration.max_iter == 0 {
            return Err(Error::config(f("power_iteration"), "need tol > 0 and max_iter > 0"));
        }
        if self.pca_max_checkpoints < 3 {
            return Err(Error::config(f("pca_max_checkpoints"), "must be at least 3"));
        }
        if self.id_k < 2 {
            return Err(Error::config(f("id_k"), "must be at least 2"));
        }
        if self.id_stride == 0 {
            return Err(Error::config(f("id_stride"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Linear warmup length of the learning-rate schedule.
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    #[serde(default)]
    pub clip: ClipConfig,
    /// Number of optimizer steps.
    pub budget: usize,
    #[serde(default = "d_ckpt_stride")]
    pub checkpoint_stride: usize,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    /// Transformer with AdamW (lr 1e-4, weight decay 1) on addition mod `p`.
    pub fn reference(p: usize, r: f64, seed: u64, budget: usize) -> Self {
        Self {
            task: TaskConfig {
                op_kind: OpKind::ModAdd,
                p,
                q: p,
                symmetric: false,
                r,
                seed,
            },
            model: ModelConfig::reference_transformer(0, 0),
            optimizer: OptimizerConfig::reference(),
            warmup_steps: d_warmup(),
            clip: ClipConfig::default(),
            budget,
            checkpoint_stride: d_ckpt_stride(),
            analysis: AnalysisConfig::default(),
        }
    }

    /// The fast variant: an embedding MLP on addition mod `p`.
    pub fn fast_mlp(p: usize, r: f64, seed: u64, budget: usize) -> Self {
        Self {
            model: ModelConfig::mlp(FAST_WIDTH, FAST_HIDDEN, 0, 0),
            optimizer: OptimizerConfig {
                weight_decay: FAST_WEIGHT_DECAY,
                ..OptimizerConfig::new(crate::optim::Algo::Adamw, FAST_LR)
            },
            ..Self::reference(p, r, seed, budget)
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.optimizer.lr, self.warmup_steps)
    }

    /// Fills the vocabulary and class count from the task when left at zero.
    pub fn resolved(&self) -> Result<Self> {
        let ds = build_dataset(self.task.op_kind, self.task.p, self.task.q, self.task.symmetric)?;
        let mut c = self.clone();
        if c.model.vocab_size == 0 {
            c.model.vocab_size = ds.vocab_size;
        }
        if c.model.n_classes == 0 {
            c.model.n_classes = self.task.q;
        }
        Ok(c)
    }

    /// Checks every field; errors name the field path (for example `task.r`).
    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        if !(t.r > 0.0 && t.r < 1.0) {
            return Err(Error::config("task.r", format!("must lie in (0, 1), got {}", t.r)));
        }
        if t.p < 2 {
            return Err(Error::config("task.p", "must be at least 2"));
        }
        if t.q < 2 {
            return Err(Error::config("task.q", "must be at least 2"));
        }
        let resolved = self.resolved()?;
        let ds_vocab = build_dataset(t.op_kind, t.p, t.q, t.symmetric)?.vocab_size;
        if resolved.model.vocab_size != ds_vocab {
            return Err(Error::config(
                "model.vocab_size",
                format!("task needs {ds_vocab}, got {}", resolved.model.vocab_size),
            ));
        }
        if resolved.model.n_classes != t.q {
            return Err(Error::config("model.n_classes", format!("must equal task.q = {}", t.q)));
        }
        resolved.model.validate()?;
        self.optimizer.validate()?;
        if self.clip.enabled && !(self.clip.eta > 0.0) {
            return Err(Error::config("clip.eta", "must be positive"));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::config("checkpoint_stride", "must be positive"));
        }
        self.analysis.validate()
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".into() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Settings of the fast embedding-MLP variant.
pub const FAST_WIDTH: usize = 32;
pub const FAST_HIDDEN: usize = 256;
pub const FAST_LR: f64 = 3e-3;
pub const FAST_WEIGHT_DECAY: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_validates_and_round_trips() {
        let c = RunConfig::reference(97, 0.5, 1, 100);
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn bad_r_names_field() {
        let mut c = RunConfig::fast_mlp(7, 0.5, 0, 10);
        c.task.r = 1.5;
        let e = RunConfig::from_json(&c.to_json()).unwrap_err();
        assert!(e.to_string().contains("task.r"), "{e}");
    }

    #[test]
    fn type_errors_carry_paths() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::fast_mlp(7, 0.5, 0, 10).to_json()).unwrap();
        v["optimizer"]["lr"] = serde_json::json!("fast");
        let e = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("optimizer.lr"), "{e}");
    }
}
