//! Scalar objectives over a flat parameter vector: the network on a fixed
//! pair of batches, and a quadratic toy with a known Hessian.

use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::model::Model;

/// Loss and accuracy on both splits at one parameter point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Curvature and slicing act on the training loss; `metrics` also reports
/// the held-out split.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> Result<f64>;
    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;
    fn metrics(&self, theta: &[f64]) -> Result<SplitMetrics>;
}

pub struct ModelObjective<'a> {
    pub model: &'a Model,
    pub train: &'a TokenBatch,
    pub val: &'a TokenBatch,
}

impl<'a> ModelObjective<'a> {
    pub fn new(model: &'a Model, train: &'a TokenBatch, val: &'a TokenBatch) -> Self {
        Self { model, train, val }
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.model.forward_loss(theta, self.train)?.loss)
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (r, g) = self.model.loss_and_grad(theta, self.train)?;
        Ok((r.loss, g))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.model.hvp(theta, self.train, v)
    }

    fn metrics(&self, theta: &[f64]) -> Result<SplitMetrics> {
        let tr = self.model.forward_loss(theta, self.train)?;
        let va = self.model.forward_loss(theta, self.val)?;
        Ok(SplitMetrics {
            train_loss: tr.loss,
            val_loss: va.loss,
            train_acc: tr.accuracy,
            val_acc: va.accuracy,
        })
    }
}

/// `L(θ) = ½ (θ − c)ᵀ A (θ − c)` with a dense symmetric `A`.
///
/// The held-out loss uses the same form scaled by `val_scale`. Accuracies are
/// `exp(−L)`, a bounded stand-in so toy slices fill every column.
#[derive(Clone, Debug)]
pub struct Quadratic {
    n: usize,
    a: Vec<f64>,
    center: Vec<f64>,
    val_scale: f64,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        if a.len() != n * n {
            return Err(Error::Shape(format!("{} entries for a {n}x{n} matrix", a.len())));
        }
        for i in 0..n {
            for j in 0..i {
                if a[i * n + j] != a[j * n + i] {
                    return Err(Error::Shape(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            n,
            a,
            center,
            val_scale: 1.0,
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        Self {
            n,
            a,
            center: vec![0.0; n],
            val_scale: 1.0,
        }
    }

    /// `½‖θ‖²`.
    pub fn isotropic(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn with_val_scale(mut self, s: f64) -> Self {
        self.val_scale = s;
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            a: self.a.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.a[i * self.n..(i + 1) * self.n].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n {
            return Err(Error::Shape(format!("{} coordinates for a {}-dim quadratic", theta.len(), self.n)));
        }
        Ok(())
    }

    fn offset(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.center).map(|(t, c)| t - c).collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        self.loss_grad(theta).map(|(l, _)| l)
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        let d = self.offset(theta);
        let g = self.apply(&d);
        let l = 0.5 * d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        Ok((l, g))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        self.check(v)?;
        Ok(self.apply(v))
    }

    fn metrics(&self, theta: &[f64]) -> Result<SplitMetrics> {
        let l = self.loss(theta)?;
        let lv = self.val_scale * l;
        Ok(SplitMetrics {
            train_loss: l,
            val_loss: lv,
            train_acc: (-l).exp(),
            val_acc: (-lv).exp(),
        })
    }
}
