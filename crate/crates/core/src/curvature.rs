//! Extremal Hessian eigenvalues by shifted power iteration, the ratio
//! `λ_min / λ_max`, the second-order SGD step check, trajectory PCA and
//! cosine tracks.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::tensor::{cosine, dot, matmul, norm, Tensor};

pub const DEFAULT_PCA_MAX_CHECKPOINTS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIterConfig {
    /// Bound on the eigen-residual `‖Hv − λv‖` for unit `v`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureEstimate {
    pub max: Eigenpair,
    pub min: Eigenpair,
}

impl CurvatureEstimate {
    pub fn lambda_max(&self) -> f64 {
        self.max.value
    }

    pub fn lambda_min(&self) -> f64 {
        self.min.value
    }

    /// `λ_min / λ_max`, undefined when `λ_max = 0`. This is the reciprocal of
    /// the classical condition number.
    pub fn eig_ratio(&self) -> Option<f64> {
        (self.max.value != 0.0).then(|| self.min.value / self.max.value)
    }
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::NonFinite {
            what: "power-iteration vector".into(),
            step: 0,
        });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Dominant eigenpair of `op` by power iteration with Rayleigh quotients.
fn power_iteration<F>(op: F, start: Vec<f64>, cfg: &PowerIterConfig) -> Result<Eigenpair>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut v = unit(start)?;
    let mut av = op(&v)?;
    let mut lambda = dot(&v, &av);
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        residual = av.iter().zip(&v).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt();
        if residual <= cfg.tol {
            return Ok(Eigenpair {
                value: lambda,
                vector: v,
                iterations: it,
                residual,
                converged: true,
            });
        }
        if norm(&av) == 0.0 {
            // v lies in the null space; zero is the dominant eigenvalue only
            // if the operator vanishes, which the residual above already caught.
            break;
        }
        v = unit(av)?;
        av = op(&v)?;
        lambda = dot(&v, &av);
    }
    Ok(Eigenpair {
        value: lambda,
        vector: v,
        iterations: cfg.max_iter,
        residual,
        converged: false,
    })
}

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Largest and smallest Hessian eigenvalues of the training loss at `theta`.
///
/// Power iteration on `H` finds the eigenvalue `μ` of largest magnitude. If
/// `μ ≥ 0` it is `λ_max` and a second run on `μI − H` gives `λ_min`;
/// otherwise `μ = λ_min` and the second run is on `H − μI`.
pub fn extremal_eigs(obj: &dyn Objective, theta: &[f64], cfg: &PowerIterConfig) -> Result<CurvatureEstimate> {
    let n = obj.dim();
    if theta.len() != n {
        return Err(Error::Shape(format!("{} parameters for a {n}-dim objective", theta.len())));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    let h = |v: &[f64]| obj.hvp(theta, v);
    let first = power_iteration(h, start_vector(n, cfg.seed), cfg)?;
    let mu = first.value;
    let sign = if mu >= 0.0 { -1.0 } else { 1.0 };
    // Shifted operator s·H − s·μ·I with s = −1 for μ ≥ 0 and s = +1 otherwise;
    // its spectrum is non-negative and its top eigenvalue sits at the other end.
    let shifted = |v: &[f64]| -> Result<Vec<f64>> {
        let hv = obj.hvp(theta, v)?;
        Ok(hv.iter().zip(v).map(|(a, x)| sign * (a - mu * x)).collect())
    };
    let second = power_iteration(shifted, start_vector(n, cfg.seed.wrapping_add(1)), cfg)?;
    let other = Eigenpair {
        value: mu + sign * second.value,
        ..second
    };
    let (max, min) = if mu >= 0.0 { (first, other) } else { (other, first) };
    Ok(CurvatureEstimate { max, min })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionPoint {
    pub step: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// `λ_min / λ_max`; `None` when `λ_max = 0`.
    pub eig_ratio: Option<f64>,
    pub converged_max: bool,
    pub converged_min: bool,
}

/// Extremal curvature at each `(step, θ)`; checkpoints run in parallel.
pub fn condition_track(
    obj: &dyn Objective,
    checkpoints: &[(usize, Vec<f64>)],
    cfg: &PowerIterConfig,
) -> Result<Vec<ConditionPoint>> {
    if checkpoints.is_empty() {
        return Err(Error::Insufficient("no checkpoints for the condition track".into()));
    }
    checkpoints
        .par_iter()
        .map(|(step, theta)| {
            let e = extremal_eigs(obj, theta, cfg)?;
            Ok(ConditionPoint {
                step: *step,
                lambda_max: e.lambda_max(),
                lambda_min: e.lambda_min(),
                eig_ratio: e.eig_ratio(),
                converged_max: e.max.converged,
                converged_min: e.min.converged,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionCheck {
    pub step_size: f64,
    /// `−ε‖G‖² + ½ε² GᵀHG`.
    pub predicted: f64,
    /// `L(θ − εG) − L(θ)`.
    pub actual: f64,
    pub gap: f64,
    /// `|gap| / ε²`.
    pub gap_over_eps2: f64,
}

/// Compares a plain gradient step's loss change with its second-order
/// prediction.
pub fn sgd_expansion_check(obj: &dyn Objective, theta: &[f64], step_size: f64) -> Result<ExpansionCheck> {
    let (l0, g) = obj.loss_grad(theta)?;
    let hg = obj.hvp(theta, &g)?;
    let next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step_size * gi).collect();
    let (l1, _) = obj.loss_grad(&next)?;
    let predicted = -step_size * dot(&g, &g) + 0.5 * step_size * step_size * dot(&g, &hg);
    let actual = l1 - l0;
    let gap = (actual - predicted).abs();
    Ok(ExpansionCheck {
        step_size,
        predicted,
        actual,
        gap,
        gap_over_eps2: gap / (step_size * step_size),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPca {
    /// Two orthonormal directions in parameter space.
    pub directions: [Vec<f64>; 2],
    pub steps: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Share of `‖M‖²_F` captured by each direction.
    pub explained: [f64; 2],
}

impl TrajectoryPca {
    pub fn explained_top2(&self) -> f64 {
        self.explained[0] + self.explained[1]
    }
}

/// Indices of at most `max` entries spread uniformly over `0..n`, keeping
/// both ends.
pub fn thin_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max || max < 2 {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = (0..max)
        .map(|i| ((i as f64) * (n - 1) as f64 / (max - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// PCA of `M = [θ_t − θ_T]` where `θ_T` is the last checkpoint.
///
/// The top singular directions come from the `m × m` Gram matrix `MMᵀ`, so no
/// parameter-sized covariance is formed. The last checkpoint is projected too
/// and sits at the origin.
pub fn pca_trajectory(checkpoints: &[(usize, Vec<f64>)], max_checkpoints: usize) -> Result<TrajectoryPca> {
    if checkpoints.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} checkpoints for PCA (need 3)",
            checkpoints.len()
        )));
    }
    let keep = thin_indices(checkpoints.len(), max_checkpoints.max(3));
    let (_, last) = &checkpoints[*keep.last().expect("non-empty")];
    let n = last.len();
    if checkpoints.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::Shape("checkpoints of different sizes".into()));
    }
    let rows = &keep[..keep.len() - 1];
    let m = rows.len();
    let mut flat = Vec::with_capacity(m * n);
    for &i in rows {
        flat.extend(checkpoints[i].1.iter().zip(last).map(|(a, b)| a - b));
    }
    let mt = Tensor::new(vec![m, n], flat);
    let gram = matmul(&mt, &mt, false, true);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(m, m, gram.data()));
    let total: f64 = (0..m).map(|i| gram.data()[i * m + i]).sum();
    if !(total > 0.0) {
        return Err(Error::Insufficient("trajectory does not move".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut directions: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    let mut explained = [0.0; 2];
    for (k, &j) in order.iter().take(2).enumerate() {
        let s2 = eig.eigenvalues[j].max(0.0);
        explained[k] = (s2 / total).clamp(0.0, 1.0);
        if s2 <= total * 1e-24 {
            continue;
        }
        // d = Mᵀu / σ
        let u: Vec<f64> = (0..m).map(|i| eig.eigenvectors[(i, j)]).collect();
        let ut = Tensor::new(vec![1, m], u);
        let d = matmul(&ut, &mt, false, false).into_data();
        let nd = norm(&d);
        directions[k] = d.into_iter().map(|x| x / nd).collect();
    }
    let mut steps = Vec::with_capacity(keep.len());
    let mut alpha = Vec::with_capacity(keep.len());
    let mut beta = Vec::with_capacity(keep.len());
    for &i in &keep {
        let (step, theta) = &checkpoints[i];
        let diff: Vec<f64> = theta.iter().zip(last).map(|(a, b)| a - b).collect();
        steps.push(*step);
        alpha.push(dot(&diff, &directions[0]));
        beta.push(dot(&diff, &directions[1]));
    }
    Ok(TrajectoryPca {
        directions,
        steps,
        alpha,
        beta,
        explained,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosinePoint {
    pub step: usize,
    /// `cos(θ_t, θ_next)`; absent for the last checkpoint.
    pub cos_next: Option<f64>,
    pub cos_init: Option<f64>,
}

pub fn cosine_track(checkpoints: &[(usize, Vec<f64>)]) -> Result<Vec<CosinePoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::Insufficient("cosine track needs 2 checkpoints".into()));
    }
    let init = &checkpoints[0].1;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(i, (step, theta))| CosinePoint {
            step: *step,
            cos_next: checkpoints.get(i + 1).and_then(|(_, nx)| cosine(theta, nx)),
            cos_init: cosine(theta, init),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curvature_csv<W: std::io::Write>(w: W, rows: &[ConditionPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "step",
        "lambda_max",
        "lambda_min",
        "eig_ratio",
        "converged_max",
        "converged_min",
    ])?;
    for r in rows {
        wr.write_record([
            r.step.to_string(),
            r.lambda_max.to_string(),
            r.lambda_min.to_string(),
            opt(r.eig_ratio),
            r.converged_max.to_string(),
            r.converged_min.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `pca.csv`: a `#`-prefixed line with the explained-variance ratios, then
/// `step,alpha,beta`.
pub fn write_pca_csv<W: std::io::Write>(mut w: W, p: &TrajectoryPca) -> Result<()> {
    writeln!(w, "# explained_variance={},{}", p.explained[0], p.explained[1])?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "alpha", "beta"])?;
    for i in 0..p.steps.len() {
        wr.write_record([p.steps[i].to_string(), p.alpha[i].to_string(), p.beta[i].to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `pca.csv` back as `(explained, rows of (step, alpha, beta))`.
pub fn read_pca_csv<R: std::io::Read>(mut r: R) -> Result<([f64; 2], Vec<(usize, f64, f64)>)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let bad = || Error::Shape(format!("pca.csv header line {first:?}"));
    let ratios = first.strip_prefix("# explained_variance=").ok_or_else(bad)?;
    let (a, b) = ratios.trim().split_once(',').ok_or_else(bad)?;
    let explained = [a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?];
    let mut rd = csv::Reader::from_reader(rest.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok((explained, rows))
}
