//! Intrinsic dimension of point clouds: the Levina–Bickel k-NN likelihood
//! estimator (mean or inverse-mean aggregation) and the two-nearest-neighbour
//! ratio estimator, plus per-layer tracking over checkpoints.

use std::collections::HashSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_TWONN_DISCARD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMethod {
    MleMean,
    MleInverse,
    Twonn,
}

impl IdMethod {
    pub fn name(self) -> &'static str {
        match self {
            IdMethod::MleMean => "mle_mean",
            IdMethod::MleInverse => "mle_inverse",
            IdMethod::Twonn => "twonn",
        }
    }
}

impl FromStr for IdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle_mean" => Ok(Self::MleMean),
            "mle_inverse" => Ok(Self::MleInverse),
            "twonn" => Ok(Self::Twonn),
            other => Err(Error::config("method", format!("unknown ID method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MleMode {
    /// Mean of the local estimates.
    Mean,
    /// Inverse of the mean of the inverse local estimates.
    Inverse,
}

/// Row-major points with exact duplicates removed.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    dim: usize,
    duplicates_removed: usize,
}

impl PointCloud {
    /// Keeps the first occurrence of each distinct point.
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form {dim}-dim points", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("point coordinate {i}"),
                step: 0,
            });
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(data.len());
        let mut dropped = 0;
        for p in data.chunks_exact(dim) {
            // +0.0 and −0.0 are the same point
            let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
            if seen.insert(key) {
                kept.extend_from_slice(p);
            } else {
                dropped += 1;
            }
        }
        Ok(Self {
            data: kept,
            dim,
            duplicates_removed: dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub method: IdMethod,
    /// Neighbourhood size for the likelihood estimators; 2 for the ratio one.
    pub k: usize,
    pub value: f64,
    pub n_used: usize,
}

/// Sorted distances to the `k` nearest other points, per point.
pub fn knn_distances(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<f64>>> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::Insufficient(format!("k = {k} neighbours among {n} points")));
    }
    let out: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = cloud.point(i);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d2: f64 = p.iter().zip(cloud.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.len() == k && d2 >= best[k - 1] {
                    continue;
                }
                let pos = best.partition_point(|&x| x <= d2);
                best.insert(pos, d2);
                best.truncate(k);
            }
            best.into_iter().map(f64::sqrt).collect()
        })
        .collect();
    if out.iter().any(|d| d[0] == 0.0) {
        return Err(Error::Shape("zero neighbour distance after deduplication".into()));
    }
    Ok(out)
}

/// Local likelihood estimate `[(1/(k−1)) Σ_{j<k} ln(T_k/T_j)]⁻¹`; infinite
/// when all `k` neighbours are equidistant.
pub fn mle_local(dists: &[f64]) -> f64 {
    let k = dists.len();
    let tk = dists[k - 1];
    let s: f64 = dists[..k - 1].iter().map(|t| (tk / t).ln()).sum();
    (k - 1) as f64 / s
}

/// Aggregates local estimates from precomputed neighbour distances.
///
/// Mean mode skips points whose local estimate is infinite; inverse mode
/// uses every point.
pub fn mle_from_distances(dists: &[Vec<f64>], mode: MleMode) -> Result<IdEstimate> {
    let k = dists.first().map(Vec::len).unwrap_or(0);
    if k < 2 || dists.iter().any(|d| d.len() != k) {
        return Err(Error::Insufficient("need at least 2 neighbour distances per point".into()));
    }
    let (value, n_used, method) = match mode {
        MleMode::Mean => {
            let finite: Vec<f64> = dists.iter().map(|d| mle_local(d)).filter(|m| m.is_finite()).collect();
            let v = finite.iter().sum::<f64>() / finite.len() as f64;
            (v, finite.len(), IdMethod::MleMean)
        }
        MleMode::Inverse => {
            let inv: f64 = dists.iter().map(|d| 1.0 / mle_local(d)).sum::<f64>() / dists.len() as f64;
            (1.0 / inv, dists.len(), IdMethod::MleInverse)
        }
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Insufficient(format!("degenerate neighbourhoods (estimate {value})")));
    }
    Ok(IdEstimate {
        method,
        k,
        value,
        n_used,
    })
}

pub fn mle_id(cloud: &PointCloud, k: usize, mode: MleMode) -> Result<IdEstimate> {
    if k < 2 {
        return Err(Error::config("k", "must be at least 2"));
    }
    mle_from_distances(&knn_distances(cloud, k)?, mode)
}

/// Ratio estimator from the second-to-first neighbour ratios `μ_i`.
///
/// With the ratios sorted ascending and `F_i = i/n`, the dimension is the
/// slope through the origin of `−ln(1 − F_i)` against `ln μ_(i)` over the
/// retained points: `i < n` and `i ≤ n(1 − discard)`.
pub fn twonn_from_ratios(mus: &[f64], discard_top_fraction: f64) -> Result<IdEstimate> {
    if !(0.0..0.5).contains(&discard_top_fraction) {
        return Err(Error::config("discard_top_fraction", "must lie in [0, 0.5)"));
    }
    let n = mus.len();
    if n < 3 {
        return Err(Error::Insufficient(format!("{n} points (need 3)")));
    }
    if mus.iter().any(|m| !(m.is_finite() && *m >= 1.0)) {
        return Err(Error::Shape("neighbour ratios must be finite and at least 1".into()));
    }
    let mut sorted = mus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let cap = (nf * (1.0 - discard_top_fraction)).floor() as usize;
    let keep = cap.min(n - 1);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, mu) in sorted.iter().enumerate().take(keep) {
        let f = (i + 1) as f64 / nf;
        let x = mu.ln();
        let y = -(1.0 - f).ln();
        sxy += x * y;
        sxx += x * x;
    }
    if sxx == 0.0 {
        return Err(Error::Insufficient("all retained neighbour ratios equal 1".into()));
    }
    Ok(IdEstimate {
        method: IdMethod::Twonn,
        k: 2,
        value: sxy / sxx,
        n_used: keep,
    })
}

pub fn twonn_id(cloud: &PointCloud, discard_top_fraction: f64) -> Result<IdEstimate> {
    let d = knn_distances(cloud, 2)?;
    let mus: Vec<f64> = d.iter().map(|t| t[1] / t[0]).collect();
    twonn_from_ratios(&mus, discard_top_fraction)
}

/// Dispatches on `method`; `k` applies to the likelihood estimators.
pub fn estimate(cloud: &PointCloud, method: IdMethod, k: usize) -> Result<IdEstimate> {
    match method {
        IdMethod::MleMean => mle_id(cloud, k, MleMode::Mean),
        IdMethod::MleInverse => mle_id(cloud, k, MleMode::Inverse),
        IdMethod::Twonn => twonn_id(cloud, DEFAULT_TWONN_DISCARD),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdRow {
    pub step: usize,
    pub layer: String,
    pub split: String,
    pub method: IdMethod,
    pub k: usize,
    /// `None` when the layer's cloud is degenerate (for example constant).
    pub value: Option<f64>,
    pub n_used: usize,
}

/// ID of each selected layer's activations at each checkpoint; one point per
/// sample in `batch`.
pub fn layer_id_track(
    model: &Model,
    checkpoints: &[(usize, Vec<f64>)],
    batch: &TokenBatch,
    split: &str,
    layers: &[String],
    method: IdMethod,
    k: usize,
) -> Result<Vec<IdRow>> {
    if batch.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    let known = model.layer_names();
    if let Some(bad) = layers.iter().find(|l| !known.contains(l)) {
        return Err(Error::config("analysis.id_layers", format!("unknown layer {bad:?}")));
    }
    let layers = if layers.is_empty() { &known[..] } else { layers };
    let per_ckpt: Vec<Vec<IdRow>> = checkpoints
        .par_iter()
        .map(|(step, theta)| -> Result<Vec<IdRow>> {
            let acts = model.activations(theta, batch)?;
            let mut rows = Vec::new();
            for (name, t) in acts.into_iter().filter(|(n, _)| layers.contains(n)) {
                let dim = t.last_dim();
                let cloud = PointCloud::new(t.into_data(), dim)?;
                let (value, n_used) = match estimate(&cloud, method, k) {
                    Ok(e) => (Some(e.value), e.n_used),
                    Err(_) => (None, cloud.len()),
                };
                rows.push(IdRow {
                    step: *step,
                    layer: name,
                    split: split.to_string(),
                    method,
                    k: if method == IdMethod::Twonn { 2 } else { k },
                    value,
                    n_used,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_ckpt.into_iter().flatten().collect())
}

/// Shapes of the synthetic test manifolds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// Uniform samples from the unit cube `[0, 1]^d`.
    Hypercube,
    /// Uniform samples from the unit sphere `S^d ⊂ R^(d+1)`.
    Sphere,
    /// Uniform angles on the flat torus, embedded as `(cos φᵢ, sin φᵢ)` pairs in `R^(2d)`.
    Torus,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 3] = [ManifoldKind::Hypercube, ManifoldKind::Sphere, ManifoldKind::Torus];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Hypercube => "hypercube",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Torus => "torus",
        }
    }

    /// Dimension of the flat space the manifold is first drawn in.
    pub fn chart_dim(self, d: usize) -> usize {
        match self {
            ManifoldKind::Hypercube => d,
            ManifoldKind::Sphere => d + 1,
            ManifoldKind::Torus => 2 * d,
        }
    }
}

impl FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("manifold", format!("unknown manifold {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    /// Intrinsic dimension.
    pub d: usize,
    /// Ambient dimension.
    pub ambient: usize,
    pub n: usize,
    pub seed: u64,
}

/// Samples `spec.n` points of the manifold and places them in the ambient
/// space through a random orthonormal frame.
pub fn synthetic_manifold(spec: &ManifoldSpec) -> Result<PointCloud> {
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    let chart = spec.kind.chart_dim(spec.d);
    if spec.d == 0 || spec.n < 3 {
        return Err(Error::config("manifold", "need d >= 1 and n >= 3"));
    }
    if chart > spec.ambient {
        return Err(Error::config(
            "ambient",
            format!("{} of dimension {} needs at least {chart} ambient dimensions", spec.kind.name(), spec.d),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = DMatrix::<f64>::from_fn(spec.ambient, chart, |_, _| rng.sample(StandardNormal));
    let frame = gauss.qr().q();
    let mut local = vec![0.0; chart];
    let mut data = Vec::with_capacity(spec.n * spec.ambient);
    for _ in 0..spec.n {
        match spec.kind {
            ManifoldKind::Hypercube => local.iter_mut().for_each(|v| *v = rng.gen::<f64>()),
            ManifoldKind::Sphere => loop {
                local.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let r = local.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > 1e-12 {
                    local.iter_mut().for_each(|v| *v /= r);
                    break;
                }
            },
            ManifoldKind::Torus => {
                for i in 0..spec.d {
                    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                    local[2 * i] = phi.cos();
                    local[2 * i + 1] = phi.sin();
                }
            }
        }
        for row in 0..spec.ambient {
            data.push((0..chart).map(|c| frame[(row, c)] * local[c]).sum());
        }
    }
    PointCloud::new(data, spec.ambient)
}

/// One manifold of a battery with both estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryRow {
    pub spec: ManifoldSpec,
    pub mle: IdEstimate,
    pub twonn: IdEstimate,
}

/// Runs the likelihood estimator (inverse aggregation, `k` neighbours) and
/// the ratio estimator on every manifold, in parallel.
pub fn id_battery(specs: &[ManifoldSpec], k: usize) -> Result<Vec<BatteryRow>> {
    specs
        .par_iter()
        .map(|spec| {
            let cloud = synthetic_manifold(spec)?;
            let dists = knn_distances(&cloud, k.max(2))?;
            let mle = mle_from_distances(&dists.iter().map(|d| d[..k].to_vec()).collect::<Vec<_>>(), MleMode::Inverse)?;
            let mus: Vec<f64> = dists.iter().map(|t| t[1] / t[0]).collect();
            let twonn = twonn_from_ratios(&mus, DEFAULT_TWONN_DISCARD)?;
            Ok(BatteryRow { spec: *spec, mle, twonn })
        })
        .collect()
}

/// `id_battery.csv`: manifold, d, ambient, n, seed, mle, twonn.
pub fn write_battery_csv<W: std::io::Write>(w: W, rows: &[BatteryRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["manifold", "d", "ambient", "n", "seed", "mle", "twonn"])?;
    for r in rows {
        wr.write_record([
            r.spec.kind.name().to_string(),
            r.spec.d.to_string(),
            r.spec.ambient.to_string(),
            r.spec.n.to_string(),
            r.spec.seed.to_string(),
            r.mle.value.to_string(),
            r.twonn.value.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_id_csv<W: std::io::Write>(w: W, rows: &[IdRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "layer", "split", "method", "k", "value", "n_used"])?;
    for r in rows {
        wr.write_record([
            r.step.to_string(),
            r.layer.clone(),
            r.split.clone(),
            r.method.name().to_string(),
            r.k.to_string(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
            r.n_used.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
