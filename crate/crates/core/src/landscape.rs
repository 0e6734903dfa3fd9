//! One- and two-dimensional loss slices along filter-normalized directions.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layout, ParamKind};
use crate::objective::{Objective, SplitMetrics};
use crate::tensor::{cosine, norm};

/// Largest `|cos|` accepted between the two directions of a 2D slice.
pub const MAX_ABS_COSINE: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    /// Towards a later (typically final) checkpoint.
    ToOptimum,
    /// Towards the following checkpoint.
    NextStep,
    /// Back towards the initialization.
    ToInit,
    Random,
}

impl DirectionKind {
    pub fn name(self) -> &'static str {
        match self {
            DirectionKind::ToOptimum => "to_optimum",
            DirectionKind::NextStep => "next_step",
            DirectionKind::ToInit => "to_init",
            DirectionKind::Random => "random",
        }
    }
}

impl FromStr for DirectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_optimum" => Ok(Self::ToOptimum),
            "next_step" => Ok(Self::NextStep),
            "to_init" => Ok(Self::ToInit),
            "random" => Ok(Self::Random),
            other => Err(Error::config("kind", format!("unknown direction kind {other:?}"))),
        }
    }
}

/// What to do with a direction filter (or scalar) that is exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroFilterPolicy {
    #[default]
    Error,
    /// Leave the filter at zero.
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    pub kind: DirectionKind,
    /// Step of the checkpoint the direction is anchored at.
    pub anchor: usize,
}

/// Second input to [`make_direction`].
#[derive(Clone, Copy, Debug)]
pub enum DirectionAux<'a> {
    /// θ*, θ_{t+1} or θ₀, depending on the kind.
    Target(&'a [f64]),
    Seed(u64),
}

/// Raw direction before normalization: `target − θ_t`, or a standard normal
/// draw for [`DirectionKind::Random`].
pub fn make_direction(
    kind: DirectionKind,
    theta: &[f64],
    anchor: usize,
    aux: DirectionAux<'_>,
) -> Result<Direction> {
    let values = match (kind, aux) {
        (DirectionKind::Random, DirectionAux::Seed(seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..theta.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        (DirectionKind::Random, DirectionAux::Target(_)) => {
            return Err(Error::config("aux", "a random direction takes a seed"));
        }
        (_, DirectionAux::Seed(_)) => {
            return Err(Error::config("aux", format!("{} needs a target vector", kind.name())));
        }
        (_, DirectionAux::Target(target)) => {
            if target.len() != theta.len() {
                return Err(Error::Shape(format!(
                    "target of length {} for {} parameters",
                    target.len(),
                    theta.len()
                )));
            }
            target.iter().zip(theta).map(|(a, b)| a - b).collect::<Vec<f64>>()
        }
    };
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroDirection(format!("{} at step {anchor}", kind.name())));
    }
    Ok(Direction { values, kind, anchor })
}

/// Rescales each matrix row of `dir` to the norm of the matching row of
/// `theta`; every bias or norm-gain scalar keeps its sign and takes the
/// magnitude of the matching entry of `theta`.
pub fn filter_normalize(
    dir: &Direction,
    theta: &[f64],
    layout: &Layout,
    policy: ZeroFilterPolicy,
) -> Result<Direction> {
    let n = layout.total();
    if dir.values.len() != n || theta.len() != n {
        return Err(Error::Shape(format!(
            "direction {} and parameters {} for a layout of {n}",
            dir.values.len(),
            theta.len()
        )));
    }
    let mut out = dir.values.clone();
    for e in &layout.entries {
        if e.kind.has_filters() {
            for (row, w) in e.filter_boundaries.windows(2).enumerate() {
                let (lo, hi) = (w[0], w[1]);
                let nd = norm(&dir.values[lo..hi]);
                let nt = norm(&theta[lo..hi]);
                if nd == 0.0 {
                    if nt != 0.0 && policy == ZeroFilterPolicy::Error {
                        return Err(Error::ZeroDirection(format!("{} row {row}", e.name)));
                    }
                    continue;
                }
                let s = nt / nd;
                out[lo..hi].iter_mut().for_each(|v| *v *= s);
            }
        } else {
            debug_assert!(matches!(e.kind, ParamKind::Bias | ParamKind::NormGain));
            for i in e.range() {
                let d = dir.values[i];
                let t = theta[i].abs();
                if d == 0.0 {
                    if t != 0.0 && policy == ZeroFilterPolicy::Error {
                        return Err(Error::ZeroDirection(format!("{}[{}]", e.name, i - e.offset)));
                    }
                    out[i] = 0.0;
                } else {
                    out[i] = t.copysign(d);
                }
            }
        }
    }
    Ok(Direction {
        values: out,
        kind: dir.kind,
        anchor: dir.anchor,
    })
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    pub fn default_1d() -> Self {
        Self::new(-3.0, 3.0, 201)
    }

    pub fn default_2d() -> Self {
        Self::new(-1.0, 2.0, 101)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::config(field, format!("need lo < hi, got {}:{}", self.lo, self.hi)));
        }
        if self.n < 2 {
            return Err(Error::config(field, "need at least 2 points"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let last = (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + span * i as f64 / last).collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// Parses `"lo:hi:n"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::config("alphas", format!("expected lo:hi:n, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].trim().parse().map_err(|_| bad())?;
        let hi = parts[1].trim().parse().map_err(|_| bad())?;
        let n = parts[2].trim().parse().map_err(|_| bad())?;
        let g = Self::new(lo, hi, n);
        g.validate("alphas")?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeSlice {
    /// Step of the anchor checkpoint.
    pub anchor: usize,
    pub alphas: Vec<f64>,
    /// Present for 2D slices; values are then row-major, α outer.
    pub betas: Option<Vec<f64>>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
}

impl LandscapeSlice {
    fn from_metrics(anchor: usize, alphas: Vec<f64>, betas: Option<Vec<f64>>, m: Vec<SplitMetrics>) -> Self {
        Self {
            anchor,
            alphas,
            betas,
            train_loss: m.iter().map(|x| x.train_loss).collect(),
            val_loss: m.iter().map(|x| x.val_loss).collect(),
            train_acc: m.iter().map(|x| x.train_acc).collect(),
            val_acc: m.iter().map(|x| x.val_acc).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }
}

fn check_dim(obj: &dyn Objective, theta: &[f64], dirs: &[&Direction]) -> Result<()> {
    let n = obj.dim();
    if theta.len() != n || dirs.iter().any(|d| d.values.len() != n) {
        return Err(Error::Shape(format!("slice inputs do not match the {n}-dim objective")));
    }
    Ok(())
}

/// `f(α) = L(θ + α·δ)` on both splits at every grid point.
pub fn slice_1d(
    obj: &dyn Objective,
    theta: &[f64],
    anchor: usize,
    dir: &Direction,
    alphas: &[f64],
) -> Result<LandscapeSlice> {
    check_dim(obj, theta, &[dir])?;
    if !alphas.contains(&0.0) {
        return Err(Error::config("alphas", "grid must contain 0"));
    }
    let metrics = alphas
        .par_iter()
        .map(|&a| {
            let p: Vec<f64> = theta.iter().zip(&dir.values).map(|(t, d)| t + a * d).collect();
            obj.metrics(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeSlice::from_metrics(anchor, alphas.to_vec(), None, metrics))
}

/// `f(α, β) = L(θ + α·δ + β·η)`, row-major with α outer.
pub fn slice_2d(
    obj: &dyn Objective,
    theta: &[f64],
    anchor: usize,
    delta: &Direction,
    eta: &Direction,
    alphas: &[f64],
    betas: &[f64],
) -> Result<LandscapeSlice> {
    check_dim(obj, theta, &[delta, eta])?;
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::config("alphas", "grids must be non-empty"));
    }
    let c = cosine(&delta.values, &eta.values).ok_or_else(|| Error::ZeroDirection("2D slice".into()))?;
    if c.abs() >= MAX_ABS_COSINE {
        return Err(Error::Collinear(c));
    }
    let grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let metrics = grid
        .par_iter()
        .map(|&(a, b)| {
            let p: Vec<f64> = theta
                .iter()
                .zip(delta.values.iter().zip(&eta.values))
                .map(|(t, (d, e))| t + a * d + b * e)
                .collect();
            obj.metrics(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeSlice::from_metrics(
        anchor,
        alphas.to_vec(),
        Some(betas.to_vec()),
        metrics,
    ))
}

/// Interior grid indices where midpoint convexity fails by more than `tol`.
///
/// On a non-uniform grid the comparison is against the chord between the
/// neighbours evaluated at `α_i`. An empty result means the slice is convex
/// along the segment at grid resolution.
pub fn segment_convexity(alphas: &[f64], values: &[f64], tol: f64) -> Result<Vec<usize>> {
    if alphas.len() != values.len() {
        return Err(Error::Shape(format!("{} alphas for {} values", alphas.len(), values.len())));
    }
    if alphas.len() < 3 {
        return Err(Error::Insufficient(format!("{} grid points (need 3)", alphas.len())));
    }
    let mut out = Vec::new();
    for i in 1..alphas.len() - 1 {
        let (a0, a1, a2) = (alphas[i - 1], alphas[i], alphas[i + 1]);
        let w = (a2 - a1) / (a2 - a0);
        let chord = w * values[i - 1] + (1.0 - w) * values[i + 1];
        if values[i] > chord + tol {
            out.push(i);
        }
    }
    Ok(out)
}

pub fn write_slice_csv<W: std::io::Write>(w: W, s: &LandscapeSlice) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let tail = ["train_loss", "val_loss", "train_acc", "val_acc"];
    match &s.betas {
        None => {
            let mut h = vec!["alpha"];
            h.extend(tail);
            wr.write_record(&h)?;
            for (i, a) in s.alphas.iter().enumerate() {
                wr.write_record([
                    a.to_string(),
                    s.train_loss[i].to_string(),
                    s.val_loss[i].to_string(),
                    s.train_acc[i].to_string(),
                    s.val_acc[i].to_string(),
                ])?;
            }
        }
        Some(betas) => {
            let mut h = vec!["alpha", "beta"];
            h.extend(tail);
            wr.write_record(&h)?;
            let mut i = 0;
            for a in &s.alphas {
                for b in betas {
                    wr.write_record([
                        a.to_string(),
                        b.to_string(),
                        s.train_loss[i].to_string(),
                        s.val_loss[i].to_string(),
                        s.train_acc[i].to_string(),
                        s.val_acc[i].to_string(),
                    ])?;
                    i += 1;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a file written by [`write_slice_csv`]; the anchor is not stored and
/// is set to `anchor`.
pub fn read_slice_csv<R: std::io::Read>(r: R, anchor: usize) -> Result<LandscapeSlice> {
    let mut rd = csv::Reader::from_reader(r);
    let two_d = rd.headers()?.get(1) == Some("beta");
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for rec in rd.records() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Fit(format!("bad number {f:?}: {e}"))))
            .collect::<Result<_>>()?;
        let off = if two_d { 2 } else { 1 };
        if nums.len() != off + 4 {
            return Err(Error::Shape(format!("slice row with {} fields", nums.len())));
        }
        if alphas.last() != Some(&nums[0]) {
            alphas.push(nums[0]);
        }
        if two_d && alphas.len() == 1 {
            betas.push(nums[1]);
        }
        for (c, v) in cols.iter_mut().zip(&nums[off..]) {
            c.push(*v);
        }
    }
    let [train_loss, val_loss, train_acc, val_acc] = cols;
    Ok(LandscapeSlice {
        anchor,
        alphas,
        betas: two_d.then_some(betas),
        train_loss,
        val_loss,
        train_acc,
        val_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Quadratic;

    #[test]
    fn grid_parse_and_points() {
        let g: GridSpec = "-3:3:201".parse().unwrap();
        let p = g.points();
        assert_eq!(p.len(), 201);
        assert_eq!(p[100], 0.0);
        assert_eq!((p[0], p[200]), (-3.0, 3.0));
        assert!("1:0:5".parse::<GridSpec>().is_err());
        assert!("0:1".parse::<GridSpec>().is_err());
        assert!("0:1:1".parse::<GridSpec>().is_err());
    }

    #[test]
    fn convexity_on_cosine() {
        let g = GridSpec::new(0.0, 2.0 * std::f64::consts::PI, 63).points();
        let f: Vec<f64> = g.iter().map(|a| a.cos()).collect();
        let v = segment_convexity(&g, &f, 0.0).unwrap();
        for i in 1..g.len() - 1 {
            let c = g[i].cos();
            if c.abs() > 1e-9 {
                assert_eq!(v.contains(&i), c > 0.0, "alpha {}", g[i]);
            }
        }
        let q: Vec<f64> = g.iter().map(|a| 0.5 * a * a).collect();
        assert!(segment_convexity(&g, &q, 0.0).unwrap().is_empty());
    }

    #[test]
    fn two_d_collinearity_rejected() {
        let q = Quadratic::isotropic(3);
        let d = Direction {
            values: vec![1.0, 0.0, 0.0],
            kind: DirectionKind::Random,
            anchor: 0,
        };
        let r = slice_2d(&q, &[0.0; 3], 0, &d, &d, &[0.0], &[0.0]);
        assert!(matches!(r, Err(Error::Collinear(_))));
    }

    #[test]
    fn slice_requires_zero_in_grid() {
        let q = Quadratic::isotropic(2);
        let d = Direction {
            values: vec![1.0, 0.0],
            kind: DirectionKind::Random,
            anchor: 0,
        };
        assert!(slice_1d(&q, &[0.0; 2], 0, &d, &[0.5, 1.0]).is_err());
    }
}
