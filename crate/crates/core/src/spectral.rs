//! Spectral signature of a loss curve.
//!
//! The series is high-passed (its smooth trend removed), transformed, and
//! summarized by the spectral moments `m₀, m₂, m₄` and the Hjorth parameters
//! `activity = m₀`, `mobility = √(m₂/m₀)`, `complexity = √(m₄/m₂)`.

use std::f64::consts::PI;
use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CUTOFF: f64 = 0.01;
pub const DEFAULT_WINDOW: usize = 400;
const MIN_DETREND_LEN: usize = 8;

fn fft(buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            what: "series value".into(),
            step: i,
        }),
        None => Ok(()),
    }
}

/// Least-squares cubic through `x`, evaluated on the sample grid.
fn cubic_trend(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let span = (n - 1) as f64;
    let basis = |t: usize| {
        let u = 2.0 * t as f64 / span - 1.0;
        [1.0, u, u * u, u * u * u]
    };
    let a = nalgebra::DMatrix::from_fn(n, 4, |i, j| basis(i)[j]);
    let b = nalgebra::DVector::from_column_slice(x);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("svd computed with both factors");
    (0..n)
        .map(|t| basis(t).iter().zip(coef.iter()).map(|(p, c)| p * c).sum())
        .collect()
}

/// High-passed odd extension of `x` (length `2(N−1)`), before mean removal.
fn highpass_extension(x: &[f64], cutoff: f64) -> Result<Vec<f64>> {
    if !(cutoff > 0.0 && cutoff < 0.5) {
        return Err(Error::config("cutoff", format!("must lie in (0, 0.5), got {cutoff}")));
    }
    let n = x.len();
    if n < MIN_DETREND_LEN {
        return Err(Error::Insufficient(format!(
            "series of length {n} (need at least {MIN_DETREND_LEN})"
        )));
    }
    check_finite(x)?;
    let trend = cubic_trend(x);
    let mut resid: Vec<f64> = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    let (r0, r1) = (resid[0], resid[n - 1]);
    let span = (n - 1) as f64;
    for (t, v) in resid.iter_mut().enumerate() {
        *v -= r0 + (r1 - r0) * t as f64 / span;
    }
    // Rounding residue from the fit is not signal.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e3 * f64::EPSILON * scale;
    if resid.iter().all(|v| v.abs() <= floor) {
        resid.iter_mut().for_each(|v| *v = 0.0);
    }

    let m = 2 * (n - 1);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(m);
    buf.extend(resid.iter().map(|&v| Complex::new(v, 0.0)));
    buf.extend((1..n - 1).map(|k| Complex::new(-resid[n - 1 - k], 0.0)));
    fft(&mut buf, false);
    let kc = (cutoff * m as f64).floor() as usize;
    for (k, c) in buf.iter_mut().enumerate() {
        if k.min(m - k) <= kc {
            *c = Complex::new(0.0, 0.0);
        }
    }
    fft(&mut buf, true);
    Ok(buf.iter().map(|c| c.re / m as f64).collect())
}

/// Removes the low-frequency content of `x`, returning `x − lowpass(x)`.
///
/// `cutoff` is in cycles per sample (Nyquist = 0.5). A least-squares cubic
/// and then the line through the remaining endpoint values are subtracted,
/// and the remainder is odd-extended so the transform sees a periodic signal
/// that is continuous in value and slope. Every bin at or below the cutoff
/// is zeroed. The result has zero mean.
pub fn detrend_lowpass(x: &[f64], cutoff: f64) -> Result<Vec<f64>> {
    let ext = highpass_extension(x, cutoff)?;
    let n = x.len();
    let mut out = ext[..n].to_vec();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    Ok(out)
}

/// One-sided energy spectrum normalized so that `Σ energy = Σ x²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram {
    /// Angular frequencies `2πk/N`.
    pub omegas: Vec<f64>,
    pub energies: Vec<f64>,
}

pub fn periodogram(x: &[f64]) -> Result<Periodogram> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("series of length {n}")));
    }
    check_finite(x)?;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft(&mut buf, false);
    let half = n / 2;
    let mut omegas = Vec::with_capacity(half + 1);
    let mut energies = Vec::with_capacity(half + 1);
    for (k, c) in buf.iter().take(half + 1).enumerate() {
        let mirrored = k != 0 && !(n % 2 == 0 && k == half);
        let w = if mirrored { 2.0 } else { 1.0 };
        omegas.push(2.0 * PI * k as f64 / n as f64);
        energies.push(w * c.norm_sqr() / n as f64);
    }
    Ok(Periodogram { omegas, energies })
}

impl Periodogram {
    /// `Σ ωₖⁿ · energyₖ`.
    pub fn moment(&self, n: i32) -> f64 {
        self.omegas
            .iter()
            .zip(&self.energies)
            .map(|(w, e)| w.powi(n) * e)
            .sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSignature {
    pub activity: f64,
    /// `None` when `m₀ = 0`.
    pub mobility: Option<f64>,
    /// `None` when `m₂ = 0`.
    pub complexity: Option<f64>,
    pub m0: f64,
    pub m2: f64,
    pub m4: f64,
    pub window: (usize, usize),
    pub cutoff: f64,
}

pub fn signature_of(p: &Periodogram, window: (usize, usize), cutoff: f64) -> SpectralSignature {
    let m0 = p.moment(0);
    let m2 = p.moment(2);
    let m4 = p.moment(4);
    SpectralSignature {
        activity: m0,
        mobility: (m0 > 0.0).then(|| (m2 / m0).sqrt()),
        complexity: (m2 > 0.0).then(|| (m4 / m2).sqrt()),
        m0,
        m2,
        m4,
        window,
        cutoff,
    }
}

/// Spectrum of the detrended series used for the Hjorth parameters.
///
/// The transform is taken over the odd extension built by the detrender,
/// which has no wrap-around jump, and rescaled to the length of `x` so that
/// the total energy matches the detrended series.
pub fn detrended_spectrum(x: &[f64], cutoff: f64) -> Result<Periodogram> {
    let ext = highpass_extension(x, cutoff)?;
    let mut p = periodogram(&ext)?;
    let scale = x.len() as f64 / ext.len() as f64;
    p.energies.iter_mut().for_each(|e| *e *= scale);
    Ok(p)
}

/// Detrend, transform, and summarize.
pub fn hjorth(x: &[f64], cutoff: f64) -> Result<SpectralSignature> {
    let p = detrended_spectrum(x, cutoff)?;
    Ok(signature_of(&p, (0, x.len()), cutoff))
}

/// Signature of `loss[window]`, optionally on `ln(loss)`.
pub fn window_signature(
    loss: &[f64],
    window: Range<usize>,
    cutoff: f64,
    log_transform: bool,
) -> Result<SpectralSignature> {
    if window.end > loss.len() || window.start >= window.end {
        return Err(Error::Insufficient(format!(
            "window {}..{} over a series of length {}",
            window.start,
            window.end,
            loss.len()
        )));
    }
    let slice = &loss[window.clone()];
    let series: Vec<f64> = if log_transform {
        slice.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect()
    } else {
        slice.to_vec()
    };
    let mut sig = hjorth(&series, cutoff)?;
    sig.window = (window.start, window.end);
    Ok(sig)
}

/// Activity of the first `window` training-loss values: the early-training
/// predictor compared across hyperparameter cells.
pub fn grok_score(train_loss: &[f64], window: usize, cutoff: f64, log_transform: bool) -> Result<f64> {
    window_signature(train_loss, 0..window, cutoff, log_transform).map(|s| s.activity)
}

pub fn write_spectral_csv<W: std::io::Write>(w: W, rows: &[SpectralSignature]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["window_start", "window_end", "cutoff", "activity", "mobility", "complexity"])?;
    for s in rows {
        wr.write_record([
            s.window.0.to_string(),
            s.window.1.to_string(),
            s.cutoff.to_string(),
            s.activity.to_string(),
            opt(s.mobility),
            opt(s.complexity),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_periodogram_csv<W: std::io::Write>(w: W, p: &Periodogram) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["omega", "energy"])?;
    for (o, e) in p.omegas.iter().zip(&p.energies) {
        wr.write_record([o.to_string(), e.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn constant_and_ramp_are_removed() {
        let c = vec![3.7; 100];
        assert!(detrend_lowpass(&c, 0.01).unwrap().iter().all(|v| v.abs() < 1e-12));
        let ramp: Vec<f64> = (0..500).map(|t| 0.5 * t as f64 - 3.0).collect();
        let d = detrend_lowpass(&ramp, 0.01).unwrap();
        assert!(rms(&d) <= 0.01 * rms(&ramp));
    }

    #[test]
    fn offset_removed_sine_kept() {
        let x: Vec<f64> = (0..1000)
            .map(|t| (2.0 * PI * 0.1 * t as f64).sin() + 100.0)
            .collect();
        let d = detrend_lowpass(&x, 0.02).unwrap();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 1e-9);
        let amp = rms(&d) * 2f64.sqrt();
        assert!((amp - 1.0).abs() < 0.05, "{amp}");
    }

    #[test]
    fn detrend_output_is_zero_mean() {
        let x = noise(300, 4);
        let d = detrend_lowpass(&x, 0.05).unwrap();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() <= 1e-9 * rms(&x));
    }

    #[test]
    fn detrend_rejects_bad_inputs() {
        assert!(detrend_lowpass(&[1.0; 7], 0.01).is_err());
        assert!(detrend_lowpass(&[1.0; 20], 0.0).is_err());
        assert!(detrend_lowpass(&[1.0; 20], 0.5).is_err());
    }

    #[test]
    fn parseval_holds() {
        for (i, n) in [2usize, 3, 17, 64, 1001].into_iter().enumerate() {
            let x = noise(n, i as u64);
            let p = periodogram(&x).unwrap();
            assert_eq!(p.energies.len(), n / 2 + 1);
            let ss: f64 = x.iter().map(|v| v * v).sum();
            assert!((p.total_energy() - ss).abs() <= 1e-9 * ss);
        }
    }

    #[test]
    fn sine_energy_concentrates() {
        let n = 512;
        let k0 = 37;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * k0 as f64 * t as f64 / n as f64).sin())
            .collect();
        let p = periodogram(&x).unwrap();
        assert!(p.energies[k0] >= 0.99 * p.total_energy());
        let w0 = 2.0 * PI * k0 as f64 / n as f64;
        assert!((p.moment(2) / p.moment(0) - w0 * w0).abs() <= 1e-6 * w0 * w0);
        assert!((p.moment(4) / p.moment(2) - w0 * w0).abs() <= 1e-6 * w0 * w0);
        let zero = periodogram(&vec![0.0; 16]).unwrap();
        assert!(zero.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn hjorth_sine_identities() {
        let n = 4096;
        let amp = 2.5;
        let w0 = 2.0 * PI * 200.0 / n as f64;
        let x: Vec<f64> = (0..n).map(|t| amp * (w0 * t as f64).sin()).collect();
        let s = hjorth(&x, 0.01).unwrap();
        let expect = amp * amp * n as f64 / 2.0;
        assert!((s.activity - expect).abs() <= 0.01 * expect);
        assert!((s.mobility.unwrap() - w0).abs() <= 0.01 * w0);
        assert!((s.complexity.unwrap() - w0).abs() <= 0.01 * w0);
    }

    #[test]
    fn off_bin_sine_complexity() {
        let w0 = 0.1234;
        let x: Vec<f64> = (0..4096).map(|t| 2.5 * (w0 * t as f64).sin()).collect();
        let s = hjorth(&x, 0.01).unwrap();
        assert!((s.mobility.unwrap() - w0).abs() <= 0.01 * w0);
        assert!((s.complexity.unwrap() - w0).abs() <= 0.01 * w0);
    }

    #[test]
    fn constant_series_has_undefined_shape_parameters() {
        let s = hjorth(&[1.0; 64], 0.01).unwrap();
        assert_eq!(s.activity, 0.0);
        assert!(s.mobility.is_none() && s.complexity.is_none());
    }

    #[test]
    fn white_noise_spread() {
        let s = hjorth(&noise(4096, 9), 0.01).unwrap();
        assert!(s.complexity.unwrap() > s.mobility.unwrap());
    }

    #[test]
    fn scale_and_shift() {
        let x = noise(400, 2);
        let base = hjorth(&x, 0.01).unwrap();
        for c in [0.3, -2.0, 7.5] {
            let y: Vec<f64> = x.iter().map(|v| c * v).collect();
            let s = hjorth(&y, 0.01).unwrap();
            assert!((s.activity - c * c * base.activity).abs() <= 1e-9 * s.activity);
            assert!((s.mobility.unwrap() - base.mobility.unwrap()).abs() <= 1e-9);
            assert!((s.complexity.unwrap() - base.complexity.unwrap()).abs() <= 1e-9);
        }
        let y: Vec<f64> = x.iter().map(|v| v + 42.0).collect();
        let s = hjorth(&y, 0.01).unwrap();
        assert!((s.activity - base.activity).abs() <= 1e-9 * base.activity);
    }

    #[test]
    fn second_moment_matches_derivative_power() {
        let n = 4096;
        let comps = [(3.0, 5usize, 0.2), (1.0, 11, 1.0), (0.5, 23, 2.0)];
        let x: Vec<f64> = (0..n)
            .map(|t| {
                comps
                    .iter()
                    .map(|&(a, k, ph)| a * (2.0 * PI * k as f64 * t as f64 / n as f64 + ph).sin())
                    .sum()
            })
            .collect();
        let dx: Vec<f64> = (0..n)
            .map(|t| {
                let next = x[(t + 1) % n];
                let prev = x[(t + n - 1) % n];
                (next - prev) / 2.0
            })
            .collect();
        let m2 = periodogram(&x).unwrap().moment(2);
        let m0d = periodogram(&dx).unwrap().moment(0);
        assert!((m2 - m0d).abs() <= 0.02 * m2, "{m2} vs {m0d}");
    }

    #[test]
    fn oscillation_bursts_dominate_smooth_decay() {
        let decay: Vec<f64> = (0..400).map(|t| 4.6 * (-(t as f64) / 150.0).exp() + 0.01).collect();
        let bursty: Vec<f64> = decay
            .iter()
            .enumerate()
            .map(|(t, v)| {
                let on = (100..140).contains(&t) || (250..300).contains(&t);
                v + if on { (2.0 * PI * t as f64 / 7.0).sin() } else { 0.0 }
            })
            .collect();
        let smooth = grok_score(&decay, 400, DEFAULT_CUTOFF, false).unwrap();
        let osc = grok_score(&bursty, 400, DEFAULT_CUTOFF, false).unwrap();
        assert!(smooth < 1e-4 * osc, "{smooth} vs {osc}");
        assert!(osc >= 1e3 * smooth);
        assert!(grok_score(&decay[..100], 400, DEFAULT_CUTOFF, false).is_err());
    }

    #[test]
    fn csv_has_header() {
        let s = hjorth(&noise(64, 1), 0.01).unwrap();
        let mut buf = Vec::new();
        write_spectral_csv(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("window_start,window_end,cutoff,activity,mobility,complexity\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
