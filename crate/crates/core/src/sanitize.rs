//! Removal of linear phase distortion across subcarriers and impulsive
//! outliers in the delay domain.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::delay_doppler::{dft_in_place, idft_in_place};
use crate::error::{Error, Result};
use crate::types::CsiFrame;

/// Least-squares line through the unwrapped phase of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFit {
    /// Radians per subcarrier index.
    pub slope: f64,
    pub offset: f64,
}

/// Wraps a phase difference into `(-pi, pi]`; exactly `+-pi` maps to `+pi`.
#[inline]
pub fn wrap_difference(d: f64) -> f64 {
    PI - (PI - d).rem_euclid(2.0 * PI)
}

/// Unwraps phases so that successive differences lie in `(-pi, pi]`.
pub fn unwrap(phases: &mut [f64]) {
    for k in 1..phases.len() {
        let d = wrap_difference(phases[k] - phases[k - 1]);
        phases[k] = phases[k - 1] + d;
    }
}

/// Fits `slope * k + offset` with `k = 1..=N`.
pub fn fit_linear_phase(phases: &[f64]) -> PhaseFit {
    let n = phases.len() as f64;
    let k_mean = (n + 1.0) / 2.0;
    let p_mean = phases.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &p) in phases.iter().enumerate() {
        let dk = (i + 1) as f64 - k_mean;
        num += (p - p_mean) * dk;
        den += dk * dk;
    }
    let slope = num / den;
    PhaseFit {
        slope,
        offset: p_mean - k_mean * slope,
    }
}

/// Removes the per-snapshot linear phase trend in place; returns the fit.
pub fn compensate_snapshot(h: &mut [Complex64]) -> PhaseFit {
    let mut phases: Vec<f64> = h.iter().map(|z| z.arg()).collect();
    unwrap(&mut phases);
    let fit = fit_linear_phase(&phases);
    for (i, (z, p)) in h.iter_mut().zip(&phases).enumerate() {
        let residual = p - fit.slope * (i + 1) as f64 - fit.offset;
        *z = Complex64::from_polar(z.norm(), residual);
    }
    fit
}

/// Linear phase compensation of every (stream, frame) snapshot.
pub fn compensate_phase(frame: &CsiFrame) -> Result<CsiFrame> {
    let n_sub = frame.n_subcarriers();
    if n_sub < 2 {
        return Err(Error::invalid("phase compensation needs at least two subcarriers"));
    }
    let mut out = frame.clone();
    let mut snap = vec![Complex64::new(0.0, 0.0); n_sub];
    for s in 0..frame.n_streams() {
        for t in 0..frame.n_time() {
            for (k, z) in snap.iter_mut().enumerate() {
                *z = frame.get(s, k, t);
            }
            compensate_snapshot(&mut snap);
            for (k, &z) in snap.iter().enumerate() {
                out.set(s, k, t, z);
            }
        }
    }
    Ok(out)
}

/// Hampel filter settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HampelParams {
    pub window: usize,
    pub n_sigmas: f64,
}

impl Default for HampelParams {
    fn default() -> Self {
        HampelParams {
            window: 11,
            n_sigmas: 3.0,
        }
    }
}

/// Gaussian consistency constant for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;
pub const MAD_FLOOR: f64 = 1e-9;

fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, &mut hi, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        hi
    } else {
        let lo = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Replaces samples further than `n_sigmas` scaled MADs from the median of
/// their centred (edge-truncated) window with that median.
pub fn hampel(series: &[f64], window: usize, n_sigmas: f64) -> Result<Vec<f64>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid("Hampel window must be odd and at least 3"));
    }
    let half = window / 2;
    let n = series.len();
    let mut out = series.to_vec();
    let mut buf = Vec::with_capacity(window);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&series[lo..hi]);
        let med = median(&mut buf);
        for b in buf.iter_mut() {
            *b = (*b - med).abs();
        }
        let mad = median(&mut buf);
        if (series[i] - med).abs() > n_sigmas * MAD_SCALE * mad.max(MAD_FLOOR) {
            out[i] = med;
        }
    }
    Ok(out)
}

/// Hampel filter applied separately to real and imaginary parts.
pub fn hampel_complex(series: &[Complex64], params: HampelParams) -> Result<Vec<Complex64>> {
    let re: Vec<f64> = series.iter().map(|z| z.re).collect();
    let im: Vec<f64> = series.iter().map(|z| z.im).collect();
    let re = hampel(&re, params.window, params.n_sigmas)?;
    let im = hampel(&im, params.window, params.n_sigmas)?;
    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Filters every delay-bin series `h(s; tau_i)` and returns to the subcarrier domain.
pub fn hampel_delay_domain(frame: &CsiFrame, params: HampelParams) -> Result<CsiFrame> {
    let n_sub = frame.n_subcarriers();
    let n_time = frame.n_time();
    let mut out = frame.clone();
    for s in 0..frame.n_streams() {
        // bins[i][t]
        let mut bins = vec![Complex64::new(0.0, 0.0); n_sub * n_time];
        let mut snap = vec![Complex64::new(0.0, 0.0); n_sub];
        for t in 0..n_time {
            for (k, z) in snap.iter_mut().enumerate() {
                *z = frame.get(s, k, t);
            }
            idft_in_place(&mut snap);
            for (i, &z) in snap.iter().enumerate() {
                bins[i * n_time + t] = z;
            }
        }
        for row in bins.chunks_mut(n_time) {
            let filtered = hampel_complex(row, params)?;
            row.copy_from_slice(&filtered);
        }
        for t in 0..n_time {
            for (i, z) in snap.iter_mut().enumerate() {
                *z = bins[i * n_time + t];
            }
            dft_in_place(&mut snap);
            for (k, &z) in snap.iter().enumerate() {
                out.set(s, k, t, z);
            }
        }
    }
    Ok(out)
}

/// Full sanitation stage: phase compensation followed by optional delay-domain Hampel filtering.
pub fn sanitize(frame: &CsiFrame, hampel: Option<HampelParams>) -> Result<CsiFrame> {
    let compensated = compensate_phase(frame)?;
    match hampel {
        Some(p) => hampel_delay_domain(&compensated, p),
        None => Ok(compensated),
    }
}
