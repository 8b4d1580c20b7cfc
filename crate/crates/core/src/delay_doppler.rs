//! Delay-domain decomposition of CSI and per-bin Doppler velocity estimation.
//!
//! Each stream's subcarrier snapshot is mapped to `N` delay bins with an
//! `N`-point IDFT. The static part of every bin is removed by subtracting its
//! temporal mean, then the remaining rotation is turned into a projected
//! velocity either from the peak of a short-time periodogram or from the
//! phase derivative. Low-SNR bins are gated to zero and the others are
//! z-normalised.

use std::cell::RefCell;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::types::{CsiFrame, RadioConfig, VelocitySet, VelocityVector};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// `x[i] <- (1/N) sum_n x[n] exp(+j 2 pi n i / N)`.
pub fn idft_in_place(x: &mut [Complex64]) {
    let n = x.len();
    plan(n, true).process(x);
    let inv = 1.0 / n as f64;
    for z in x.iter_mut() {
        *z *= inv;
    }
}

/// `x[n] <- sum_i x[i] exp(-j 2 pi n i / N)`, the inverse of [`idft_in_place`].
pub fn dft_in_place(x: &mut [Complex64]) {
    plan(x.len(), false).process(x);
}

/// Windowed sinc `sin(pi N x) / (N sin(pi x))`, continuous at integer `x`.
pub fn sinc_n(x: f64, n: usize) -> f64 {
    let nf = n as f64;
    let den = nf * (PI * x).sin();
    if den.abs() < 1e-300 || (x - x.round()).abs() < 1e-12 {
        // Limit at integers: +-1 depending on the parity of N * x.
        let k = x.round() as i64;
        return if (k * (n as i64 - 1)) % 2 == 0 { 1.0 } else { -1.0 };
    }
    (PI * nf * x).sin() / den
}

/// Dirichlet kernel: response of the N-point IDFT at a delay offset of
/// `x = Δf (tau - tau_path)`.
pub fn dirichlet(x: f64, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, -PI * (n as f64 - 1.0) * x) * sinc_n(x, n)
}

/// Delay-domain view of one stream, laid out `[bin][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub stream: usize,
    pub n_bins: usize,
    pub n_time: usize,
    pub radio: RadioConfig,
    bins: Vec<Complex64>,
}

impl DelayProfile {
    pub fn bin(&self, i: usize) -> &[Complex64] {
        &self.bins[i * self.n_time..(i + 1) * self.n_time]
    }

    pub fn bin_delay_s(&self, i: usize) -> f64 {
        self.radio.bin_delay_s(i)
    }

    /// `|h(s; tau_i)|` over bins at one time.
    pub fn magnitudes_at(&self, time: usize) -> Vec<f64> {
        (0..self.n_bins)
            .map(|i| self.bins[i * self.n_time + time].norm())
            .collect()
    }

    pub fn subtract_temporal_mean(&mut self) {
        for row in self.bins.chunks_mut(self.n_time) {
            let mean = row.iter().sum::<Complex64>() / row.len() as f64;
            for z in row.iter_mut() {
                *z -= mean;
            }
        }
    }
}

/// IDFT of every snapshot, without static-component removal.
pub fn delay_profiles(frame: &CsiFrame) -> Vec<DelayProfile> {
    let n = frame.n_subcarriers();
    let t_len = frame.n_time();
    (0..frame.n_streams())
        .map(|s| {
            let mut bins = vec![Complex64::new(0.0, 0.0); n * t_len];
            let mut snap = vec![Complex64::new(0.0, 0.0); n];
            for t in 0..t_len {
                for (k, z) in snap.iter_mut().enumerate() {
                    *z = frame.get(s, k, t);
                }
                idft_in_place(&mut snap);
                for (i, &z) in snap.iter().enumerate() {
                    bins[i * t_len + t] = z;
                }
            }
            DelayProfile {
                stream: s,
                n_bins: n,
                n_time: t_len,
                radio: frame.config,
                bins,
            }
        })
        .collect()
}

/// Delay profiles with each bin's temporal mean removed.
pub fn decompose(frame: &CsiFrame) -> Vec<DelayProfile> {
    let mut profiles = delay_profiles(frame);
    for p in &mut profiles {
        p.subtract_temporal_mean();
    }
    profiles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    PsdArgmax,
    PhaseDerivative,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psd" | "psd_argmax" => Ok(Estimator::PsdArgmax),
            "phase" | "phase_derivative" => Ok(Estimator::PhaseDerivative),
            _ => Err(Error::invalid(format!("unknown estimator {s:?}"))),
        }
    }
}

/// Velocity estimation and post-processing settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerParams {
    pub window_len: usize,
    pub hop: usize,
    pub fft_pad: usize,
    pub estimator: Estimator,
    /// Bins at or below this SNR are zeroed.
    pub snr_threshold_db: f64,
    pub static_frac: f64,
    pub motion_frac: f64,
}

impl Default for DopplerParams {
    fn default() -> Self {
        DopplerParams {
            window_len: 64,
            hop: 4,
            fft_pad: 512,
            estimator: Estimator::PsdArgmax,
            snr_threshold_db: 2.0,
            static_frac: 0.10,
            motion_frac: 0.60,
        }
    }
}

impl DopplerParams {
    pub fn validate(&self, n_time: usize) -> Result<()> {
        if self.window_len < 2 || self.window_len > n_time {
            return Err(Error::invalid(format!(
                "window length {} must lie in [2, {n_time}]",
                self.window_len
            )));
        }
        if self.hop == 0 {
            return Err(Error::invalid("hop must be at least 1"));
        }
        if self.fft_pad < self.window_len {
            return Err(Error::invalid("fft_pad must be at least the window length"));
        }
        Ok(())
    }

    /// Velocity spacing of the periodogram grid.
    pub fn velocity_resolution(&self, radio: &RadioConfig) -> f64 {
        radio.wavelength_m() * radio.sample_rate_hz / self.fft_pad as f64
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| 0.5 - 0.5 * (TAU * k as f64 / len as f64).cos())
        .collect()
}

/// Frequency of FFT index `k` on the two-sided grid `(-fs/2, fs/2]`.
pub fn bin_frequency(k: usize, pad: usize, fs: f64) -> f64 {
    let k = k as f64;
    let p = pad as f64;
    if k <= p / 2.0 {
        k * fs / p
    } else {
        (k - p) * fs / p
    }
}

/// Linear interpolation of values known at `centers` onto `0..len`, held
/// constant outside the first and last centre.
fn interpolate(centers: &[f64], values: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut j = 0;
    for s in 0..len {
        let x = s as f64;
        if x <= centers[0] {
            out.push(values[0]);
            continue;
        }
        while j + 1 < centers.len() && centers[j + 1] < x {
            j += 1;
        }
        if j + 1 >= centers.len() {
            out.push(*values.last().unwrap());
            continue;
        }
        let (x0, x1) = (centers[j], centers[j + 1]);
        let w = (x - x0) / (x1 - x0);
        out.push(values[j] * (1.0 - w) + values[j + 1] * w);
    }
    out
}

/// Sliding-window periodogram peak, scaled to velocity by the wavelength.
pub fn estimate_velocity_psd(series: &[Complex64], radio: &RadioConfig, params: &DopplerParams) -> Result<Vec<f64>> {
    let t_len = series.len();
    params.validate(t_len)?;
    let w_len = params.window_len;
    let pad = params.fft_pad;
    let window = hann(w_len);
    let fft = plan(pad, false);
    let lambda = radio.wavelength_m();
    let fs = radio.sample_rate_hz;
    let mut buf = vec![Complex64::new(0.0, 0.0); pad];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut centers = Vec::new();
    let mut values = Vec::new();
    let mut start = 0;
    while start + w_len <= t_len {
        buf.fill(Complex64::new(0.0, 0.0));
        for (k, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            *b = series[start + k] * *w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let (mut best, mut best_p) = (0, f64::NEG_INFINITY);
        for (k, z) in buf.iter().enumerate() {
            let p = z.norm_sqr();
            if p > best_p {
                best_p = p;
                best = k;
            }
        }
        centers.push(start as f64 + (w_len as f64 - 1.0) / 2.0);
        values.push(lambda * bin_frequency(best, pad, fs));
        start += params.hop;
    }
    Ok(interpolate(&centers, &values, t_len))
}

/// Instantaneous-frequency velocity `c/(2 pi f_c) * dphi/dt`.
///
/// The phase derivative is the central difference of the phase, taken as
/// `arg(h[s+1] conj(h[s-1])) / 2` so that wrapping never occurs; this is
/// exact for a pure complex exponential below Nyquist/2.
pub fn estimate_velocity_phase(series: &[Complex64], radio: &RadioConfig) -> Vec<f64> {
    let t_len = series.len();
    let mut out = vec![0.0; t_len];
    if t_len < 2 {
        return out;
    }
    let peak = series.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return out;
    }
    let floor = 1e-12 * peak;
    let scale = radio.speed_of_light() / (TAU * radio.carrier_hz) * radio.sample_rate_hz;
    for (s, v) in out.iter_mut().enumerate() {
        let (a, b, span) = if s == 0 {
            (0, 1, 1.0)
        } else if s == t_len - 1 {
            (t_len - 2, t_len - 1, 1.0)
        } else {
            (s - 1, s + 1, 2.0)
        };
        if series[s].norm() < floor || series[a].norm() < floor || series[b].norm() < floor {
            continue;
        }
        let dphi = (series[b] * series[a].conj()).arg() / span;
        *v = scale * dphi;
    }
    out
}

fn variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = x.clone().sum::<f64>() / n;
    x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Motion-to-static variance ratio in dB. Static samples are the first and
/// last `static_frac` of the series, motion samples its central `motion_frac`.
pub fn snr_db(values: &[f64], static_frac: f64, motion_frac: f64) -> Result<f64> {
    let t_len = values.len();
    if t_len < 20 {
        return Err(Error::invalid("SNR gating needs at least 20 samples"));
    }
    let n_static = ((static_frac * t_len as f64).floor() as usize).max(1);
    let m_lo = (((1.0 - motion_frac) / 2.0) * t_len as f64).round() as usize;
    let m_hi = (((1.0 + motion_frac) / 2.0) * t_len as f64).round() as usize;
    let static_iter = values[..n_static]
        .iter()
        .chain(values[t_len - n_static..].iter())
        .copied();
    let var_static = variance(static_iter).max(VARIANCE_FLOOR);
    let var_motion = variance(values[m_lo..m_hi].iter().copied()).max(VARIANCE_FLOOR);
    Ok(10.0 * (var_motion / var_static).log10())
}

/// Computes the SNR and zeroes the vector when it is at or below `threshold_db`.
pub fn snr_gate(mut v: VelocityVector, params: &DopplerParams) -> Result<VelocityVector> {
    v.snr_db = snr_db(&v.values, params.static_frac, params.motion_frac)?;
    if v.snr_db <= params.snr_threshold_db {
        v.gated = true;
        v.values.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(v)
}

pub const STD_FLOOR: f64 = 1e-9;

/// Zero mean, unit variance; gated vectors stay zero.
pub fn normalize(mut v: VelocityVector) -> VelocityVector {
    if v.gated {
        v.values.iter_mut().for_each(|x| *x = 0.0);
        return v;
    }
    let n = v.values.len() as f64;
    let mean = v.values.iter().sum::<f64>() / n;
    let std = (v.values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let inv = 1.0 / std.max(STD_FLOOR);
    v.values.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    v
}

/// Raw velocity series of one bin under the chosen estimator.
pub fn estimate_velocity(series: &[Complex64], radio: &RadioConfig, params: &DopplerParams) -> Result<Vec<f64>> {
    match params.estimator {
        Estimator::PsdArgmax => estimate_velocity_psd(series, radio, params),
        Estimator::PhaseDerivative => Ok(estimate_velocity_phase(series, radio)),
    }
}

/// Sanitized CSI to gated, normalised velocity vectors, one per (stream, bin).
pub fn velocity_set(frame: &CsiFrame, params: &DopplerParams) -> Result<VelocitySet> {
    params.validate(frame.n_time())?;
    let profiles = decompose(frame);
    let jobs: Vec<(usize, usize)> = profiles
        .iter()
        .flat_map(|p| (0..p.n_bins).map(move |i| (p.stream, i)))
        .collect();
    let vectors = jobs
        .par_iter()
        .map(|&(s, i)| {
            let p = &profiles[s];
            let values = estimate_velocity(p.bin(i), &p.radio, params)?;
            let v = VelocityVector {
                values,
                delay_bin: i as u32,
                stream: s as u32,
                snr_db: 0.0,
                gated: false,
            };
            Ok(normalize(snr_gate(v, params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VelocitySet {
        vectors,
        n_time: frame.n_time(),
        source: frame.labels.as_ref().map(|m| m.sample_id.clone()).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn direct_idft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .map(|(k, &z)| z * Complex64::from_polar(1.0, TAU * (k * i) as f64 / n as f64))
                    .sum::<Complex64>()
                    / n as f64
            })
            .collect()
    }

    #[test]
    fn idft_of_constant_is_dc() {
        let mut x = vec![Complex64::new(1.0, 0.0); 52];
        idft_in_place(&mut x);
        assert!((x[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(x[1..].iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn idft_matches_direct_sum() {
        let n = 52;
        let x: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, -TAU * (k * 3) as f64 / n as f64))
            .collect();
        let oracle = direct_idft(&x);
        let mut y = x.clone();
        idft_in_place(&mut y);
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-13);
        }
        assert!((y[3].norm() - 1.0).abs() < 1e-13);
        let rest: f64 = y
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 3)
            .map(|(_, z)| z.norm())
            .sum();
        assert!(rest < 1e-12);
        dft_in_place(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn two_paths_give_two_maxima() {
        let n = 52;
        let x: Vec<Complex64> = (0..n)
            .map(|k| {
                Complex64::from_polar(1.0, -TAU * (k * 3) as f64 / n as f64)
                    + Complex64::from_polar(1.0, -TAU * (k * 9) as f64 / n as f64)
            })
            .collect();
        let mags: Vec<f64> = direct_idft(&x).iter().map(|z| z.norm()).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
        let mut top = [idx[0], idx[1]];
        top.sort();
        assert_eq!(top, [3, 9]);
    }

    #[test]
    fn sinc_and_dirichlet_match_geometric_series() {
        let n = 16;
        for &x in &[0.0, 0.13, 0.5, 1.0, 2.0, -0.37, 3.25] {
            let series: Complex64 = (0..n)
                .map(|k| Complex64::from_polar(1.0, -TAU * k as f64 * x))
                .sum::<Complex64>()
                / n as f64;
            assert!((dirichlet(x, n) - series).norm() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn psd_constant_is_zero_velocity() {
        let radio = RadioConfig::wifi_2g4();
        let v = estimate_velocity_psd(&vec![Complex64::new(0.3, 0.4); 200], &radio, &DopplerParams::default()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    fn tone(freq: f64, fs: f64, len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|s| Complex64::from_polar(1.0, TAU * freq * s as f64 / fs))
            .collect()
    }

    /// Peak-frequency oracle by direct evaluation of the windowed DFT.
    fn direct_peak(series: &[Complex64], pad: usize, fs: f64) -> f64 {
        let w = hann(series.len());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..pad {
            let f = bin_frequency(k, pad, fs);
            let z: Complex64 = series
                .iter()
                .zip(&w)
                .enumerate()
                .map(|(s, (x, wi))| x * *wi * Complex64::from_polar(1.0, -TAU * f * s as f64 / fs))
                .sum();
            if z.norm_sqr() > best.0 {
                best = (z.norm_sqr(), f);
            }
        }
        best.1
    }

    #[test]
    fn psd_recovers_positive_and_negative_tones() {
        let radio = RadioConfig::wifi_2g4();
        let p = DopplerParams::default();
        let lambda = radio.wavelength_m();
        let cell = lambda * radio.sample_rate_hz / p.fft_pad as f64;
        for &(f, expect) in &[(10.0, 1.2491), (-20.0, -2.498)] {
            let x = tone(f, 100.0, 300);
            let v = estimate_velocity_psd(&x, &radio, &p).unwrap();
            let oracle = lambda * direct_peak(&x[..64], p.fft_pad, 100.0);
            assert_eq!(v.len(), 300);
            for &vi in &v {
                assert!((vi - oracle).abs() < 1e-12);
                assert!((vi - lambda * f).abs() <= cell);
                assert!((vi - expect).abs() < 0.02);
            }
        }
        assert!(estimate_velocity_psd(&tone(1.0, 100.0, 32), &radio, &p).is_err());
    }

    #[test]
    fn phase_estimator_examples() {
        let radio = RadioConfig::wifi_2g4();
        assert!(estimate_velocity_phase(&vec![Complex64::new(2.0, -1.0); 50], &radio)
            .iter()
            .all(|&v| v == 0.0));
        assert!(estimate_velocity_phase(&vec![Complex64::new(0.0, 0.0); 50], &radio)
            .iter()
            .all(|&v| v == 0.0));
        let x = tone(10.0, 100.0, 100);
        let v = estimate_velocity_phase(&x, &radio);
        // Closed form: phase slope 2 pi 10 rad/s scaled by lambda / (2 pi).
        let oracle = radio.wavelength_m() * 10.0;
        for &vi in &v[1..99] {
            assert!((vi - oracle).abs() / oracle < 0.01);
        }
        let conj: Vec<Complex64> = x.iter().map(|z| z.conj()).collect();
        for (a, b) in estimate_velocity_phase(&conj, &radio).iter().zip(&v) {
            assert_eq!(*a, -*b);
        }
    }

    fn vector(values: Vec<f64>) -> VelocityVector {
        VelocityVector {
            values,
            delay_bin: 0,
            stream: 0,
            snr_db: 0.0,
            gated: false,
        }
    }

    #[test]
    fn snr_gating_cases() {
        let p = DopplerParams::default();
        let mut r = rng(5);
        let noise: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut r)).collect();
        let g = snr_gate(vector(noise), &p).unwrap();
        assert!(g.snr_db.abs() < 1.0, "{}", g.snr_db);
        assert!(g.gated && g.values.iter().all(|&x| x == 0.0));

        // Alternating +-1 static, +-10 motion: variance ratio exactly 100.
        let t = 500;
        let vals: Vec<f64> = (0..t)
            .map(|s| {
                let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                if (100..400).contains(&s) {
                    10.0 * sign
                } else {
                    sign
                }
            })
            .collect();
        let k = snr_gate(vector(vals), &p).unwrap();
        assert!((k.snr_db - 20.0).abs() < 1e-9);
        assert!(!k.gated);

        let z = snr_gate(vector(vec![0.0; 100]), &p).unwrap();
        assert_eq!(z.snr_db, 0.0);
        assert!(z.gated);
        assert!(snr_gate(vector(vec![0.0; 10]), &p).is_err());
    }

    #[test]
    fn normalization_cases() {
        assert!(normalize(vector(vec![3.0; 40])).values.iter().all(|&x| x == 0.0));
        let mut r = rng(9);
        let x: Vec<f64> = (0..200).map(|_| r.random::<f64>() * 4.0 - 1.0).collect();
        let a = normalize(vector(x.clone()));
        let mean = a.values.iter().sum::<f64>() / 200.0;
        let std = (a.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-9);
        let scaled = normalize(vector(x.iter().map(|v| 2.5 * v + 7.0).collect()));
        for (p, q) in a.values.iter().zip(&scaled.values) {
            assert!((p - q).abs() < 1e-12);
        }
        let mut g = vector(vec![0.0; 30]);
        g.gated = true;
        assert!(normalize(g).values.iter().all(|&x| x == 0.0));
    }
}
