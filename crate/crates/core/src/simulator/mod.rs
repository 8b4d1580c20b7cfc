//! Synthetic multipath CSI with known ground truth.
//!
//! The channel of every stream is a sum of static paths and moving scatter
//! clusters. Each cluster contributes `exp(-j 2 pi f_n tau_i)` times the
//! average of its scatterers' Doppler phasors; scatterer directions are
//! drawn from a von Mises-Fisher law around the cluster's mean direction.
//! Hardware distortions (cyclic shift diversity, sampling time and
//! frequency offsets, optional beamforming) multiply the clean channel, and
//! complex white noise is added last.

pub mod geometry;
pub mod vmf;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use geometry::{doppler_shift, path_length_change, total_path_change, PathChange, TotalPathChange, Vec3};
pub use vmf::sample_vmf;

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{CsiFrame, Gesture, RadioConfig};

/// Upper bound on simulated point speed, m/s.
pub const MAX_SPEED: f64 = 3.0;

/// Shape of a guided gesture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureShape {
    Circle,
    LeftRight,
    UpDown,
    PushPull,
}

impl GestureShape {
    pub fn from_gesture(g: &Gesture) -> Option<Self> {
        match g {
            Gesture::Circle => Some(GestureShape::Circle),
            Gesture::LeftRight => Some(GestureShape::LeftRight),
            Gesture::UpDown => Some(GestureShape::UpDown),
            Gesture::PushPull => Some(GestureShape::PushPull),
            Gesture::Other(_) => None,
        }
    }

    pub fn gesture(self) -> Gesture {
        match self {
            GestureShape::Circle => Gesture::Circle,
            GestureShape::LeftRight => Gesture::LeftRight,
            GestureShape::UpDown => Gesture::UpDown,
            GestureShape::PushPull => Gesture::PushPull,
        }
    }
}

fn default_amplitude() -> f64 {
    0.15
}
fn default_period() -> f64 {
    1.0
}
fn default_onset() -> f64 {
    0.5
}
fn default_motion() -> f64 {
    4.0
}

/// Motion of the moving point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    ConstantVelocity {
        velocity: Vec3,
    },
    /// Sinusoidal displacement along the gesture axis (or around a circle)
    /// between `onset_s` and `onset_s + motion_s`, at rest otherwise.
    Gesture {
        shape: GestureShape,
        #[serde(default = "default_amplitude")]
        amplitude_m: f64,
        #[serde(default = "default_period")]
        period_s: f64,
        /// Rotation of the body frame about the vertical axis.
        #[serde(default)]
        yaw_deg: f64,
        #[serde(default = "default_onset")]
        onset_s: f64,
        #[serde(default = "default_motion")]
        motion_s: f64,
    },
}

impl Trajectory {
    /// Body-frame unit axes (right, forward, up) after applying the yaw.
    fn body_axes(yaw_deg: f64) -> (Vec3, Vec3, Vec3) {
        let (s, c) = yaw_deg.to_radians().sin_cos();
        (Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0), Vec3::new(0.0, 0.0, 1.0))
    }

    /// Velocity at time `t`.
    pub fn velocity(&self, t: f64) -> Vec3 {
        match *self {
            Trajectory::ConstantVelocity { velocity } => velocity,
            Trajectory::Gesture {
                shape,
                amplitude_m,
                period_s,
                yaw_deg,
                onset_s,
                motion_s,
            } => {
                let tau = t - onset_s;
                if tau <= 0.0 || tau >= motion_s {
                    return Vec3::ZERO;
                }
                let w = TAU / period_s;
                let (right, fwd, up) = Self::body_axes(yaw_deg);
                let (s, c) = (w * tau).sin_cos();
                let speed = amplitude_m * w;
                match shape {
                    GestureShape::LeftRight => right * (speed * c),
                    GestureShape::UpDown => up * (speed * c),
                    GestureShape::PushPull => fwd * (speed * c),
                    GestureShape::Circle => right * (-speed * s) + up * (speed * c),
                }
            }
        }
    }

    /// Displacement from the start position at time `t`.
    pub fn displacement(&self, t: f64) -> Vec3 {
        match *self {
            Trajectory::ConstantVelocity { velocity } => velocity * t,
            Trajectory::Gesture {
                shape,
                amplitude_m,
                period_s,
                yaw_deg,
                onset_s,
                motion_s,
            } => {
                let tau = (t - onset_s).clamp(0.0, motion_s);
                let w = TAU / period_s;
                let (right, fwd, up) = Self::body_axes(yaw_deg);
                let (s, c) = (w * tau).sin_cos();
                match shape {
                    GestureShape::LeftRight => right * (amplitude_m * s),
                    GestureShape::UpDown => up * (amplitude_m * s),
                    GestureShape::PushPull => fwd * (amplitude_m * s),
                    GestureShape::Circle => right * (amplitude_m * (c - 1.0)) + up * (amplitude_m * s),
                }
            }
        }
    }
}

/// Complex gain law of a cluster's scatterers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainProfile {
    /// Every scatterer carries the same complex gain.
    Constant { re: f64, im: f64 },
    /// Fixed magnitude, independent uniform phase per scatterer.
    RandomPhase { magnitude: f64 },
}

impl Default for GainProfile {
    fn default() -> Self {
        GainProfile::Constant { re: 1.0, im: 0.0 }
    }
}

fn one() -> f64 {
    1.0
}
fn default_scatterers() -> usize {
    64
}

/// Moving-scatter cluster arriving at one delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterCluster {
    pub mean_direction: Vec3,
    pub kappa: f64,
    #[serde(default = "default_scatterers")]
    pub n_scatterers: usize,
    #[serde(default)]
    pub gain: GainProfile,
    pub delay_s: f64,
    /// Multiplier on the Doppler shift; a composite path whose length changes
    /// through several segments sees `sum_i cos(theta_i)` rather than one cosine.
    #[serde(default = "one")]
    pub doppler_scale: f64,
}

/// Path that does not interact with the moving point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPath {
    pub delay_s: f64,
    /// Complex gain as `[re, im]`.
    pub gain: [f64; 2],
}

/// Optional per-stream beamforming amplitude and phase (in cycles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beamforming {
    pub amplitude: Vec<f64>,
    pub phase_cycles: Vec<f64>,
}

/// Hardware distortion and noise settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Cyclic shift diversity delay per stream (missing entries are zero).
    pub csd_delay_s: Vec<f64>,
    /// Standard deviation of the per-frame sampling time offset random walk.
    pub sto_s: f64,
    /// Growth of the sampling frequency offset timing term per frame.
    pub sfo_eta_per_frame_s: f64,
    /// Ratio of actual to nominal sampling frequency.
    pub sfo_ratio: Option<f64>,
    pub beamforming: Option<Beamforming>,
    /// White noise level relative to the mean clean payload power; `None` is noiseless.
    pub awgn_snr_db: Option<f64>,
}

fn default_streams() -> usize {
    1
}

/// Complete description of a simulated capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub tx_pos: Vec3,
    pub rx_pos: Vec3,
    #[serde(default)]
    pub reflectors: Vec<Vec3>,
    pub point_start: Vec3,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub clusters: Vec<ScatterCluster>,
    #[serde(default)]
    pub static_paths: Vec<StaticPath>,
    #[serde(default)]
    pub noise: NoiseParams,
    pub radio: RadioConfig,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    #[serde(default = "default_streams")]
    pub n_streams: usize,
}

/// Truth about one cluster of a synthesized capture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTruth {
    pub mean_direction: Vec3,
    pub kappa: f64,
    pub delay_s: f64,
    /// Delay in units of the IDFT bin width.
    pub delay_bins: f64,
    /// `doppler_scale * v(s) . m_i` per frame.
    pub projected_velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub clusters: Vec<ClusterTruth>,
    pub velocity: Vec<Vec3>,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).round() as usize
    }

    /// Largest delay the IDFT can place without wrapping.
    pub fn max_delay_s(&self) -> f64 {
        let n = self.radio.n_subcarriers as f64;
        (n - 1.0) / (n * self.radio.subcarrier_spacing_hz)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        let finite = [self.tx_pos, self.rx_pos, self.point_start]
            .iter()
            .chain(self.reflectors.iter())
            .all(|p| p.is_finite());
        if !finite {
            return Err(Error::invalid("scene positions must be finite"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration_s must be positive"));
        }
        if (self.frame_rate_hz - self.radio.sample_rate_hz).abs() > 1e-9 * self.frame_rate_hz {
            return Err(Error::invalid("frame_rate_hz must equal radio.sample_rate_hz"));
        }
        if self.n_frames() < 2 {
            return Err(Error::invalid("scene must span at least two frames"));
        }
        if self.n_streams == 0 {
            return Err(Error::invalid("n_streams must be at least 1"));
        }
        let max_delay = self.max_delay_s();
        for c in &self.clusters {
            if (c.mean_direction.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("cluster mean_direction must be a unit vector"));
            }
            if c.kappa.is_nan() || c.kappa < 0.0 || c.n_scatterers == 0 || !c.doppler_scale.is_finite() {
                return Err(Error::invalid("cluster needs kappa >= 0 and at least one scatterer"));
            }
            if !(0.0..=max_delay * (1.0 + 1e-12)).contains(&c.delay_s) {
                return Err(Error::invalid(format!(
                    "cluster delay {} s outside unambiguous range [0, {max_delay}]",
                    c.delay_s
                )));
            }
        }
        for p in &self.static_paths {
            if !(0.0..=max_delay * (1.0 + 1e-12)).contains(&p.delay_s) || !p.gain.iter().all(|g| g.is_finite()) {
                return Err(Error::invalid(format!(
                    "static path delay {} s out of range",
                    p.delay_s
                )));
            }
        }
        let n = &self.noise;
        if let Some(snr) = n.awgn_snr_db {
            if !(-10.0..=80.0).contains(&snr) {
                return Err(Error::invalid("awgn_snr_db must lie in [-10, 80]"));
            }
        }
        let nf = n
            .csd_delay_s
            .iter()
            .chain([n.sto_s, n.sfo_eta_per_frame_s, n.sfo_ratio.unwrap_or(1.0)].iter())
            .all(|x| x.is_finite());
        if !nf || n.sto_s < 0.0 {
            return Err(Error::invalid("noise parameters must be finite"));
        }
        let dt = 1.0 / self.frame_rate_hz;
        for s in 0..self.n_frames() {
            if self.trajectory.velocity(s as f64 * dt).norm() > MAX_SPEED {
                return Err(Error::invalid(format!("trajectory exceeds {MAX_SPEED} m/s")));
            }
        }
        Ok(())
    }

    /// Clusters implied by the geometry: the bounce off the moving point and
    /// the two second-order paths through every reflector.
    ///
    /// Delays are measured relative to the direct path. A path's length
    /// changes by `v . sum_i u_i` per second, where `u_i` points from each
    /// segment's far end to the point, so its Doppler direction is
    /// `-sum_i u_i` with magnitude carried in `doppler_scale`.
    pub fn geometric_clusters(
        &self,
        kappa: f64,
        n_scatterers: usize,
        gain: GainProfile,
    ) -> Result<Vec<ScatterCluster>> {
        let p = self.point_start;
        let d_los = (self.rx_pos - self.tx_pos).norm();
        let mut out = Vec::new();
        let mut push = |observers: [Vec3; 2], length: f64| -> Result<()> {
            let sum = observers
                .iter()
                .map(|&o| (p - o).normalized())
                .try_fold(Vec3::ZERO, |acc, u| u.map(|u| acc + u))
                .ok_or_else(|| Error::invalid("moving point coincides with a scene node"))?;
            let scale = sum.norm();
            let Some(m) = (-sum).normalized() else {
                return Ok(());
            };
            out.push(ScatterCluster {
                mean_direction: m,
                kappa,
                n_scatterers,
                gain,
                delay_s: (length - d_los).max(0.0) / crate::SPEED_OF_LIGHT,
                doppler_scale: scale,
            });
            Ok(())
        };
        let (t, r) = (self.tx_pos, self.rx_pos);
        push([t, r], (p - t).norm() + (r - p).norm())?;
        for &s in &self.reflectors {
            push([s, r], (s - t).norm() + (p - s).norm() + (r - p).norm())?;
            push([t, s], (p - t).norm() + (s - p).norm() + (r - s).norm())?;
        }
        Ok(out)
    }
}

/// Trapezoidal integral of the velocity at frame times.
fn integrated_displacement(traj: &Trajectory, n_frames: usize, dt: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let vel: Vec<Vec3> = (0..n_frames).map(|s| traj.velocity(s as f64 * dt)).collect();
    let mut disp = Vec::with_capacity(n_frames);
    let mut acc = Vec3::ZERO;
    disp.push(acc);
    for s in 1..n_frames {
        acc = acc + (vel[s - 1] + vel[s]) * (0.5 * dt);
        disp.push(acc);
    }
    (vel, disp)
}

/// Synthesizes CSI for `scene`; identical `(scene, seed)` gives an identical frame.
pub fn synthesize_csi(scene: &Scene, rng_seed: u64) -> Result<(CsiFrame, GroundTruth)> {
    scene.validate()?;
    let radio = scene.radio;
    let n_sub = radio.n_subcarriers;
    let n_frames = scene.n_frames();
    let dt = 1.0 / scene.frame_rate_hz;
    let (vel, disp) = integrated_displacement(&scene.trajectory, n_frames, dt);
    let k_doppler = TAU * radio.carrier_hz / radio.speed_of_light();

    // Per-subcarrier static phasor of a delay.
    let steering = |tau: f64| -> Vec<Complex64> {
        (0..n_sub)
            .map(|n| Complex64::from_polar(1.0, -TAU * radio.subcarrier_hz(n) * tau))
            .collect()
    };
    let cluster_steer: Vec<Vec<Complex64>> = scene.clusters.iter().map(|c| steering(c.delay_s)).collect();
    let mut static_chan = vec![Complex64::new(0.0, 0.0); n_sub];
    for p in &scene.static_paths {
        let g = Complex64::new(p.gain[0], p.gain[1]);
        for (h, e) in static_chan.iter_mut().zip(steering(p.delay_s)) {
            *h += g * e;
        }
    }

    let mut data = vec![Complex64::new(0.0, 0.0); scene.n_streams * n_sub * n_frames];
    let mut motion = vec![Complex64::new(0.0, 0.0); n_frames];
    for stream in 0..scene.n_streams {
        let mut rng = seed::rng(seed::derive_indexed(rng_seed, "simulator/stream", stream as u64));
        let base = stream * n_sub * n_frames;
        for (n, &h) in static_chan.iter().enumerate() {
            data[base + n * n_frames..base + (n + 1) * n_frames].fill(h);
        }
        for (ci, c) in scene.clusters.iter().enumerate() {
            let dirs = sample_vmf(c.mean_direction, c.kappa, c.n_scatterers, &mut rng)?;
            let gains: Vec<Complex64> = dirs
                .iter()
                .map(|_| match c.gain {
                    GainProfile::Constant { re, im } => Complex64::new(re, im),
                    GainProfile::RandomPhase { magnitude } => {
                        Complex64::from_polar(magnitude, rng.random::<f64>() * TAU)
                    }
                })
                .collect();
            let inv = 1.0 / c.n_scatterers as f64;
            for (s, m) in motion.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (r, g) in dirs.iter().zip(&gains) {
                    acc += g * Complex64::from_polar(1.0, k_doppler * c.doppler_scale * r.dot(disp[s]));
                }
                *m = acc * inv;
            }
            for (n, e) in cluster_steer[ci].iter().enumerate() {
                let row = &mut data[base + n * n_frames..base + (n + 1) * n_frames];
                for (h, m) in row.iter_mut().zip(&motion) {
                    *h += e * m;
                }
            }
        }
        apply_distortions(&mut data[base..base + n_sub * n_frames], scene, stream, &mut rng);
    }

    let mut frame = CsiFrame::new(radio, scene.n_streams, n_frames, data)?;
    if let Some(snr_db) = scene.noise.awgn_snr_db {
        add_awgn(&mut frame, snr_db, seed::derive(rng_seed, "simulator/awgn"));
    }

    let clusters = scene
        .clusters
        .iter()
        .map(|c| ClusterTruth {
            mean_direction: c.mean_direction,
            kappa: c.kappa,
            delay_s: c.delay_s,
            delay_bins: c.delay_s * radio.bandwidth_hz(),
            projected_velocity: vel.iter().map(|v| c.doppler_scale * v.dot(c.mean_direction)).collect(),
        })
        .collect();
    Ok((
        frame,
        GroundTruth {
            clusters,
            velocity: vel,
        },
    ))
}

/// Multiplies one stream's `[subcarrier][time]` block by the hardware terms.
fn apply_distortions<R: Rng>(block: &mut [Complex64], scene: &Scene, stream: usize, rng: &mut R) {
    let noise = &scene.noise;
    let radio = scene.radio;
    let n_sub = radio.n_subcarriers;
    let n_frames = block.len() / n_sub;
    let csd = noise.csd_delay_s.get(stream).copied().unwrap_or(0.0);
    let sfo = noise.sfo_ratio.unwrap_or(1.0) - 1.0;
    let bf = noise.beamforming.as_ref().map(|b| {
        let a = b.amplitude.get(stream).copied().unwrap_or(1.0);
        let z = b.phase_cycles.get(stream).copied().unwrap_or(0.0);
        Complex64::from_polar(a, -TAU * z)
    });
    if csd == 0.0 && noise.sto_s == 0.0 && (sfo == 0.0 || noise.sfo_eta_per_frame_s == 0.0) && bf.is_none() {
        return;
    }
    let mut rho = 0.0;
    for s in 0..n_frames {
        if noise.sto_s > 0.0 {
            let step: f64 = StandardNormal.sample(rng);
            rho += noise.sto_s * step;
        }
        let eta = noise.sfo_eta_per_frame_s * s as f64;
        // Every term is a delay-like phase on the subcarrier frequency.
        let delay = csd + rho + eta * sfo;
        for n in 0..n_sub {
            let mut z = Complex64::from_polar(1.0, -TAU * delay * radio.subcarrier_hz(n));
            if let Some(b) = bf {
                z *= b;
            }
            block[n * n_frames + s] *= z;
        }
    }
}

/// Adds complex white noise per stream at `snr_db` below that stream's mean power.
fn add_awgn(frame: &mut CsiFrame, snr_db: f64, seed_: u64) {
    let mut rng = seed::rng(seed_);
    let per_stream = frame.n_subcarriers() * frame.n_time();
    for block in frame.data_mut().chunks_mut(per_stream) {
        let power = block.iter().map(|z| z.norm_sqr()).sum::<f64>() / per_stream as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        for z in block.iter_mut() {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sigma * a, sigma * b);
        }
    }
}

/// Scene with no motion-bearing content, used as a starting point.
pub fn basic_scene(radio: RadioConfig, duration_s: f64) -> Scene {
    Scene {
        tx_pos: Vec3::new(0.0, 0.0, 1.0),
        rx_pos: Vec3::new(4.0, 0.0, 1.0),
        reflectors: vec![],
        point_start: Vec3::new(2.0, 1.0, 1.0),
        trajectory: Trajectory::ConstantVelocity { velocity: Vec3::ZERO },
        clusters: vec![],
        static_paths: vec![],
        noise: NoiseParams::default(),
        radio,
        duration_s,
        frame_rate_hz: radio.sample_rate_hz,
        n_streams: 1,
    }
}
