//! Synthetic gesture datasets with per-subject geometry.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestEntry};
use crate::error::Result;
use crate::formats::write_csit;
use crate::seed;
use crate::simulator::{synthesize_csi, GainProfile, GestureShape, NoiseParams, Scene, StaticPath, Trajectory, Vec3};
use crate::types::{Gesture, RadioConfig, SampleMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub per_class: usize,
    pub gestures: Vec<GestureShape>,
    pub radio: RadioConfig,
    pub duration_s: f64,
    pub n_streams: usize,
    pub snr_db: f64,
    pub kappa: f64,
    pub n_scatterers: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_subjects: 6,
            per_class: 20,
            gestures: vec![
                GestureShape::Circle,
                GestureShape::LeftRight,
                GestureShape::UpDown,
                GestureShape::PushPull,
            ],
            radio: RadioConfig::wifi_2g4(),
            duration_s: 5.0,
            n_streams: 1,
            snr_db: 25.0,
            kappa: 200.0,
            n_scatterers: 32,
            seed: 0,
        }
    }
}

/// Nominal period of each gesture, s.
pub fn nominal_period_s(shape: GestureShape) -> f64 {
    match shape {
        GestureShape::Circle => 2.4,
        GestureShape::LeftRight => 1.2,
        GestureShape::UpDown => 1.7,
        GestureShape::PushPull => 3.4,
    }
}

/// Geometry and motion style shared by all samples of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub name: String,
    pub rx_pos: Vec3,
    pub point: Vec3,
    pub reflectors: Vec<Vec3>,
    pub yaw_deg: f64,
    pub period_scale: f64,
    pub amplitude_scale: f64,
    /// Delay bin of each path: moving clusters first, then static reflections.
    pub path_bins: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn subject_profile(cfg: &SyntheticConfig, index: usize) -> SubjectProfile {
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "dataset/subject", index as u64));
    let rx_pos = Vec3::new(
        uniform(&mut rng, 3.0, 5.0),
        uniform(&mut rng, -0.5, 0.5),
        uniform(&mut rng, 0.4, 0.8),
    );
    let point = Vec3::new(
        rx_pos.x() / 2.0 + uniform(&mut rng, -0.5, 0.5),
        uniform(&mut rng, 0.8, 1.8),
        uniform(&mut rng, 0.9, 1.3),
    );
    let reflectors = (0..2)
        .map(|_| {
            Vec3::new(
                uniform(&mut rng, -1.0, 6.0),
                uniform(&mut rng, -3.0, 3.0),
                uniform(&mut rng, 0.0, 2.5),
            )
        })
        .collect();
    let mut bins: Vec<usize> = (1..cfg.radio.n_subcarriers.saturating_sub(1).max(2)).collect();
    bins.shuffle(&mut rng);
    SubjectProfile {
        name: format!("s{:02}", index + 1),
        rx_pos,
        point,
        reflectors,
        yaw_deg: uniform(&mut rng, -25.0, 25.0),
        period_scale: uniform(&mut rng, 0.92, 1.08),
        amplitude_scale: uniform(&mut rng, 0.8, 1.2),
        path_bins: bins,
    }
}

/// Scene of one sample, with per-sample jitter drawn from `sample_seed`.
pub fn synthetic_scene(
    cfg: &SyntheticConfig,
    subject: &SubjectProfile,
    shape: GestureShape,
    sample_seed: u64,
) -> Result<Scene> {
    let mut rng = seed::rng(seed::derive(sample_seed, "dataset/scene"));
    let onset = uniform(&mut rng, 0.5, 0.8);
    let jitter = Vec3::new(
        uniform(&mut rng, -0.05, 0.05),
        uniform(&mut rng, -0.05, 0.05),
        uniform(&mut rng, -0.05, 0.05),
    );
    let tx = Vec3::new(0.0, 0.0, 2.0);
    let mut scene = Scene {
        tx_pos: tx,
        rx_pos: subject.rx_pos,
        reflectors: subject.reflectors.clone(),
        point_start: subject.point + jitter,
        trajectory: Trajectory::Gesture {
            shape,
            amplitude_m: 0.25 * subject.amplitude_scale * uniform(&mut rng, 0.95, 1.05),
            period_s: nominal_period_s(shape) * subject.period_scale * uniform(&mut rng, 0.97, 1.03),
            yaw_deg: subject.yaw_deg + uniform(&mut rng, -10.0, 10.0),
            onset_s: onset,
            motion_s: cfg.duration_s - onset - 0.6,
        },
        clusters: vec![],
        static_paths: vec![],
        noise: NoiseParams {
            csd_delay_s: (0..cfg.n_streams).map(|s| -200e-9 * s as f64).collect(),
            sto_s: 1e-9,
            awgn_snr_db: Some(cfg.snr_db),
            ..NoiseParams::default()
        },
        radio: cfg.radio,
        duration_s: cfg.duration_s,
        frame_rate_hz: cfg.radio.sample_rate_hz,
        n_streams: cfg.n_streams,
    };
    // Indoor path differences are far below one delay bin; spread the paths
    // over distinct bins so each moving cluster is resolvable on its own.
    let bin_s = cfg.radio.delay_resolution_s();
    let mut bins = subject.path_bins.iter().cycle();
    let mut clusters =
        scene.geometric_clusters(cfg.kappa, cfg.n_scatterers, GainProfile::RandomPhase { magnitude: 0.1 })?;
    for c in clusters.iter_mut() {
        c.delay_s = (*bins.next().unwrap_or(&1) as f64 + uniform(&mut rng, -0.1, 0.1)) * bin_s;
    }
    if let Some(first) = clusters.first_mut() {
        first.gain = GainProfile::RandomPhase { magnitude: 0.3 };
    }
    scene.clusters = clusters;
    scene.static_paths.push(StaticPath {
        delay_s: 0.0,
        gain: [1.0, 0.0],
    });
    for _ in &subject.reflectors {
        let phase = uniform(&mut rng, 0.0, std::f64::consts::TAU);
        scene.static_paths.push(StaticPath {
            delay_s: (*bins.next().unwrap_or(&1) as f64 + uniform(&mut rng, -0.1, 0.1)) * bin_s,
            gain: [0.3 * phase.cos(), 0.3 * phase.sin()],
        });
    }
    Ok(scene)
}

/// Every sample of the dataset as (metadata, scene, simulator seed), in a fixed order.
pub fn synthetic_samples(cfg: &SyntheticConfig) -> Result<Vec<(SampleMeta, Scene, u64)>> {
    let mut out = Vec::new();
    for si in 0..cfg.n_subjects {
        let subject = subject_profile(cfg, si);
        for &shape in &cfg.gestures {
            let gesture: Gesture = shape.gesture();
            for rep in 0..cfg.per_class {
                let index = out.len() as u64;
                let sample_seed = seed::derive_indexed(cfg.seed, "dataset/sample", index);
                let scene = synthetic_scene(cfg, &subject, shape, sample_seed)?;
                let meta = SampleMeta {
                    sample_id: format!("{}_{}_{rep:03}", subject.name, gesture),
                    subject: subject.name.clone(),
                    orientation_deg: 0,
                    gesture: gesture.clone(),
                    access_point: "ap0".into(),
                };
                out.push((meta, scene, sample_seed));
            }
        }
    }
    Ok(out)
}

/// Writes labelled CSIT files and a manifest into `dir`.
pub fn generate_dataset(cfg: &SyntheticConfig, dir: &Path) -> Result<Manifest> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir)?;
    let samples = synthetic_samples(cfg)?;
    let entries = samples
        .par_iter()
        .map(|(meta, scene, sample_seed)| {
            let (frame, _) = synthesize_csi(scene, *sample_seed)?;
            let name = format!("{}.csit", meta.sample_id);
            write_csit(&frame.with_labels(meta.clone()), &dir.join(&name))?;
            Ok(ManifestEntry {
                path: name.into(),
                meta: meta.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        entries,
        filters: Default::default(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_valid_and_deterministic() {
        let cfg = SyntheticConfig {
            n_subjects: 2,
            per_class: 2,
            ..SyntheticConfig::default()
        };
        let a = synthetic_samples(&cfg).unwrap();
        assert_eq!(a.len(), 2 * 4 * 2);
        for (_, scene, _) in &a {
            scene.validate().unwrap();
        }
        assert_eq!(a, synthetic_samples(&cfg).unwrap());
        assert_ne!(subject_profile(&cfg, 0), subject_profile(&cfg, 1));
    }
}
