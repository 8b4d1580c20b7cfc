//! Acceptance suite. Each test prints one `PASS`/`FAIL` line.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use moric::classifier::{
    argmax, loss_and_grad, smoothed_loss, softmax, Architecture, Calibration, MoricModel, Sample, TrainConfig,
};
use moric::delay_doppler::{
    decompose, delay_profiles, estimate_velocity_phase, estimate_velocity_psd, sinc_n, DopplerParams,
};
use moric::harness::{generate_dataset, load_samples, run_loso, Manifest, SyntheticConfig};
use moric::pipeline::PipelineConfig;
use moric::sanitize::compensate_phase;
use moric::seed::rng;
use moric::simulator::{
    basic_scene, path_length_change, synthesize_csi, GainProfile, ScatterCluster, StaticPath, Trajectory, Vec3,
};
use moric::{CsiFrame, FeatureRow, FeatureSet, Gesture, RadioConfig};

/// Written to the stderr handle directly so the line survives test output capture.
fn report_line(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(id: u32, name: &str, ok: bool, detail: String, started: Instant) {
    report_line(&format!(
        "[{id}] {name}: {} ({detail}; {:.2} s)",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    ));
    assert!(ok, "[{id}] {name}: {detail}");
}

fn radio(n: usize) -> RadioConfig {
    RadioConfig {
        n_subcarriers: n,
        ..RadioConfig::wifi_2g4()
    }
}

fn phase_std(frame: &CsiFrame, t: usize) -> f64 {
    let ph: Vec<f64> = frame.snapshot(0, t).iter().map(|z| z.arg()).collect();
    // Residual phases are small, so no unwrapping is needed.
    let m = ph.iter().sum::<f64>() / ph.len() as f64;
    (ph.iter().map(|p| (p - m).powi(2)).sum::<f64>() / ph.len() as f64).sqrt()
}

#[test]
fn c01_phase_compensation() {
    let started = Instant::now();
    let r = radio(52);
    let mut scene = basic_scene(r, 2.0);
    scene.static_paths.push(StaticPath {
        delay_s: 0.0,
        gain: [1.0, 0.0],
    });
    let mut distorted = scene.clone();
    distorted.noise.csd_delay_s = vec![-150e-9];
    distorted.noise.sto_s = 3e-9;
    distorted.noise.sfo_eta_per_frame_s = 1e-5;
    distorted.noise.sfo_ratio = Some(1.0 + 50e-6);
    let (raw, _) = synthesize_csi(&distorted, 1).unwrap();
    let before = (0..raw.n_time()).map(|t| phase_std(&raw, t)).fold(0.0, f64::max);
    let comp = compensate_phase(&raw).unwrap();
    let worst = (0..comp.n_time()).map(|t| phase_std(&comp, t)).fold(0.0, f64::max);

    let mut noisy_clean = scene.clone();
    noisy_clean.noise.awgn_snr_db = Some(30.0);
    let mut noisy_dist = distorted.clone();
    noisy_dist.noise.awgn_snr_db = Some(30.0);
    let mean_std = |f: &CsiFrame| (0..f.n_time()).map(|t| phase_std(f, t)).sum::<f64>() / f.n_time() as f64;
    let a = mean_std(&compensate_phase(&synthesize_csi(&noisy_clean, 7).unwrap().0).unwrap());
    let b = mean_std(&compensate_phase(&synthesize_csi(&noisy_dist, 7).unwrap().0).unwrap());
    let rel = (b - a).abs() / a;
    verdict(
        1,
        "phase compensation",
        worst <= 1e-6 && rel <= 0.10,
        format!(
            "raw std up to {before:.3} rad, residual {worst:.2e} rad; 30 dB std {b:.4} vs clean {a:.4} ({:.1}%)",
            rel * 100.0
        ),
        started,
    );
}

/// Continuous delay profile `|(1/N) sum_n H_n exp(j 2 pi n Δf tau)|`.
fn fine_profile(h: &[Complex64], r: &RadioConfig, taus: &[f64]) -> Vec<f64> {
    taus.iter()
        .map(|&tau| {
            (h.iter()
                .enumerate()
                .map(|(n, z)| z * Complex64::from_polar(1.0, TAU * n as f64 * r.subcarrier_spacing_hz * tau))
                .sum::<Complex64>()
                / h.len() as f64)
                .norm()
        })
        .collect()
}

fn local_maxima(x: &[f64]) -> usize {
    (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .count()
}

#[test]
fn c02_delay_recovery() {
    let started = Instant::now();
    let r = radio(52);
    let dt = r.delay_resolution_s();
    let mut failures = Vec::new();
    for sep in [1usize, 2, 4] {
        let mut hits = 0;
        for trial in 0..100u64 {
            let mut g = rng(trial * 31 + sep as u64);
            let a = g.random_range(1..52 - sep - 1);
            let mut scene = basic_scene(r, 0.05);
            for bin in [a, a + sep] {
                let mag = g.random_range(0.5..1.0);
                let ph = g.random_range(0.0..TAU);
                scene.static_paths.push(StaticPath {
                    delay_s: bin as f64 * dt,
                    gain: [mag * ph.cos(), mag * ph.sin()],
                });
            }
            scene.noise.awgn_snr_db = Some(30.0);
            let (f, _) = synthesize_csi(&scene, trial).unwrap();
            let p = &delay_profiles(&f)[0];
            let mags = p.magnitudes_at(0);
            let mut idx: Vec<usize> = (0..52).collect();
            idx.sort_by(|&i, &j| mags[j].total_cmp(&mags[i]));
            let mut top = [idx[0], idx[1]];
            top.sort();
            if top == [a, a + sep] {
                hits += 1;
            }
        }
        if hits < 99 {
            failures.push(format!("separation {sep}: {hits}/100"));
        }
    }
    // Unresolvable pair versus a resolvable one on a fine delay grid.
    let count_peaks = |sep_bins: f64| {
        let mut scene = basic_scene(r, 0.05);
        let base = 20.3 * dt;
        for tau in [base, base + sep_bins * dt] {
            scene.static_paths.push(StaticPath {
                delay_s: tau,
                gain: [1.0, 0.0],
            });
        }
        let (f, _) = synthesize_csi(&scene, 0).unwrap();
        let taus: Vec<f64> = (0..=400)
            .map(|k| base - 1.0 * dt + k as f64 * (sep_bins + 2.0) * dt / 400.0)
            .collect();
        // Static phase common to every subcarrier is irrelevant to |h|.
        local_maxima(&fine_profile(&f.snapshot(0, 0), &r, &taus))
    };
    let merged = count_peaks(0.25);
    let split = count_peaks(2.0);
    if merged != 1 || split != 2 {
        failures.push(format!("peaks: quarter-bin {merged}, two-bin {split}"));
    }
    let ok = failures.is_empty();
    verdict(
        2,
        "delay recovery",
        ok,
        if ok {
            "all separations >= 99/100, quarter-bin pair merges".into()
        } else {
            failures.join(", ")
        },
        started,
    );
}

#[test]
fn c03_doppler_oracle() {
    let started = Instant::now();
    let r = radio(16);
    let params = DopplerParams::default();
    let cell = params.velocity_resolution(&r);
    let bound = cell.max(0.05);
    let m = Vec3::new(0.6, 0.0, 0.8);
    let mut details = Vec::new();
    let mut ok = true;
    for &target in &[-1.5, -0.5, 0.5, 1.5] {
        let mut scene = basic_scene(r, 3.0);
        scene.trajectory = Trajectory::ConstantVelocity { velocity: m * target };
        scene.static_paths.push(StaticPath {
            delay_s: 0.0,
            gain: [1.0, 0.0],
        });
        scene.clusters.push(ScatterCluster {
            mean_direction: m,
            kappa: 1e6,
            n_scatterers: 64,
            gain: GainProfile::Constant { re: 0.5, im: 0.0 },
            delay_s: 5.0 * r.delay_resolution_s(),
            doppler_scale: 1.0,
        });
        scene.noise.awgn_snr_db = Some(40.0);
        let (f, truth) = synthesize_csi(&scene, 3).unwrap();
        let series = decompose(&f)[0].bin(5).to_vec();
        let v_true = &truth.clusters[0].projected_velocity;
        let psd = estimate_velocity_psd(&series, &r, &params).unwrap();
        let ph = estimate_velocity_phase(&series, &r);
        let rms =
            |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        let e_psd = rms(&psd, v_true);
        let e_agree = rms(&ph, &psd);
        ok &= e_psd <= bound && e_agree <= 0.1;
        details.push(format!("{target:+.1}: psd {e_psd:.4}, phase-vs-psd {e_agree:.4}"));
    }
    verdict(
        3,
        "doppler oracle",
        ok,
        format!("bound {bound:.4} m/s; {}", details.join("; ")),
        started,
    );
}

#[test]
fn c04_first_order_bound() {
    let started = Instant::now();
    let mut g = rng(44);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let observer = Vec3::new(
            g.random_range(-5.0..5.0),
            g.random_range(-5.0..5.0),
            g.random_range(-5.0..5.0),
        );
        let dir = Vec3::new(
            g.random_range(-1.0..1.0),
            g.random_range(-1.0..1.0),
            g.random_range(-1.0..1.0),
        );
        let Some(dir) = dir.normalized() else { continue };
        let d = g.random_range(0.2..8.0);
        let p0 = observer + dir * d;
        let t = g.random_range(0.01..1.0);
        let speed = g.random_range(0.0..=0.1) * d / t;
        let vd = Vec3::new(
            g.random_range(-1.0..1.0),
            g.random_range(-1.0..1.0),
            g.random_range(-1.0..1.0),
        );
        let v = vd.normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0)) * speed;
        let c = path_length_change(observer, p0, v, t).unwrap();
        let bound = (speed * t).powi(2) / (2.0 * d);
        let err = (c.exact_m - c.approx_m).abs();
        if bound > 0.0 {
            worst = worst.max(err / bound);
        }
        if err > bound * (1.0 + 1e-9) + 1e-15 {
            violations += 1;
        }
    }
    verdict(
        4,
        "first-order path bound",
        violations == 0,
        format!("{violations} violations, worst ratio {worst:.4}"),
        started,
    );
}

fn random_set(g: &mut impl Rng, rows: usize, d: usize) -> FeatureSet {
    let rows = (0..rows)
        .map(|i| FeatureRow {
            values: (0..d).map(|_| g.random_range(-1.0..1.0)).collect(),
            delay_bin: i as u32,
            stream: 0,
            gated: false,
        })
        .collect();
    FeatureSet::new(rows, d).unwrap()
}

#[test]
fn c05_set_invariance() {
    let started = Instant::now();
    let arch = Architecture {
        input_dim: 1000,
        n_heads: 2,
        head_hidden: 256,
        reduced_dim: 128,
        cls_hidden: 128,
        n_classes: 4,
    };
    let model = MoricModel::init(arch, Gesture::STANDARD.to_vec(), 5).unwrap();
    let mut g = rng(55);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n_rows = g.random_range(2..12);
        let fs = random_set(&mut g, n_rows, 1000);
        let (z, _) = model.forward(&fs).unwrap();
        let mut perm = fs.clone();
        perm.rows.shuffle(&mut g);
        let mut dup = fs.clone();
        for _ in 0..g.random_range(1..4) {
            let i = g.random_range(0..fs.rows.len());
            let pos = g.random_range(0..=dup.rows.len());
            dup.rows.insert(pos, fs.rows[i].clone());
        }
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(&model.forward(&perm).unwrap().0, &z) || !same(&model.forward(&dup).unwrap().0, &z) {
            mismatches += 1;
        }
    }
    verdict(
        5,
        "set invariance",
        mismatches == 0,
        format!("{mismatches}/100 sets differ"),
        started,
    );
}

#[test]
fn c06_gradient_check() {
    let started = Instant::now();
    let arch = Architecture {
        input_dim: 12,
        n_heads: 2,
        head_hidden: 8,
        reduced_dim: 6,
        cls_hidden: 7,
        n_classes: 4,
    };
    let model = MoricModel::init(arch, Gesture::STANDARD.to_vec(), 6).unwrap();
    let mut g = rng(66);
    let mut sets: Vec<FeatureSet> = (0..6).map(|i| random_set(&mut g, 1 + i % 4, 12)).collect();
    // Exact ties in the pooling: a duplicated row.
    let dup = sets[3].rows[0].clone();
    sets[3].rows.push(dup);
    let samples: Vec<Sample<'_>> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| Sample {
            features: s,
            class: i % 4,
        })
        .collect();
    let (_, grad) = loss_and_grad(&model, &samples, 0.1).unwrap();

    // Probe parameters: spread over every block of the flat layout.
    let head_len = 12 * 8 + 8 + 8 * 6 + 6;
    let cls_start = 2 * head_len;
    let blocks = [
        (0, 96),
        (96, 104),
        (104, 152),
        (152, 158),
        (head_len, head_len + 96),
        (head_len + 104, head_len + 152),
        (cls_start, cls_start + 12 * 7),
        (cls_start + 84, cls_start + 91),
        (cls_start + 91, cls_start + 91 + 28),
        (cls_start + 119, cls_start + 123),
    ];
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for (lo, hi) in blocks {
        let Some(i) = (lo..hi).max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())) else {
            continue;
        };
        let mut plus = model.clone();
        plus.params[i] += eps;
        let mut minus = model.clone();
        minus.params[i] -= eps;
        let fd = (smoothed_loss(&plus, &samples, 0.1).unwrap() - smoothed_loss(&minus, &samples, 0.1).unwrap())
            / (2.0 * eps);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
        worst = worst.max(rel);
        probes += 1;
    }
    verdict(
        6,
        "gradient check",
        probes == 10 && worst < 1e-4,
        format!("{probes} probes, worst relative error {worst:.2e}"),
        started,
    );
}

#[test]
fn c07_end_to_end_loso() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = SyntheticConfig {
        radio: radio(16),
        seed: 2024,
        ..SyntheticConfig::default()
    };
    generate_dataset(&data, dir.path()).unwrap();
    let manifest = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    let pipeline = PipelineConfig {
        n_kernels: 50,
        ..PipelineConfig::default()
    };
    let (_, samples) = load_samples(&manifest, &pipeline, 7, None).unwrap();
    let featurized = started.elapsed().as_secs_f64();
    let cfg = TrainConfig {
        lr: 1e-3,
        batch: 32,
        max_epochs: 150,
        patience: 30,
        head_hidden: 64,
        reduced_dim: 32,
        cls_hidden: 32,
        ..TrainConfig::default()
    };
    let report = run_loso(&samples, &cfg, 7).unwrap();
    let folds: Vec<String> = report
        .folds
        .iter()
        .map(|f| format!("{} {:.3}", f.subject, f.accuracy))
        .collect();
    verdict(
        7,
        "end-to-end LOSO",
        report.mean_accuracy >= 0.90 && started.elapsed().as_secs_f64() < 1200.0,
        format!(
            "mean {:.3} +- {:.3} over {} folds [{}], features in {featurized:.1} s",
            report.mean_accuracy,
            report.sd_accuracy,
            report.folds.len(),
            folds.join(", ")
        ),
        started,
    );
}

#[test]
fn c08_parseval_and_leakage() {
    let started = Instant::now();
    let mut g = rng(88);
    let n = 52;
    let data: Vec<Complex64> = (0..3 * n * 40)
        .map(|_| Complex64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)))
        .collect();
    let frame = CsiFrame::new(radio(n), 3, 40, data).unwrap();
    let mut parseval: f64 = 0.0;
    for p in delay_profiles(&frame) {
        for t in 0..40 {
            let lhs: f64 = (0..n).map(|i| p.bin(i)[t].norm_sqr()).sum();
            let rhs: f64 = frame.snapshot(p.stream, t).iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            parseval = parseval.max((lhs - rhs).abs() / rhs);
        }
    }
    let r = radio(n);
    let mut leakage: f64 = 0.0;
    for _ in 0..50 {
        let tau = g.random_range(0.0..40.0) * r.delay_resolution_s();
        let gain = g.random_range(0.2..2.0);
        let mut scene = basic_scene(r, 0.02);
        scene.static_paths.push(StaticPath {
            delay_s: tau,
            gain: [gain, 0.0],
        });
        let (f, _) = synthesize_csi(&scene, 0).unwrap();
        let mags = delay_profiles(&f)[0].magnitudes_at(0);
        for (i, m) in mags.iter().enumerate() {
            let expect = gain * sinc_n(r.subcarrier_spacing_hz * (r.bin_delay_s(i) - tau), n).abs();
            leakage = leakage.max((m - expect).abs());
        }
    }
    verdict(
        8,
        "parseval and leakage",
        parseval <= 1e-10 && leakage <= 1e-6,
        format!("parseval rel {parseval:.2e}, leakage abs {leakage:.2e}"),
        started,
    );
}

#[test]
fn c09_calibration_limits() {
    let started = Instant::now();
    let mut g = rng(99);
    let mut identity: f64 = 0.0;
    let mut uniform: f64 = 0.0;
    let mut flips = 0;
    for _ in 0..1000 {
        let c = g.random_range(2..8);
        let z: Vec<f64> = (0..c).map(|_| g.random_range(-10.0..10.0)).collect();
        let p = softmax(&z);
        let q = Calibration::identity(c).apply(&z);
        identity = identity.max(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let hot = Calibration {
            temperature: 1e12,
            bias: vec![0.0; c],
        }
        .apply(&z);
        uniform = uniform.max(hot.iter().map(|v| (v - 1.0 / c as f64).abs()).fold(0.0, f64::max));
        let t = g.random_range(0.05..50.0);
        if argmax(
            &Calibration {
                temperature: t,
                bias: vec![0.0; c],
            }
            .apply(&z),
        ) != argmax(&p)
        {
            flips += 1;
        }
    }
    verdict(
        9,
        "calibration limits",
        identity == 0.0 && uniform <= 1e-9 && flips == 0,
        format!("identity max diff {identity:.1e}, T->inf max dev {uniform:.1e}, {flips} argmax flips"),
        started,
    );
}

/// Runs only when `MORIC_REAL_MANIFEST` points at a manifest of converted captures.
#[test]
fn c10_real_data() {
    let started = Instant::now();
    let Ok(path) = std::env::var("MORIC_REAL_MANIFEST") else {
        report_line("[10] real-data reproduction: SKIPPED (set MORIC_REAL_MANIFEST to run; informative only)");
        return;
    };
    let mut manifest = Manifest::load(std::path::Path::new(&path)).unwrap();
    manifest.filters.orientation_deg = Some(180);
    let (_, samples) = load_samples(&manifest, &PipelineConfig::default(), 0, None).unwrap();
    let report = run_loso(&samples, &TrainConfig::default(), 0).unwrap();
    let ok = report.mean_accuracy >= 0.45;
    report_line(&format!(
        "[10] real-data reproduction: {} (mean {:.3} +- {:.3}; {:.0} s; informative only)",
        if ok { "PASS" } else { "FAIL" },
        report.mean_accuracy,
        report.sd_accuracy,
        started.elapsed().as_secs_f64()
    ));
}
