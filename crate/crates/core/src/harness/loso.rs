//! Loading labelled samples, leave-one-subject-out evaluation and
//! few-shot calibration sweeps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::manifest::{Manifest, ManifestEntry};
use super::report::{mean_sd, CalibrationPoint, FoldResult, Report, SnrSummary};
use crate::classifier::{
    argmax, calibrate, fit_calibration, stratified_split, train, Calibration, MoricModel, Sample, TrainConfig,
    TrainLog, CALIBRATION_STEPS, CALIBRATION_STEP_SIZE,
};
use crate::error::{Error, Result};
use crate::features::KernelBank;
use crate::formats::{read_csit, read_dvel, read_feat, sniff, FileKind};
use crate::pipeline::{csi_to_velocity, velocity_to_features, PipelineConfig};
use crate::seed;
use crate::types::{FeatureSet, Gesture, SampleMeta, VelocitySet};

pub const VAL_FRACTION: f64 = 0.15;
pub const CALIBRATION_DRAWS: usize = 10;

/// One featurized, labelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub meta: SampleMeta,
    pub features: FeatureSet,
    /// `(stream, delay_bin, snr_db, gated)` of each velocity vector, when known.
    pub snr: Vec<(u32, u32, f64, bool)>,
}

enum Staged {
    Velocity(VelocitySet),
    Features(FeatureSet),
}

fn stage(entry: &ManifestEntry, cfg: &PipelineConfig) -> Result<Staged> {
    let with_path = |e: Error| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", entry.path.display())),
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", entry.path.display())),
        other => other,
    };
    let staged = match sniff(&entry.path)? {
        FileKind::Csit => Staged::Velocity(csi_to_velocity(&read_csit(&entry.path)?, cfg).map_err(with_path)?),
        FileKind::Dvel => Staged::Velocity(read_dvel(&entry.path).map_err(with_path)?),
        FileKind::Feat => Staged::Features(read_feat(&entry.path).map_err(with_path)?),
        FileKind::Model => {
            return Err(Error::format(format!(
                "{}: model file listed as a sample",
                entry.path.display()
            )));
        }
    };
    Ok(staged)
}

/// Featurizes every selected manifest entry, in manifest order.
///
/// CSIT and DVEL entries go through the remaining stages. When `bank` is
/// `None` one is built from `root_seed` for the common series length;
/// FEAT entries require an explicit bank so their width can be checked.
pub fn load_samples(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    root_seed: u64,
    bank: Option<KernelBank>,
) -> Result<(KernelBank, Vec<LoadedSample>)> {
    let entries = manifest.selected();
    if entries.is_empty() {
        return Err(Error::invalid("manifest selects no samples"));
    }
    let staged = entries.par_iter().map(|e| stage(e, cfg)).collect::<Result<Vec<_>>>()?;
    let bank = match bank {
        Some(b) => b,
        None => {
            let n_time = staged
                .iter()
                .find_map(|s| match s {
                    Staged::Velocity(v) => Some(v.n_time),
                    Staged::Features(_) => None,
                })
                .ok_or_else(|| Error::invalid("feature-only manifests need a kernel bank"))?;
            cfg.bank(root_seed, n_time)?
        }
    };
    let samples = staged
        .into_par_iter()
        .zip(entries.par_iter())
        .map(|(s, e)| {
            let (features, snr) = match s {
                Staged::Velocity(v) => {
                    let snr = v
                        .vectors
                        .iter()
                        .map(|x| (x.stream, x.delay_bin, x.snr_db, x.gated))
                        .collect();
                    (velocity_to_features(&v, &bank)?, snr)
                }
                Staged::Features(f) => {
                    if f.dim != bank.dim() {
                        return Err(Error::invalid(format!(
                            "{}: feature width {} does not match bank width {}",
                            e.path.display(),
                            f.dim,
                            bank.dim()
                        )));
                    }
                    (f, vec![])
                }
            };
            Ok(LoadedSample {
                meta: e.meta.clone(),
                features: features.with_label(e.meta.gesture.clone()),
                snr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((bank, samples))
}

/// Classes in a fixed order: the standard gestures first, then others by name.
pub fn class_list(samples: &[LoadedSample]) -> Vec<Gesture> {
    let mut classes: Vec<Gesture> = Gesture::STANDARD
        .iter()
        .filter(|g| samples.iter().any(|s| &s.meta.gesture == *g))
        .cloned()
        .collect();
    let mut others: Vec<Gesture> = samples
        .iter()
        .map(|s| s.meta.gesture.clone())
        .filter(|g| matches!(g, Gesture::Other(_)))
        .collect();
    others.sort_by(|a, b| a.as_str().cmp(b.as_str()));
    others.dedup();
    classes.extend(others);
    classes
}

/// Median SNR and gated fraction per (stream, delay bin).
pub fn snr_summary(samples: &[LoadedSample]) -> Vec<SnrSummary> {
    let mut groups: BTreeMap<(u32, u32), Vec<(f64, bool)>> = BTreeMap::new();
    for s in samples {
        for &(stream, bin, snr, gated) in &s.snr {
            groups.entry((stream, bin)).or_default().push((snr, gated));
        }
    }
    groups
        .into_iter()
        .map(|((stream, delay_bin), mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n = v.len();
            let median = if n % 2 == 1 {
                v[n / 2].0
            } else {
                0.5 * (v[n / 2 - 1].0 + v[n / 2].0)
            };
            SnrSummary {
                stream,
                delay_bin,
                n_vectors: n,
                median_snr_db: median,
                gated_fraction: v.iter().filter(|x| x.1).count() as f64 / n as f64,
            }
        })
        .collect()
}

fn to_samples<'a>(samples: &[&'a LoadedSample], model_classes: &[Gesture]) -> Result<Vec<Sample<'a>>> {
    samples
        .iter()
        .map(|s| {
            let class = model_classes
                .iter()
                .position(|g| *g == s.meta.gesture)
                .ok_or_else(|| Error::invalid(format!("gesture {} unknown to the model", s.meta.gesture)))?;
            Ok(Sample {
                features: &s.features,
                class,
            })
        })
        .collect()
}

/// Accuracy and confusion counts of `model` on `samples`.
pub fn evaluate(
    model: &MoricModel,
    samples: &[&LoadedSample],
    use_calibration: bool,
    subject: &str,
) -> Result<FoldResult> {
    let c = model.n_classes();
    let test = to_samples(samples, &model.labels)?;
    let preds = test
        .par_iter()
        .map(|s| model.predict(s.features, use_calibration).map(|(k, _)| k))
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = vec![vec![0usize; c]; c];
    for (s, &p) in test.iter().zip(&preds) {
        confusion[s.class][p] += 1;
    }
    let hits = test.iter().zip(&preds).filter(|(s, &p)| s.class == p).count();
    Ok(FoldResult {
        subject: subject.to_string(),
        n_test: test.len(),
        accuracy: if test.is_empty() {
            0.0
        } else {
            hits as f64 / test.len() as f64
        },
        confusion,
        best_epoch: 0,
    })
}

/// Trains on `samples` after holding out a stratified validation split.
pub fn fit_model(
    samples: &[&LoadedSample],
    classes: Vec<Gesture>,
    train_cfg: &TrainConfig,
    split_seed: u64,
    train_seed: u64,
) -> Result<(MoricModel, TrainLog)> {
    let pool = to_samples(samples, &classes)?;
    let labels: Vec<usize> = pool.iter().map(|s| s.class).collect();
    let (tr, va) = stratified_split(&labels, VAL_FRACTION, split_seed);
    let tr: Vec<Sample<'_>> = tr.iter().map(|&i| pool[i]).collect();
    let va: Vec<Sample<'_>> = va.iter().map(|&i| pool[i]).collect();
    let cfg = TrainConfig {
        seed: train_seed,
        ..train_cfg.clone()
    };
    train(&tr, &va, classes, &cfg)
}

/// Trains one model on every sample.
pub fn train_on_all(
    samples: &[LoadedSample],
    train_cfg: &TrainConfig,
    root_seed: u64,
) -> Result<(MoricModel, TrainLog)> {
    let all: Vec<&LoadedSample> = samples.iter().collect();
    fit_model(
        &all,
        class_list(samples),
        train_cfg,
        seed::derive(root_seed, "train/split"),
        seed::derive(root_seed, "train/model"),
    )
}

/// Scores `model` separately on each subject.
pub fn evaluate_by_subject(model: &MoricModel, samples: &[LoadedSample], use_calibration: bool) -> Result<Report> {
    let mut subjects: Vec<&str> = samples.iter().map(|s| s.meta.subject.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    let folds = subjects
        .iter()
        .map(|&subject| {
            let test: Vec<&LoadedSample> = samples.iter().filter(|s| s.meta.subject == subject).collect();
            evaluate(model, &test, use_calibration, subject)
        })
        .collect::<Result<Vec<_>>>()?;
    Report::from_folds("eval", model.labels.clone(), folds, snr_summary(samples))
}

/// Fits the calibration on `per_class` randomly drawn samples of every class.
pub fn fit_few_shot(
    model: &MoricModel,
    samples: &[LoadedSample],
    per_class: usize,
    root_seed: u64,
) -> Result<Calibration> {
    if per_class == 0 {
        return Err(Error::invalid("calibration needs at least one sample per class"));
    }
    let all: Vec<&LoadedSample> = samples.iter().collect();
    let labelled = to_samples(&all, &model.labels)?;
    let mut by_class: Vec<Vec<usize>> = vec![vec![]; model.n_classes()];
    for (i, s) in labelled.iter().enumerate() {
        by_class[s.class].push(i);
    }
    let mut rng = seed::rng(seed::derive(root_seed, "calibration/fit"));
    let mut chosen = Vec::new();
    for (k, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < per_class {
            return Err(Error::invalid(format!(
                "class {} has {} samples, fewer than {per_class}",
                model.labels[k],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..per_class]);
    }
    chosen.sort_unstable();
    let cal_set: Vec<Sample<'_>> = chosen.iter().map(|&i| labelled[i]).collect();
    calibrate(model, &cal_set, CALIBRATION_STEPS, CALIBRATION_STEP_SIZE)
}

/// Trains on all subjects but one and tests on the held-out subject, for
/// every subject in name order.
pub fn run_loso(samples: &[LoadedSample], train_cfg: &TrainConfig, root_seed: u64) -> Result<Report> {
    let mut subjects: Vec<&str> = samples.iter().map(|s| s.meta.subject.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::invalid("leave-one-subject-out needs at least two subjects"));
    }
    let classes = class_list(samples);
    let folds = subjects
        .iter()
        .enumerate()
        .map(|(fold, &subject)| {
            let test: Vec<&LoadedSample> = samples.iter().filter(|s| s.meta.subject == subject).collect();
            let rest: Vec<&LoadedSample> = samples.iter().filter(|s| s.meta.subject != subject).collect();
            if test.is_empty() {
                return Err(Error::invalid(format!("subject {subject} has no samples")));
            }
            let (model, log) = fit_model(
                &rest,
                classes.clone(),
                train_cfg,
                seed::derive_indexed(root_seed, "loso/split", fold as u64),
                seed::derive_indexed(root_seed, "loso/train", fold as u64),
            )?;
            let mut result = evaluate(&model, &test, false, subject)?;
            result.best_epoch = log.best_epoch;
            log::info!(
                "fold {subject}: accuracy {:.3} (best epoch {}, {} epochs)",
                result.accuracy,
                log.best_epoch,
                log.val_loss.len()
            );
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    Report::from_folds("loso", classes, folds, snr_summary(samples))
}

/// Few-shot calibration on a held-out subject: for every count, draw that
/// many samples per class, fit the calibration, and score the rest.
pub fn run_calibration_sweep(
    model: &MoricModel,
    samples: &[LoadedSample],
    counts: &[usize],
    root_seed: u64,
) -> Result<Report> {
    let all: Vec<&LoadedSample> = samples.iter().collect();
    let labelled = to_samples(&all, &model.labels)?;
    let c = model.n_classes();
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![vec![]; c];
    for (i, s) in labelled.iter().enumerate() {
        by_class[s.class].push(i);
    }
    for (k, idx) in by_class.iter().enumerate() {
        if !idx.is_empty() && idx.len() <= max_count {
            return Err(Error::invalid(format!(
                "class {} has {} samples; calibrating with {max_count} per class needs at least {}",
                model.labels[k],
                idx.len(),
                max_count + 1
            )));
        }
    }
    let logits = labelled
        .par_iter()
        .map(|s| model.logits(s.features))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(counts.len());
    for &count in counts {
        let draws: Vec<f64> = if count == 0 {
            let hits = labelled
                .iter()
                .zip(&logits)
                .filter(|(s, z)| argmax(z) == s.class)
                .count();
            vec![hits as f64 / labelled.len() as f64]
        } else {
            (0..CALIBRATION_DRAWS)
                .map(|draw| {
                    let mut rng = seed::rng(seed::derive_indexed(
                        seed::derive_indexed(root_seed, "calibration/count", count as u64),
                        "calibration/draw",
                        draw as u64,
                    ));
                    let mut chosen = vec![false; labelled.len()];
                    for idx in &by_class {
                        let mut idx = idx.clone();
                        idx.shuffle(&mut rng);
                        for &i in idx.iter().take(count) {
                            chosen[i] = true;
                        }
                    }
                    let cal_z: Vec<Vec<f64>> = (0..labelled.len())
                        .filter(|&i| chosen[i])
                        .map(|i| logits[i].clone())
                        .collect();
                    let cal_y: Vec<usize> = (0..labelled.len())
                        .filter(|&i| chosen[i])
                        .map(|i| labelled[i].class)
                        .collect();
                    let cal = fit_calibration(&cal_z, &cal_y, CALIBRATION_STEPS, CALIBRATION_STEP_SIZE)?;
                    let rest: Vec<usize> = (0..labelled.len()).filter(|&i| !chosen[i]).collect();
                    let hits = rest
                        .iter()
                        .filter(|&&i| argmax(&cal.apply(&logits[i])) == labelled[i].class)
                        .count();
                    Ok(hits as f64 / rest.len() as f64)
                })
                .collect::<Result<Vec<_>>>()?
        };
        let (mean_accuracy, sd_accuracy) = mean_sd(&draws);
        points.push(CalibrationPoint {
            samples_per_class: count,
            mean_accuracy,
            sd_accuracy,
            draws,
        });
    }
    let uncalibrated = evaluate(model, &all, false, "all")?;
    let mut report = Report::from_folds(
        "calibration",
        model.labels.clone(),
        vec![uncalibrated],
        snr_summary(samples),
    )?;
    report.calibration = points;
    Ok(report)
}
