//! Mini-batch training with AdamW, label smoothing and early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Architecture, MoricModel};
use crate::error::{Error, Result};
use crate::seed;
use crate::types::{FeatureSet, Gesture};

/// Samples per gradient chunk. Chunk gradients are summed in a fixed order,
/// so results do not depend on the number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a FeatureSet,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub label_smoothing: f64,
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub n_heads: usize,
    pub head_hidden: usize,
    pub reduced_dim: usize,
    pub cls_hidden: usize,
    pub mask_gated: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 64,
            max_epochs: 2500,
            label_smoothing: 0.1,
            patience: 200,
            weight_decay: 1e-4,
            seed: 0,
            n_heads: 2,
            head_hidden: 256,
            reduced_dim: 128,
            cls_hidden: 128,
            mask_gated: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("batch, epochs and patience must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, n_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            n_heads: self.n_heads,
            head_hidden: self.head_hidden,
            reduced_dim: self.reduced_dim,
            cls_hidden: self.cls_hidden,
            n_classes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Smoothed one-hot target.
pub fn smoothed_target(class: usize, n_classes: usize, alpha: f64) -> Vec<f64> {
    let mut t = vec![alpha / n_classes as f64; n_classes];
    t[class] += 1.0 - alpha;
    t
}

/// Smallest achievable smoothed cross-entropy: the entropy of the target.
pub fn smoothing_floor(alpha: f64, n_classes: usize) -> f64 {
    smoothed_target(0, n_classes, alpha)
        .iter()
        .filter(|&&y| y > 0.0)
        .map(|&y| -y * y.ln())
        .sum()
}

/// Summed loss and gradient of a slice of samples, in fixed chunk order.
fn batch_grad(model: &MoricModel, params: &[f64], samples: &[Sample<'_>], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let c = model.n_classes();
    let parts = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; params.len()];
            let mut loss = 0.0;
            for s in chunk {
                let target = smoothed_target(s.class, c, alpha);
                loss += model.backward(params, s.features, &target, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Mean smoothed cross-entropy and its gradient with respect to `model.params`.
pub fn loss_and_grad(model: &MoricModel, samples: &[Sample<'_>], alpha: f64) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let (l, mut g) = batch_grad(model, &model.params, samples, alpha)?;
    let n = samples.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok((l / n, g))
}

/// Mean smoothed cross-entropy.
pub fn smoothed_loss(model: &MoricModel, samples: &[Sample<'_>], alpha: f64) -> Result<f64> {
    let c = model.n_classes();
    let losses = samples
        .par_iter()
        .map(|s| {
            let p = model.forward(s.features)?.1;
            let t = smoothed_target(s.class, c, alpha);
            Ok(-t.iter().zip(&p).map(|(y, pc)| y * pc.ln()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// Stratified split of sample indices into (train, validation).
pub fn stratified_split(classes: &[usize], val_frac: f64, seed_value: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed::derive(seed_value, "classifier/split"));
    let n_classes = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (val_frac * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            n_val = n_val.clamp(1, idx.len() - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * (mh / (vh.sqrt() + Self::EPS) + wd * params[i]);
        }
    }
}

/// Trains a model and returns the checkpoint with the lowest validation loss.
/// With an empty validation split the training loss is used instead.
/// Final weights are rounded to `f32` so that a saved model reproduces them.
pub fn train(
    train_set: &[Sample<'_>],
    val_set: &[Sample<'_>],
    labels: Vec<Gesture>,
    cfg: &TrainConfig,
) -> Result<(MoricModel, TrainLog)> {
    cfg.validate()?;
    let first = train_set.first().ok_or_else(|| Error::invalid("empty training set"))?;
    let n_classes = labels.len();
    let mut present = vec![false; n_classes];
    for s in train_set.iter().chain(val_set) {
        if s.class >= n_classes {
            return Err(Error::invalid("class index out of range"));
        }
    }
    for s in train_set {
        present[s.class] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("training data must contain at least two classes"));
    }
    let arch = cfg.architecture(first.features.dim, n_classes);
    let mut model = MoricModel::init(arch, labels, cfg.seed)?;
    model.mask_gated = cfg.mask_gated;

    let mut opt = AdamW::new(model.params.len());
    let mut best = model.params.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch: Vec<Sample<'_>> = Vec::with_capacity(cfg.batch);

    for epoch in 0..cfg.max_epochs {
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "classifier/epoch", epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i]));
            let (l, mut g) = batch_grad(&model, &model.params, &batch, cfg.label_smoothing)?;
            if !l.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            let n = batch.len() as f64;
            g.iter_mut().for_each(|v| *v /= n);
            opt.step(&mut model.params, &g, cfg.lr, cfg.weight_decay);
            epoch_loss += l;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let monitor = if val_set.is_empty() {
            smoothed_loss(&model, train_set, cfg.label_smoothing)?
        } else {
            smoothed_loss(&model, val_set, cfg.label_smoothing)?
        };
        if !monitor.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.train_loss.push(train_loss);
        log.val_loss.push(monitor);
        if monitor < best_loss {
            best_loss = monitor;
            best.copy_from_slice(&model.params);
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= cfg.patience {
            break;
        }
    }
    model.params = best.iter().map(|&p| p as f32 as f64).collect();
    Ok((model, log))
}
