//! Set classifier over feature rows.
//!
//! Every row passes through `K` shared two-layer heads. The head outputs are
//! max-pooled across rows, concatenated, and mapped to class logits by a
//! second two-layer network. Because each row is processed independently and
//! the pooling is an elementwise maximum, the output does not depend on row
//! order or on repeated rows.

mod calibration;
mod io;
mod train;

pub use calibration::{calibrate, fit_calibration, Calibration, CALIBRATION_STEPS, CALIBRATION_STEP_SIZE};
pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    loss_and_grad, smoothed_loss, smoothing_floor, stratified_split, train, Sample, TrainConfig, TrainLog,
};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::features::KernelBank;
use crate::types::{FeatureSet, Gesture};

/// Layer widths of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub n_heads: usize,
    pub head_hidden: usize,
    pub reduced_dim: usize,
    pub cls_hidden: usize,
    pub n_classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.n_heads,
            self.head_hidden,
            self.reduced_dim,
            self.cls_hidden,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("all layer widths must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        Ok(())
    }

    fn head_len(&self) -> usize {
        self.input_dim * self.head_hidden + self.head_hidden + self.head_hidden * self.reduced_dim + self.reduced_dim
    }

    fn pooled_dim(&self) -> usize {
        self.n_heads * self.reduced_dim
    }

    pub fn n_params(&self) -> usize {
        self.n_heads * self.head_len()
            + self.pooled_dim() * self.cls_hidden
            + self.cls_hidden
            + self.cls_hidden * self.n_classes
            + self.n_classes
    }

    /// Offsets of `(w1, b1, w2, b2)` for head `k`.
    fn head(&self, k: usize) -> Layer2 {
        Layer2::at(k * self.head_len(), self.input_dim, self.head_hidden, self.reduced_dim)
    }

    fn cls(&self) -> Layer2 {
        Layer2::at(
            self.n_heads * self.head_len(),
            self.pooled_dim(),
            self.cls_hidden,
            self.n_classes,
        )
    }
}

/// Parameter offsets of a two-layer network inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layer2 {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub end: usize,
}

impl Layer2 {
    fn at(start: usize, n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        let w1 = start;
        let b1 = w1 + n_in * n_hidden;
        let w2 = b1 + n_hidden;
        let b2 = w2 + n_hidden * n_out;
        Layer2 {
            n_in,
            n_hidden,
            n_out,
            w1,
            b1,
            w2,
            b2,
            end: b2 + n_out,
        }
    }
}

/// `out = b + x W` with `W` stored `[in][out]`.
pub(crate) fn dense(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n_out = b.len();
    out.copy_from_slice(b);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &w[k * n_out..(k + 1) * n_out];
        for (o, &wkj) in out.iter_mut().zip(row) {
            *o += xk * wkj;
        }
    }
}

/// Accumulates `dW += x^T dout`, `db += dout` and optionally `dx = W dout`.
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_out = dout.len();
    for (g, &d) in db.iter_mut().zip(dout) {
        *g += d;
    }
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &mut dw[k * n_out..(k + 1) * n_out];
        for (g, &d) in row.iter_mut().zip(dout) {
            *g += xk * d;
        }
    }
    if let Some(dx) = dx {
        for (k, g) in dx.iter_mut().enumerate() {
            let row = &w[k * n_out..(k + 1) * n_out];
            *g = row.iter().zip(dout).map(|(a, b)| a * b).sum();
        }
    }
}

fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    /// Rows that took part in pooling, as indices into the feature set.
    pub rows: Vec<usize>,
    /// Per head, post-activation hidden values `[row][hidden]`.
    pub hidden: Vec<Vec<f64>>,
    /// Winning position in `rows` for every pooled coordinate `[head][d]`.
    pub winners: Vec<usize>,
    pub pooled: Vec<f64>,
    pub cls_hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoricModel {
    pub arch: Architecture,
    pub labels: Vec<Gesture>,
    pub train_seed: u64,
    /// Exclude gated rows from pooling (falls back to all rows when every row is gated).
    pub mask_gated: bool,
    pub params: Vec<f64>,
    pub bank: Option<KernelBank>,
    pub calibration: Option<Calibration>,
}

impl MoricModel {
    /// Fan-in uniform initialisation.
    pub fn init(arch: Architecture, labels: Vec<Gesture>, seed_value: u64) -> Result<Self> {
        use rand::Rng;
        arch.validate()?;
        if labels.len() != arch.n_classes {
            return Err(Error::invalid("label count does not match class count"));
        }
        let mut rng = crate::seed::rng(crate::seed::derive(seed_value, "classifier/init"));
        let mut params = vec![0.0; arch.n_params()];
        let layers: Vec<Layer2> = (0..arch.n_heads).map(|k| arch.head(k)).chain([arch.cls()]).collect();
        for l in layers {
            let a1 = 1.0 / (l.n_in as f64).sqrt();
            let a2 = 1.0 / (l.n_hidden as f64).sqrt();
            for p in &mut params[l.w1..l.w2] {
                *p = rng.random_range(-a1..a1);
            }
            for p in &mut params[l.w2..l.end] {
                *p = rng.random_range(-a2..a2);
            }
        }
        Ok(MoricModel {
            arch,
            labels,
            train_seed: seed_value,
            mask_gated: false,
            params,
            bank: None,
            calibration: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    pub fn class_index(&self, g: &Gesture) -> Option<usize> {
        self.labels.iter().position(|l| l == g)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.params.len() != self.arch.n_params() {
            return Err(Error::invalid("parameter count does not match architecture"));
        }
        if self.labels.len() != self.arch.n_classes {
            return Err(Error::invalid("label count does not match class count"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite model weight"));
        }
        if let Some(bank) = &self.bank {
            if bank.dim() != self.arch.input_dim {
                return Err(Error::invalid("embedded kernel bank does not match input width"));
            }
        }
        if let Some(c) = &self.calibration {
            c.validate(self.arch.n_classes)?;
        }
        Ok(())
    }

    fn check_input(&self, fs: &FeatureSet) -> Result<()> {
        if fs.rows.is_empty() {
            return Err(Error::invalid("feature set is empty"));
        }
        if fs.dim != self.arch.input_dim || fs.rows.iter().any(|r| r.values.len() != self.arch.input_dim) {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model input {}",
                fs.dim, self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, params: &[f64], fs: &FeatureSet) -> Result<Trace> {
        self.check_input(fs)?;
        let a = &self.arch;
        let mut rows: Vec<usize> = (0..fs.rows.len())
            .filter(|&i| !(self.mask_gated && fs.rows[i].gated))
            .collect();
        if rows.is_empty() {
            rows = (0..fs.rows.len()).collect();
        }
        // Repeated rows cannot change a maximum, so each distinct row is
        // evaluated once; the first occurrence represents its copies.
        let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(rows.len());
        rows.retain(|&i| {
            let key: Vec<u64> = fs.rows[i].values.iter().map(|v| v.to_bits()).collect();
            seen.insert(key)
        });
        let mut hidden = Vec::with_capacity(a.n_heads);
        let mut pooled = vec![f64::NEG_INFINITY; a.pooled_dim()];
        let mut winners = vec![0usize; a.pooled_dim()];
        let mut out = vec![0.0; a.reduced_dim];
        for k in 0..a.n_heads {
            let l = a.head(k);
            let mut h = vec![0.0; rows.len() * l.n_hidden];
            for (r, &i) in rows.iter().enumerate() {
                let hr = &mut h[r * l.n_hidden..(r + 1) * l.n_hidden];
                dense(&fs.rows[i].values, &params[l.w1..l.b1], &params[l.b1..l.w2], hr);
                relu(hr);
                dense(hr, &params[l.w2..l.b2], &params[l.b2..l.end], &mut out);
                let pool = &mut pooled[k * a.reduced_dim..(k + 1) * a.reduced_dim];
                let win = &mut winners[k * a.reduced_dim..(k + 1) * a.reduced_dim];
                for d in 0..a.reduced_dim {
                    if out[d] > pool[d] {
                        pool[d] = out[d];
                        win[d] = r;
                    }
                }
            }
            hidden.push(h);
        }
        let l = a.cls();
        let mut cls_hidden = vec![0.0; l.n_hidden];
        dense(&pooled, &params[l.w1..l.b1], &params[l.b1..l.w2], &mut cls_hidden);
        relu(&mut cls_hidden);
        let mut logits = vec![0.0; l.n_out];
        dense(&cls_hidden, &params[l.w2..l.b2], &params[l.b2..l.end], &mut logits);
        Ok(Trace {
            rows,
            hidden,
            winners,
            pooled,
            cls_hidden,
            logits,
        })
    }

    /// Logits and softmax probabilities of one feature set.
    pub fn forward(&self, fs: &FeatureSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.trace(&self.params, fs)?;
        let p = softmax(&t.logits);
        Ok((t.logits, p))
    }

    pub fn logits(&self, fs: &FeatureSet) -> Result<Vec<f64>> {
        Ok(self.trace(&self.params, fs)?.logits)
    }

    /// Predicted class index and its distribution, optionally calibrated.
    pub fn predict(&self, fs: &FeatureSet, use_calibration: bool) -> Result<(usize, Vec<f64>)> {
        let z = self.logits(fs)?;
        let p = if use_calibration {
            let c = self
                .calibration
                .as_ref()
                .ok_or_else(|| Error::invalid("model has no calibration"))?;
            c.apply(&z)
        } else {
            softmax(&z)
        };
        Ok((argmax(&p), p))
    }

    /// Adds the gradient of `sum_c -target_c log p_c` for one sample to `grad`.
    pub(crate) fn backward(&self, params: &[f64], fs: &FeatureSet, target: &[f64], grad: &mut [f64]) -> Result<f64> {
        let t = self.trace(params, fs)?;
        let a = &self.arch;
        let p = softmax(&t.logits);
        let loss = -target
            .iter()
            .zip(&p)
            .map(|(&y, &pc)| if y > 0.0 { y * pc.ln() } else { 0.0 })
            .sum::<f64>();
        let dz: Vec<f64> = p.iter().zip(target).map(|(pc, y)| pc - y).collect();

        let l = a.cls();
        let mut dh = vec![0.0; l.n_hidden];
        {
            let (lo, hi) = grad.split_at_mut(l.b2);
            dense_backward(
                &t.cls_hidden,
                &params[l.w2..l.b2],
                &dz,
                &mut lo[l.w2..l.b2],
                &mut hi[..l.n_out],
                Some(&mut dh),
            );
        }
        for (g, &h) in dh.iter_mut().zip(&t.cls_hidden) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let mut dpool = vec![0.0; a.pooled_dim()];
        {
            let (lo, hi) = grad.split_at_mut(l.b1);
            dense_backward(
                &t.pooled,
                &params[l.w1..l.b1],
                &dh,
                &mut lo[l.w1..l.b1],
                &mut hi[..l.n_hidden],
                Some(&mut dpool),
            );
        }

        let mut dout = vec![0.0; a.reduced_dim];
        let mut dhid = vec![0.0; a.head_hidden];
        for k in 0..a.n_heads {
            let l = a.head(k);
            let win = &t.winners[k * a.reduced_dim..(k + 1) * a.reduced_dim];
            let dp = &dpool[k * a.reduced_dim..(k + 1) * a.reduced_dim];
            for r in 0..t.rows.len() {
                if !win.contains(&r) {
                    continue;
                }
                for d in 0..a.reduced_dim {
                    dout[d] = if win[d] == r { dp[d] } else { 0.0 };
                }
                let h = &t.hidden[k][r * l.n_hidden..(r + 1) * l.n_hidden];
                {
                    let (lo, hi) = grad.split_at_mut(l.b2);
                    dense_backward(
                        h,
                        &params[l.w2..l.b2],
                        &dout,
                        &mut lo[l.w2..l.b2],
                        &mut hi[..l.n_out],
                        Some(&mut dhid),
                    );
                }
                for (g, &hv) in dhid.iter_mut().zip(h) {
                    if hv <= 0.0 {
                        *g = 0.0;
                    }
                }
                let x = &fs.rows[t.rows[r]].values;
                let (lo, hi) = grad.split_at_mut(l.b1);
                dense_backward(
                    x,
                    &params[l.w1..l.b1],
                    &dhid,
                    &mut lo[l.w1..l.b1],
                    &mut hi[..l.n_hidden],
                    None,
                );
            }
        }
        Ok(loss)
    }
}
