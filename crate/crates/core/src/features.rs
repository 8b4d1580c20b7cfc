//! Random convolutional kernel features.
//!
//! A [`KernelBank`] holds frozen dilated kernels with several biases each.
//! Every kernel contributes the maximum of its first biased response plus the
//! proportion of positive values (PPV) of each biased response, so a bank of
//! `n` kernels with `B` biases maps a series to `n * (B + 1)` features.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{Reader, Writer};
use crate::seed;
use crate::types::{FeatureRow, FeatureSet, VelocitySet};

pub const KERNEL_LENGTHS: [usize; 3] = [7, 9, 11];
pub const BANK_MAGIC: &[u8; 4] = b"KBNK";
pub const BANK_VERSION: u32 = 1;
pub const DEFAULT_KERNELS: usize = 250;
pub const DEFAULT_BIASES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub weights: Vec<f64>,
    pub dilation: usize,
    pub padding: bool,
    pub biases: Vec<f64>,
}

impl Kernel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn receptive_field(&self) -> usize {
        (self.len() - 1) * self.dilation + 1
    }

    /// Dilated convolution `z[t] = sum_m w[m] x[t + m d]`, valid-only or with
    /// symmetric zero padding that keeps the input length.
    pub fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let span = (self.len() - 1) * self.dilation;
        let pad = if self.padding { span / 2 } else { 0 };
        let t_len = x.len() as isize;
        let n_out = x.len() + 2 * pad - span;
        let mut z = vec![0.0; n_out];
        for (t, out) in z.iter_mut().enumerate() {
            let origin = t as isize - pad as isize;
            let mut acc = 0.0;
            for (m, &w) in self.weights.iter().enumerate() {
                let idx = origin + (m * self.dilation) as isize;
                if idx >= 0 && idx < t_len {
                    acc += w * x[idx as usize];
                }
            }
            *out = acc;
        }
        z
    }
}

/// Frozen kernels and biases, deterministic from `(seed, n_kernels, B, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub seed: u64,
    pub n_biases: usize,
    pub series_len: usize,
    pub kernels: Vec<Kernel>,
}

pub fn build_bank(seed_value: u64, n_kernels: usize, n_biases: usize, series_len: usize) -> Result<KernelBank> {
    if n_kernels == 0 || n_biases == 0 {
        return Err(Error::invalid("a kernel bank needs at least one kernel and one bias"));
    }
    if series_len <= 11 {
        return Err(Error::invalid(format!("series length {series_len} must exceed 11")));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "features/bank"));
    let kernels = (0..n_kernels)
        .map(|_| {
            let len = KERNEL_LENGTHS[rng.random_range(0..KERNEL_LENGTHS.len())];
            let mut weights: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mean = weights.iter().sum::<f64>() / len as f64;
            weights.iter_mut().for_each(|w| *w -= mean);
            let upper = ((series_len - 1) as f64 / (len - 1) as f64).log2();
            let x: f64 = rng.random_range(0.0..=upper);
            // Flooring keeps the receptive field within the series.
            let dilation = (x.exp2().floor() as usize).max(1);
            let padding = rng.random_bool(0.5);
            let biases = (0..n_biases).map(|_| rng.random_range(-1.0..1.0)).collect();
            Kernel {
                weights,
                dilation,
                padding,
                biases,
            }
        })
        .collect();
    Ok(KernelBank {
        seed: seed_value,
        n_biases,
        series_len,
        kernels,
    })
}

impl KernelBank {
    pub fn n_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn features_per_kernel(&self) -> usize {
        self.n_biases + 1
    }

    pub fn dim(&self) -> usize {
        self.n_kernels() * self.features_per_kernel()
    }

    /// Feature vector of one series of the bank's length.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.series_len {
            return Err(Error::invalid(format!(
                "series length {} does not match bank length {}",
                x.len(),
                self.series_len
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for k in &self.kernels {
            let z = k.convolve(x);
            let n = z.len() as f64;
            let b1 = k.biases[0];
            out.push(z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v + b1)));
            for &b in &k.biases {
                out.push(z.iter().filter(|&&v| v + b > 0.0).count() as f64 / n);
            }
        }
        Ok(out)
    }

    /// Features for every vector of a set, in input order.
    pub fn apply_set(&self, vs: &VelocitySet) -> Result<FeatureSet> {
        let rows = vs
            .vectors
            .par_iter()
            .map(|v| {
                Ok(FeatureRow {
                    values: self.apply(&v.values)?,
                    delay_bin: v.delay_bin,
                    stream: v.stream,
                    gated: v.gated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(rows, self.dim())
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) -> Result<()> {
        w.bytes(BANK_MAGIC);
        w.u32(BANK_VERSION);
        w.u64(self.seed);
        w.len_u32(self.n_kernels())?;
        w.len_u32(self.n_biases)?;
        w.len_u32(self.series_len)?;
        for k in &self.kernels {
            w.len_u32(k.len())?;
            w.len_u32(k.dilation)?;
            w.u8(k.padding as u8);
            for &x in &k.weights {
                w.f64(x);
            }
            for &b in &k.biases {
                w.f64(b);
            }
        }
        Ok(())
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(BANK_MAGIC)?;
        r.version(BANK_VERSION)?;
        let seed_value = r.u64()?;
        let n_kernels = r.u32()? as usize;
        let n_biases = r.u32()? as usize;
        let series_len = r.u32()? as usize;
        if n_kernels == 0 || n_biases == 0 {
            return Err(Error::format("kernel bank is empty"));
        }
        let mut kernels = Vec::with_capacity(n_kernels.min(1 << 16));
        for _ in 0..n_kernels {
            let len = r.u32()? as usize;
            let dilation = r.u32()? as usize;
            let padding = r.bool()?;
            if !KERNEL_LENGTHS.contains(&len) || dilation == 0 {
                return Err(Error::format("bad kernel header"));
            }
            if (len - 1) * dilation + 1 > series_len {
                return Err(Error::format("kernel wider than its series"));
            }
            let weights = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let biases = (0..n_biases).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            kernels.push(Kernel {
                weights,
                dilation,
                padding,
                biases,
            });
        }
        Ok(KernelBank {
            seed: seed_value,
            n_biases,
            series_len,
            kernels,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        self.encode_into(&mut w)?;
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let bank = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(bank)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
