//! Stage composition: CSI to velocity vectors to features.

use crate::delay_doppler::{velocity_set, DopplerParams};
use crate::error::{Error, Result};
use crate::features::{build_bank, KernelBank, DEFAULT_BIASES, DEFAULT_KERNELS};
use crate::sanitize::{sanitize, HampelParams};
use crate::seed;
use crate::types::{CsiFrame, FeatureSet, VelocitySet};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub hampel: Option<HampelParams>,
    pub doppler: DopplerParams,
    pub n_kernels: usize,
    pub n_biases: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hampel: Some(HampelParams::default()),
            doppler: DopplerParams::default(),
            n_kernels: DEFAULT_KERNELS,
            n_biases: DEFAULT_BIASES,
        }
    }
}

impl PipelineConfig {
    /// Kernel bank for series of length `n_time`, derived from the root seed.
    pub fn bank(&self, root_seed: u64, n_time: usize) -> Result<KernelBank> {
        build_bank(
            seed::derive(root_seed, "pipeline/bank"),
            self.n_kernels,
            self.n_biases,
            n_time,
        )
    }
}

/// Sanitize, decompose, estimate, gate and normalise.
pub fn csi_to_velocity(frame: &CsiFrame, cfg: &PipelineConfig) -> Result<VelocitySet> {
    let clean = sanitize(frame, cfg.hampel)?;
    velocity_set(&clean, &cfg.doppler)
}

/// Features of a velocity set, labelled when the frame carried metadata.
pub fn velocity_to_features(vs: &VelocitySet, bank: &KernelBank) -> Result<FeatureSet> {
    if vs.n_time != bank.series_len {
        return Err(Error::invalid(format!(
            "velocity length {} does not match kernel bank length {}",
            vs.n_time, bank.series_len
        )));
    }
    bank.apply_set(vs)
}

pub fn csi_to_features(frame: &CsiFrame, bank: &KernelBank, cfg: &PipelineConfig) -> Result<FeatureSet> {
    let vs = csi_to_velocity(frame, cfg)?;
    let mut fs = velocity_to_features(&vs, bank)?;
    fs.label = frame.labels.as_ref().map(|m| m.gesture.clone());
    Ok(fs)
}
