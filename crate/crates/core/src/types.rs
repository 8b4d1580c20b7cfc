//! Domain types shared by every stage.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radio parameters of one CSI capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    /// CSI frame rate.
    pub sample_rate_hz: f64,
}

impl RadioConfig {
    /// 2.4 GHz, 20 MHz channel with 52 retained data tones, 100 Hz frame rate.
    pub fn wifi_2g4() -> Self {
        RadioConfig {
            carrier_hz: 2.4e9,
            subcarrier_spacing_hz: 312.5e3,
            n_subcarriers: 52,
            sample_rate_hz: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(Error::invalid("carrier_hz must be positive"));
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::invalid("subcarrier_spacing_hz must be positive"));
        }
        if self.n_subcarriers < 2 {
            return Err(Error::invalid("need at least 2 subcarriers"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        Ok(())
    }

    pub fn speed_of_light(&self) -> f64 {
        SPEED_OF_LIGHT
    }

    /// Carrier wavelength `c / f_c`.
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Occupied bandwidth `N * Δf`.
    pub fn bandwidth_hz(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Frequency of subcarrier `n`, centred on the carrier and increasing with `n`.
    pub fn subcarrier_hz(&self, n: usize) -> f64 {
        self.carrier_hz + self.baseband_hz(n)
    }

    /// Offset of subcarrier `n` from the carrier.
    pub fn baseband_hz(&self, n: usize) -> f64 {
        (n as f64 - self.n_subcarriers as f64 / 2.0) * self.subcarrier_spacing_hz
    }

    /// Delay resolution `1 / BW`.
    pub fn delay_resolution_s(&self) -> f64 {
        1.0 / self.bandwidth_hz()
    }

    /// Path-length resolution `c / BW`.
    pub fn distance_resolution_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.bandwidth_hz()
    }

    /// Delay of IDFT bin `i`.
    pub fn bin_delay_s(&self, i: usize) -> f64 {
        i as f64 * self.delay_resolution_s()
    }
}

/// Activity label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Gesture {
    Circle,
    LeftRight,
    UpDown,
    PushPull,
    Other(String),
}

impl Gesture {
    pub const STANDARD: [Gesture; 4] = [Gesture::Circle, Gesture::LeftRight, Gesture::UpDown, Gesture::PushPull];

    pub fn as_str(&self) -> &str {
        match self {
            Gesture::Circle => "circle",
            Gesture::LeftRight => "left_right",
            Gesture::UpDown => "up_down",
            Gesture::PushPull => "push_pull",
            Gesture::Other(s) => s,
        }
    }
}

impl From<String> for Gesture {
    fn from(s: String) -> Self {
        match s.as_str() {
            "circle" => Gesture::Circle,
            "left_right" => Gesture::LeftRight,
            "up_down" => Gesture::UpDown,
            "push_pull" => Gesture::PushPull,
            _ => Gesture::Other(s),
        }
    }
}

impl From<Gesture> for String {
    fn from(g: Gesture) -> Self {
        g.as_str().to_owned()
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collection metadata attached to a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub subject: String,
    #[serde(default)]
    pub orientation_deg: i32,
    pub gesture: Gesture,
    #[serde(default)]
    pub access_point: String,
}

/// Complex CSI tensor laid out `[stream][subcarrier][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub config: RadioConfig,
    n_streams: usize,
    n_time: usize,
    data: Vec<Complex64>,
    pub labels: Option<SampleMeta>,
}

impl CsiFrame {
    pub fn new(config: RadioConfig, n_streams: usize, n_time: usize, data: Vec<Complex64>) -> Result<Self> {
        config.validate()?;
        if n_streams == 0 {
            return Err(Error::invalid("frame needs at least one stream"));
        }
        if n_time < 2 {
            return Err(Error::invalid("frame needs at least two time samples"));
        }
        let expected = n_streams * config.n_subcarriers * n_time;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                n_streams,
                config.n_subcarriers,
                n_time
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("frame contains non-finite values"));
        }
        Ok(CsiFrame {
            config,
            n_streams,
            n_time,
            data,
            labels: None,
        })
    }

    pub fn with_labels(mut self, meta: SampleMeta) -> Self {
        self.labels = Some(meta);
        self
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn n_subcarriers(&self) -> usize {
        self.config.n_subcarriers
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Mutable payload; callers must keep every value finite.
    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, stream: usize, subcarrier: usize, time: usize) -> usize {
        (stream * self.config.n_subcarriers + subcarrier) * self.n_time + time
    }

    #[inline]
    pub fn get(&self, stream: usize, subcarrier: usize, time: usize) -> Complex64 {
        self.data[self.index(stream, subcarrier, time)]
    }

    #[inline]
    pub fn set(&mut self, stream: usize, subcarrier: usize, time: usize, value: Complex64) {
        let i = self.index(stream, subcarrier, time);
        self.data[i] = value;
    }

    /// Time series of one (stream, subcarrier) pair.
    pub fn series(&self, stream: usize, subcarrier: usize) -> &[Complex64] {
        let start = self.index(stream, subcarrier, 0);
        &self.data[start..start + self.n_time]
    }

    /// Across-subcarrier snapshot of one stream at one time.
    pub fn snapshot(&self, stream: usize, time: usize) -> Vec<Complex64> {
        (0..self.config.n_subcarriers)
            .map(|k| self.get(stream, k, time))
            .collect()
    }

    /// Concatenate streams of frames that share radio config and length.
    pub fn concat_streams(frames: &[CsiFrame]) -> Result<CsiFrame> {
        let first = frames.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut n_streams = 0;
        for f in frames {
            if f.config != first.config || f.n_time != first.n_time {
                return Err(Error::invalid("frames disagree on radio config or length"));
            }
            data.extend_from_slice(&f.data);
            n_streams += f.n_streams;
        }
        let mut out = CsiFrame::new(first.config, n_streams, first.n_time, data)?;
        out.labels = first.labels.clone();
        Ok(out)
    }
}

/// Velocity projection series of one delay bin.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityVector {
    pub values: Vec<f64>,
    pub delay_bin: u32,
    pub stream: u32,
    pub snr_db: f64,
    pub gated: bool,
}

/// Unordered multiset of velocity vectors describing one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VelocitySet {
    pub vectors: Vec<VelocityVector>,
    pub n_time: usize,
    pub source: String,
}

impl VelocitySet {
    pub fn validate(&self) -> Result<()> {
        for v in &self.vectors {
            if v.values.len() != self.n_time {
                return Err(Error::invalid("velocity vector length mismatch"));
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite velocity"));
            }
            if v.gated && v.values.iter().any(|&x| x != 0.0) {
                return Err(Error::invalid("gated vector must be all zeros"));
            }
        }
        Ok(())
    }
}

/// Feature vector of one velocity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub values: Vec<f64>,
    pub delay_bin: u32,
    pub stream: u32,
    pub gated: bool,
}

/// Features of every velocity vector of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<FeatureRow>,
    pub dim: usize,
    pub label: Option<Gesture>,
}

impl FeatureSet {
    pub fn new(rows: Vec<FeatureRow>, dim: usize) -> Result<Self> {
        if rows.iter().any(|r| r.values.len() != dim) {
            return Err(Error::invalid("feature rows disagree on dimension"));
        }
        Ok(FeatureSet { rows, dim, label: None })
    }

    pub fn with_label(mut self, label: Gesture) -> Self {
        self.label = Some(label);
        self
    }
}
