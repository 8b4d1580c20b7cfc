//! Little-endian on-disk formats connecting the pipeline stages.
//!
//! ```text
//! CSIT  "CSIT" u32 version=1
//!       u32 n_streams u32 n_subcarriers u32 n_time
//!       f64 sample_rate_hz f64 carrier_hz f64 subcarrier_spacing_hz
//!       n_streams*n_subcarriers*n_time x (f32 re, f32 im)   [stream][subcarrier][time]
//!       optional: u32 len, len bytes of UTF-8 JSON SampleMeta
//! DVEL  "DVEL" u32 version=1 u32 n_vectors u32 n_time
//!       per vector: u32 delay_bin u32 stream f32 snr_db u8 gated, n_time x f32
//! FEAT  "FEAT" u32 n_rows u32 dim
//!       per row: u32 delay_bin u32 stream u8 gated, dim x f32
//! ```
//!
//! Headers fully determine the payload length, so every reader checks the
//! file size before touching the payload.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{CsiFrame, FeatureRow, FeatureSet, RadioConfig, SampleMeta, VelocitySet, VelocityVector};

pub const CSIT_MAGIC: &[u8; 4] = b"CSIT";
pub const DVEL_MAGIC: &[u8; 4] = b"DVEL";
pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";
pub const FORMAT_VERSION: u32 = 1;

const CSIT_HEADER_LEN: usize = 4 + 4 + 3 * 4 + 3 * 8;

/// Kind of stage file, identified by its magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Csit,
    Dvel,
    Feat,
    Model,
}

pub fn sniff(path: &Path) -> Result<FileKind> {
    use std::io::Read;
    let mut magic = [0u8; 4];
    fs::File::open(path)?.read_exact(&mut magic)?;
    match &magic {
        b"CSIT" => Ok(FileKind::Csit),
        b"DVEL" => Ok(FileKind::Dvel),
        b"FEAT" => Ok(FileKind::Feat),
        b"MORM" => Ok(FileKind::Model),
        _ => Err(Error::format(format!("{}: unknown magic", path.display()))),
    }
}

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        self.u32(v);
        Ok(())
    }
    /// Narrow to f32, refusing values that are or become non-finite.
    pub fn f32_checked(&mut self, v: f64) -> Result<()> {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::invalid(format!("value {v} is not representable as finite f32")));
        }
        self.f32(x);
        Ok(())
    }
    pub fn str(&mut self, s: &str) -> Result<()> {
        self.len_u32(s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expect {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }
    pub fn version(&mut self, expect: u32) -> Result<()> {
        let v = self.u32()?;
        if v != expect {
            return Err(Error::format(format!("unsupported version {v}")));
        }
        Ok(())
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::format(format!("invalid flag byte {b}"))),
        }
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("invalid UTF-8"))
    }
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn checked_len(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::format("header dimensions overflow"))
}

pub fn encode_csit(frame: &CsiFrame) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(CSIT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len_u32(frame.n_streams())?;
    w.len_u32(frame.n_subcarriers())?;
    w.len_u32(frame.n_time())?;
    w.f64(frame.config.sample_rate_hz);
    w.f64(frame.config.carrier_hz);
    w.f64(frame.config.subcarrier_spacing_hz);
    w.buf.reserve(frame.data().len() * 8);
    for z in frame.data() {
        w.f32_checked(z.re)?;
        w.f32_checked(z.im)?;
    }
    if let Some(meta) = &frame.labels {
        let json = serde_json::to_vec(meta).map_err(|e| Error::format(e.to_string()))?;
        w.len_u32(json.len())?;
        w.bytes(&json);
    }
    Ok(w.buf)
}

pub fn decode_csit(bytes: &[u8]) -> Result<CsiFrame> {
    let mut r = Reader::new(bytes);
    r.magic(CSIT_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let n_streams = r.u32()? as usize;
    let n_sub = r.u32()? as usize;
    let n_time = r.u32()? as usize;
    let sample_rate_hz = r.f64()?;
    let carrier_hz = r.f64()?;
    let subcarrier_spacing_hz = r.f64()?;
    let count = checked_len(&[n_streams, n_sub, n_time])?;
    let payload = checked_len(&[count, 8])?;
    if r.remaining() < payload {
        return Err(Error::format(format!(
            "truncated CSIT payload: header declares {payload} bytes, file has {}",
            r.remaining()
        )));
    }
    let raw = r.take(payload)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let labels = if r.remaining() > 0 {
        let n = r.u32()? as usize;
        let json = r.take(n)?;
        r.finish()?;
        Some(serde_json::from_slice::<SampleMeta>(json).map_err(|e| Error::format(e.to_string()))?)
    } else {
        None
    };
    let config = RadioConfig {
        carrier_hz,
        subcarrier_spacing_hz,
        n_subcarriers: n_sub,
        sample_rate_hz,
    };
    let mut frame = CsiFrame::new(config, n_streams, n_time, data)
        .map_err(|e| Error::format(format!("CSIT header/payload invalid: {e}")))?;
    frame.labels = labels;
    debug_assert_eq!(CSIT_HEADER_LEN, 44);
    Ok(frame)
}

pub fn write_csit(frame: &CsiFrame, path: &Path) -> Result<()> {
    let bytes = encode_csit(frame)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_csit(path: &Path) -> Result<CsiFrame> {
    decode_csit(&fs::read(path)?)
}

pub fn encode_dvel(vs: &VelocitySet) -> Result<Vec<u8>> {
    vs.validate()?;
    let mut w = Writer::new();
    w.bytes(DVEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len_u32(vs.vectors.len())?;
    w.len_u32(vs.n_time)?;
    for v in &vs.vectors {
        w.u32(v.delay_bin);
        w.u32(v.stream);
        w.f32_checked(v.snr_db)?;
        w.u8(v.gated as u8);
        for &x in &v.values {
            w.f32_checked(x)?;
        }
    }
    Ok(w.buf)
}

pub fn decode_dvel(bytes: &[u8]) -> Result<VelocitySet> {
    let mut r = Reader::new(bytes);
    r.magic(DVEL_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let n_vectors = r.u32()? as usize;
    let n_time = r.u32()? as usize;
    let per = checked_len(&[n_time, 4])?
        .checked_add(13)
        .ok_or_else(|| Error::format("overflow"))?;
    let expect = checked_len(&[n_vectors, per])?;
    if r.remaining() != expect {
        return Err(Error::format(format!(
            "DVEL size mismatch: header declares {expect} payload bytes, file has {}",
            r.remaining()
        )));
    }
    let mut vectors = Vec::with_capacity(n_vectors);
    for _ in 0..n_vectors {
        let delay_bin = r.u32()?;
        let stream = r.u32()?;
        let snr_db = r.f32()? as f64;
        let gated = r.bool()?;
        let values = (0..n_time)
            .map(|_| r.f32().map(|x| x as f64))
            .collect::<Result<Vec<_>>>()?;
        vectors.push(VelocityVector {
            values,
            delay_bin,
            stream,
            snr_db,
            gated,
        });
    }
    r.finish()?;
    let vs = VelocitySet {
        vectors,
        n_time,
        source: String::new(),
    };
    vs.validate()
        .map_err(|e| Error::format(format!("DVEL content invalid: {e}")))?;
    Ok(vs)
}

pub fn write_dvel(vs: &VelocitySet, path: &Path) -> Result<()> {
    fs::write(path, encode_dvel(vs)?)?;
    Ok(())
}

/// Reads a velocity set; the file stem becomes its `source`.
pub fn read_dvel(path: &Path) -> Result<VelocitySet> {
    let mut vs = decode_dvel(&fs::read(path)?)?;
    vs.source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(vs)
}

pub fn encode_feat(fs_: &FeatureSet) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(FEAT_MAGIC);
    w.len_u32(fs_.rows.len())?;
    w.len_u32(fs_.dim)?;
    for row in &fs_.rows {
        if row.values.len() != fs_.dim {
            return Err(Error::invalid("feature row dimension mismatch"));
        }
        w.u32(row.delay_bin);
        w.u32(row.stream);
        w.u8(row.gated as u8);
        for &x in &row.values {
            w.f32_checked(x)?;
        }
    }
    Ok(w.buf)
}

pub fn decode_feat(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    r.magic(FEAT_MAGIC)?;
    let n_rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let per = checked_len(&[dim, 4])?
        .checked_add(9)
        .ok_or_else(|| Error::format("overflow"))?;
    let expect = checked_len(&[n_rows, per])?;
    if r.remaining() != expect {
        return Err(Error::format(format!(
            "FEAT size mismatch: header declares {expect} payload bytes, file has {}",
            r.remaining()
        )));
    }
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let delay_bin = r.u32()?;
        let stream = r.u32()?;
        let gated = r.bool()?;
        let values = (0..dim)
            .map(|_| r.f32().map(|x| x as f64))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            values,
            delay_bin,
            stream,
            gated,
        });
    }
    r.finish()?;
    FeatureSet::new(rows, dim)
}

pub fn write_feat(fs_: &FeatureSet, path: &Path) -> Result<()> {
    fs::write(path, encode_feat(fs_)?)?;
    Ok(())
}

pub fn read_feat(path: &Path) -> Result<FeatureSet> {
    decode_feat(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Gesture;
    use proptest::prelude::*;

    fn tiny_radio(n: usize) -> RadioConfig {
        RadioConfig {
            n_subcarriers: n,
            ..RadioConfig::wifi_2g4()
        }
    }

    #[test]
    fn csit_payload_layout() {
        let frame = CsiFrame::new(tiny_radio(2), 1, 2, vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let bytes = encode_csit(&frame).unwrap();
        assert_eq!(&bytes[..4], b"CSIT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let payload = &bytes[CSIT_HEADER_LEN..];
        assert_eq!(payload.len(), 4 * 8);
        for pair in payload.chunks_exact(8) {
            assert_eq!(f32::from_le_bytes(pair[0..4].try_into().unwrap()), 1.0);
            assert_eq!(f32::from_le_bytes(pair[4..8].try_into().unwrap()), 0.0);
        }
    }

    #[test]
    fn csit_header_for_three_antenna_ap() {
        let frame = CsiFrame::new(tiny_radio(52), 3, 2, vec![Complex64::new(0.5, -0.5); 3 * 52 * 2]).unwrap();
        let bytes = encode_csit(&frame).unwrap();
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        assert_eq!((u(8), u(12), u(16)), (3, 52, 2));
        assert_eq!(bytes.len(), CSIT_HEADER_LEN + 3 * 52 * 2 * 8);
    }

    #[test]
    fn csit_metadata_trailer() {
        let meta = SampleMeta {
            sample_id: "s1".into(),
            subject: "u1".into(),
            orientation_deg: 180,
            gesture: Gesture::PushPull,
            access_point: "ap5".into(),
        };
        let frame = CsiFrame::new(tiny_radio(2), 1, 2, vec![Complex64::new(0.25, 2.0); 4])
            .unwrap()
            .with_labels(meta.clone());
        let back = decode_csit(&encode_csit(&frame).unwrap()).unwrap();
        assert_eq!(back.labels, Some(meta));
        assert_eq!(back, frame);
    }

    #[test]
    fn csit_errors() {
        let frame = CsiFrame::new(tiny_radio(2), 1, 2, vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let bytes = encode_csit(&frame).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_csit(&bad), Err(Error::Format(_))));
        let mut badv = bytes.clone();
        badv[4] = 2;
        assert!(matches!(decode_csit(&badv), Err(Error::Format(_))));
        assert!(matches!(decode_csit(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));

        let huge = CsiFrame::new(tiny_radio(2), 1, 2, vec![Complex64::new(1e300, 0.0); 4]).unwrap();
        assert!(matches!(encode_csit(&huge), Err(Error::Invalid(_))));
    }

    #[test]
    fn dvel_empty_and_gated() {
        let empty = VelocitySet {
            vectors: vec![],
            n_time: 10,
            source: String::new(),
        };
        assert_eq!(decode_dvel(&encode_dvel(&empty).unwrap()).unwrap(), empty);

        let gated = VelocitySet {
            vectors: vec![VelocityVector {
                values: vec![0.0; 5],
                delay_bin: 7,
                stream: 1,
                snr_db: -3.5,
                gated: true,
            }],
            n_time: 5,
            source: String::new(),
        };
        let bytes = encode_dvel(&gated).unwrap();
        assert_eq!(bytes.len(), 16 + 13 + 5 * 4);
        assert!(bytes[29..].iter().all(|&b| b == 0));
        assert_eq!(decode_dvel(&bytes).unwrap(), gated);
        assert!(decode_dvel(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn feat_layout() {
        let fs_ = FeatureSet::new(
            vec![FeatureRow {
                values: vec![0.5, 1.0, 0.0],
                delay_bin: 3,
                stream: 0,
                gated: false,
            }],
            3,
        )
        .unwrap();
        let bytes = encode_feat(&fs_).unwrap();
        assert_eq!(&bytes[..4], b"FEAT");
        assert_eq!(bytes.len(), 12 + 9 + 12);
        assert_eq!(decode_feat(&bytes).unwrap(), fs_);
    }

    fn f32_exact() -> impl Strategy<Value = f64> {
        (-1.0e6f32..1.0e6f32).prop_map(|x| x as f64)
    }

    proptest! {
        #[test]
        fn csit_roundtrip_bitwise(
            (s, k, t, vals) in (1usize..3, 2usize..5, 2usize..6).prop_flat_map(|(s, k, t)| {
                (Just(s), Just(k), Just(t), prop::collection::vec((f32_exact(), f32_exact()), s * k * t))
            })
        ) {
            let data = vals.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            let frame = CsiFrame::new(tiny_radio(k), s, t, data).unwrap();
            let back = decode_csit(&encode_csit(&frame).unwrap()).unwrap();
            prop_assert_eq!(back, frame);
        }

        #[test]
        fn dvel_roundtrip_bitwise(
            rows in prop::collection::vec((0u32..64, 0u32..4, -20.0f32..40.0, prop::collection::vec(f32_exact(), 8)), 0..6)
        ) {
            let vs = VelocitySet {
                vectors: rows.into_iter().map(|(b, s, snr, values)| VelocityVector {
                    values, delay_bin: b, stream: s, snr_db: snr as f64, gated: false,
                }).collect(),
                n_time: 8,
                source: String::new(),
            };
            prop_assert_eq!(decode_dvel(&encode_dvel(&vs).unwrap()).unwrap(), vs);
        }
    }
}
