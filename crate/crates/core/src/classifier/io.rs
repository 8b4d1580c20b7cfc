//! Model file.
//!
//! ```text
//! "MORM" u32 version
//! u32 input_dim u32 n_heads u32 head_hidden u32 reduced_dim u32 cls_hidden u32 n_classes
//! n_classes x (u32 len, UTF-8 label)
//! n_params x f32                 heads in order (w1, b1, w2, b2), then the class head
//! u64 train_seed u8 mask_gated
//! u8 has_bank [KBNK block]
//! u8 has_calibration [f64 temperature, n_classes x f64 bias]
//! ```

use std::fs;
use std::path::Path;

use super::{Architecture, Calibration, MoricModel};
use crate::error::{Error, Result};
use crate::features::KernelBank;
use crate::formats::{Reader, Writer};
use crate::types::Gesture;

pub const MODEL_MAGIC: &[u8; 4] = b"MORM";
pub const MODEL_VERSION: u32 = 1;

impl MoricModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let a = &self.arch;
        let mut w = Writer::new();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        for d in [
            a.input_dim,
            a.n_heads,
            a.head_hidden,
            a.reduced_dim,
            a.cls_hidden,
            a.n_classes,
        ] {
            w.len_u32(d)?;
        }
        for l in &self.labels {
            w.str(l.as_str())?;
        }
        for &p in &self.params {
            w.f32_checked(p)?;
        }
        w.u64(self.train_seed);
        w.u8(self.mask_gated as u8);
        match &self.bank {
            Some(bank) => {
                w.u8(1);
                bank.encode_into(&mut w)?;
            }
            None => w.u8(0),
        }
        match &self.calibration {
            Some(c) => {
                w.u8(1);
                w.f64(c.temperature);
                for &b in &c.bias {
                    w.f64(b);
                }
            }
            None => w.u8(0),
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSION)?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let arch = Architecture {
            input_dim: dims[0],
            n_heads: dims[1],
            head_hidden: dims[2],
            reduced_dim: dims[3],
            cls_hidden: dims[4],
            n_classes: dims[5],
        };
        arch.validate().map_err(|e| Error::format(e.to_string()))?;
        let labels = (0..arch.n_classes)
            .map(|_| r.str().map(Gesture::from))
            .collect::<Result<Vec<_>>>()?;
        let n_params = arch
            .n_params()
            .checked_mul(4)
            .ok_or_else(|| Error::format("model dimensions overflow"))?;
        if r.remaining() < n_params {
            return Err(Error::format("model file truncated in weights"));
        }
        let params = (0..arch.n_params())
            .map(|_| r.f32().map(|x| x as f64))
            .collect::<Result<Vec<_>>>()?;
        let train_seed = r.u64()?;
        let mask_gated = r.bool()?;
        let bank = if r.bool()? {
            Some(KernelBank::decode_from(&mut r)?)
        } else {
            None
        };
        let calibration = if r.bool()? {
            let temperature = r.f64()?;
            let bias = (0..arch.n_classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Some(Calibration { temperature, bias })
        } else {
            None
        };
        r.finish()?;
        let model = MoricModel {
            arch,
            labels,
            train_seed,
            mask_gated,
            params,
            bank,
            calibration,
        };
        model.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
