//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "BDLM"  u16 version  u8 flags
//! u32 len, config JSON
//! u32 tensor count, then per tensor:
//!   u16 len, name   u8 tag   u8 kind   u8 ndim   u64 dims[ndim]
//!   kind 0 (dense):     f64 values[prod(dims)]
//!   kind 1 (quantized): u32 block, f64 absmax[ceil(n/block)], u8 packed[ceil(n/2)]
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Flag bit 0 marks frozen blocks imported from external weights; it is
//! carried through but nothing sets it yet.

use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::model::Model;
use crate::params::{ParamValue, ParameterSet, Tag};
use crate::quant::QuantizedMatrix;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BDLM";
pub const VERSION: u16 = 1;
pub const FLAG_EXTERNAL_BLOCKS: u8 = 1;

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(0);
    let cfg = serde_json::to_vec(model.config()).map_err(|e| ModelError::CorruptFile(e.to_string()))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, p) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match p.tag() {
            Tag::Frozen => 0,
            Tag::Trainable => 1,
        });
        let shape = p.shape();
        match p.value() {
            ParamValue::Dense(t) => {
                out.push(0);
                push_dims(&mut out, shape);
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ParamValue::Quantized(q) => {
                out.push(1);
                push_dims(&mut out, shape);
                out.extend_from_slice(&(q.block as u32).to_le_bytes());
                for v in &q.absmax {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&q.packed);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn push_dims(out: &mut Vec<u8>, shape: &[usize]) {
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| ModelError::CorruptFile("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 2 + 1 + 4 {
        return Err(ModelError::CorruptFile("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ModelError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::CorruptFile("missing BDLM magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: VERSION });
    }
    let _flags = r.u8()?;
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(cfg_len)?).map_err(|e| ModelError::CorruptFile(format!("config: {e}")))?;
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::CorruptFile("tensor name is not UTF-8".into()))?
            .to_string();
        let tag = match r.u8()? {
            0 => Tag::Frozen,
            1 => Tag::Trainable,
            t => return Err(ModelError::CorruptFile(format!("{name}: unknown tag {t}"))),
        };
        let kind = r.u8()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= body.len())
            .ok_or_else(|| ModelError::CorruptFile(format!("{name}: implausible shape {shape:?}")))?;
        let value = match kind {
            0 => ParamValue::Dense(Tensor::new(shape, r.f64s(n)?)?),
            1 => {
                let block = r.u32()? as usize;
                if block == 0 {
                    return Err(ModelError::CorruptFile(format!("{name}: zero block size")));
                }
                let absmax = r.f64s(n.div_ceil(block))?;
                let packed = r.take(n.div_ceil(2))?.to_vec();
                let q = QuantizedMatrix { shape, block, absmax, packed, len: n };
                if !q.is_consistent() {
                    return Err(ModelError::CorruptFile(format!("{name}: inconsistent quantized block")));
                }
                ParamValue::Quantized(q)
            }
            k => return Err(ModelError::CorruptFile(format!("{name}: unknown tensor kind {k}"))),
        };
        params.insert(name, tag, value)?;
    }
    if r.pos != body.len() {
        return Err(ModelError::CorruptFile("trailing bytes before checksum".into()));
    }
    Model::from_parts(config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    from_bytes(&bytes)
}
