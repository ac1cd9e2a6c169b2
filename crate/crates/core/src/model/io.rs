//! `DPCW` weight files.
//!
//! ```text
//! "DPCW"            4 bytes
//! version           u32 (currently 1)
//! config_len        u32, then that many bytes of key=value text
//! n_tensors         u32
//! per tensor        name_len u32, name, dtype u8 (0 = f32), rank u8,
//!                   dims u32 x rank, offset u64 into the payload
//! payload_len       u64, then the payload: f32 little-endian, row-major
//! crc32             u32 over the payload bytes
//! ```
//!
//! All integers are little-endian. The config text carries the model
//! configuration plus the `window` and `stft` conventions the weights were
//! trained with; loading rejects any other convention.

use std::path::Path;

use super::config::{parse_kv, ModelConfig};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::nn::{ParamMap, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DPCW";
pub const WEIGHTS_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const WINDOW_KEY: &str = "window";
const WINDOW_CONVENTION: &str = "sine(k+0.5)";
const STFT_KEY: &str = "stft";
const STFT_CONVENTION: &str = "400,200,400";

fn config_text(cfg: &ModelConfig) -> String {
    format!("{}{WINDOW_KEY}={WINDOW_CONVENTION}\n{STFT_KEY}={STFT_CONVENTION}\n", cfg.to_text())
}

pub fn to_bytes(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let text = config_text(w.config());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(w.params().len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in w.params() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    let start = out.len();
    for t in w.params().values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptWeights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::CorruptWeights("invalid UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::CorruptWeights("bad magic".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let text_len = r.u32()? as usize;
    let mut kv = parse_kv(r.str(text_len)?)?;
    for (key, want) in [(WINDOW_KEY, WINDOW_CONVENTION), (STFT_KEY, STFT_CONVENTION)] {
        match kv.shift_remove(key) {
            Some(v) if v == want => {}
            v => return Err(Error::InvalidConfig(format!("{key}={v:?}, this engine supports {want}"))),
        }
    }
    let cfg = ModelConfig::from_kv(&kv)?;

    let n = r.u32()? as usize;
    let mut dir = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = r.str(len)?.to_string();
        if r.u8()? != DTYPE_F32 {
            return Err(Error::CorruptWeights(format!("{name}: unsupported dtype")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        dir.push((name, shape, offset));
    }
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    let crc = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptWeights("trailing bytes".into()));
    }
    if crc32fast::hash(payload) != crc {
        return Err(Error::CorruptWeights("checksum mismatch".into()));
    }

    let mut params = ParamMap::new();
    for (name, shape, offset) in dir {
        let count: usize = shape.iter().product();
        let bytes = offset
            .checked_add(4 * count)
            .and_then(|end| payload.get(offset..end))
            .ok_or_else(|| Error::CorruptWeights(format!("{name}: data outside payload")))?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if params.insert(name.clone(), Tensor::param(&shape, data)?).is_some() {
            return Err(Error::CorruptWeights(format!("{name} listed twice")));
        }
    }
    ModelWeights::from_params(&cfg, params)
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(w))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    from_bytes(&std::fs::read(path)?)
}
