//! Versioned binary checkpoint for an [`Encoder`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ECGC"  u16 version
//! u32 config_len, config block:
//!     u32 × 9  n_blocks base_channels embed_dim input_leads input_len
//!              input_pool stem_kernel stem_stride block_kernel
//!     u8       projection_head
//!     u16 len, utf-8 tag
//! u32 n_params, then per parameter:
//!     u16 len, utf-8 name   u8 ndim   u32 × ndim dims   f32 × product(dims)
//! ```

use std::path::Path;

use super::encoder::{Encoder, EncoderConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ECGC";
pub const CHECKPOINT_VERSION: u16 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// Serialise an encoder and a free-form tag (typically the strategy it was
/// trained with).
pub fn write_checkpoint(encoder: &Encoder<f32>, tag: &str) -> Vec<u8> {
    let cfg = encoder.config();
    let mut block = Vec::new();
    for v in [
        cfg.n_blocks,
        cfg.base_channels,
        cfg.embed_dim,
        cfg.input_leads,
        cfg.input_len,
        cfg.input_pool,
        cfg.stem_kernel,
        cfg.stem_stride,
        cfg.block_kernel,
    ] {
        block.extend_from_slice(&(v as u32).to_le_bytes());
    }
    block.push(cfg.projection_head as u8);
    block.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    block.extend_from_slice(tag.as_bytes());

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(&block);
    out.extend_from_slice(&(encoder.params().len() as u32).to_le_bytes());
    for (name, p) in encoder.names().iter().zip(encoder.params()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.ndim() as u8);
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated at byte {} (needed {n} more)", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8 string"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Encoder<f32>, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let block_len = r.u32()? as usize;
    let mut cr = Reader { buf: r.take(block_len)?, pos: 0 };
    let mut fields = [0usize; 9];
    for f in fields.iter_mut() {
        *f = cr.u32()? as usize;
    }
    let projection_head = match cr.u8()? {
        0 => false,
        1 => true,
        other => return Err(corrupt(format!("invalid projection_head flag {other}"))),
    };
    let tag = cr.string()?;
    if cr.pos != block_len {
        return Err(corrupt("config block length mismatch"));
    }
    let config = EncoderConfig {
        n_blocks: fields[0],
        base_channels: fields[1],
        embed_dim: fields[2],
        input_leads: fields[3],
        input_len: fields[4],
        input_pool: fields[5],
        stem_kernel: fields[6],
        stem_stride: fields[7],
        block_kernel: fields[8],
        projection_head,
    };
    config.validate().map_err(|e| corrupt(format!("config block: {e}")))?;

    let n = r.u32()? as usize;
    let mut named = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name = r.string()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| corrupt("parameter size overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let encoder = Encoder::from_params(config, named).map_err(|e| corrupt(e.to_string()))?;
    Ok((encoder, tag))
}

pub fn save_checkpoint(encoder: &Encoder<f32>, tag: &str, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(encoder, tag)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Encoder<f32>, String)> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    read_checkpoint(&bytes)
}
