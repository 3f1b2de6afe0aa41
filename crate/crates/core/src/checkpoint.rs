//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DAFDCKPT"  u32 version  u8 scalar_bytes (4 = f32, 8 = f64)
//! u32 spec_len  spec_len bytes of NetSpec JSON
//! u32 blocks
//! per block: u16 name_len  name  u8 rank  rank x u64 dims  prod(dims) scalars
//! ```
//!
//! Blocks appear in [`Network::visit`] order. Reading rebuilds the network
//! from the spec and checks every name and shape before copying values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{build_network, NetSpec, Network};
use crate::tensor::Real;

pub const MAGIC: &[u8; 8] = b"DAFDCKPT";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(net.spec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let blocks = net.blocks();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::WIDTH as u8);
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (info, values) in &blocks {
        out.extend_from_slice(&(info.name.len() as u16).to_le_bytes());
        out.extend_from_slice(info.name.as_bytes());
        out.push(info.shape.len() as u8);
        for &d in &info.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in values {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {}: need {n} more, {} left",
                self.at,
                self.bytes.len() - self.at
            ))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
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
}

/// Decodes a checkpoint into precision `T`, converting if the file was
/// written in the other precision.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.u8()? as usize;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!("scalar width {width}")));
    }
    let spec_len = r.u32()? as usize;
    let spec: NetSpec =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut net = build_network::<T>(&spec, 0)?;
    let count = r.u32()? as usize;
    let mut targets = net.blocks_mut();
    if count != targets.len() {
        return Err(Error::Checkpoint(format!(
            "{count} blocks in file, spec has {}",
            targets.len()
        )));
    }
    for (info, dst) in targets.iter_mut() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if name != info.name {
            return Err(Error::Checkpoint(format!("expected block {}, found {name}", info.name)));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != info.shape {
            return Err(Error::Checkpoint(format!(
                "block {name}: shape {shape:?}, expected {:?}",
                info.shape
            )));
        }
        let raw = r.take(dst.len() * width)?;
        for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(width)) {
            *v = if width == 4 {
                T::of(f32::read_le(chunk) as f64)
            } else {
                T::of(f64::read_le(chunk))
            };
        }
    }
    drop(targets);
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(net)
}

pub fn write_checkpoint<T: Real>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    std::fs::write(path, encode(net)?)?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    decode(&std::fs::read(path)?)
}
