//! The big-endian IDX container used by MNIST-family files.
//!
//! Layout: a 4-byte magic `0x0000 08 RR` (`08` = unsigned byte payload,
//! `RR` = rank), `RR` big-endian `u32` dimension sizes, then the raw
//! payload. Only rank-3 images (`0x803`) and rank-1 labels (`0x801`) are
//! accepted.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxRaw {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxRaw {
    pub fn images(n: u32, rows: u32, cols: u32, payload: Vec<u8>) -> Self {
        Self {
            magic: MAGIC_IMAGES,
            dims: vec![n, rows, cols],
            payload,
        }
    }

    pub fn labels(payload: Vec<u8>) -> Self {
        Self {
            magic: MAGIC_LABELS,
            dims: vec![payload.len() as u32],
            payload,
        }
    }

    /// Images as `(n, 1, rows, cols)` scaled to `[-1, 1]` by `v / 127.5 - 1`.
    pub fn to_images(&self) -> Result<Tensor4<f32>> {
        if self.magic != MAGIC_IMAGES {
            return Err(Error::BadMagic(self.magic));
        }
        let [n, r, c] = [self.dims[0], self.dims[1], self.dims[2]].map(|d| d as usize);
        let data = self.payload.iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
        Tensor4::new([n, 1, r, c], data)
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        if self.magic != MAGIC_LABELS {
            return Err(Error::BadMagic(self.magic));
        }
        Ok(self.payload.iter().map(|&v| v as usize).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn parse_idx_bytes(bytes: &[u8]) -> Result<IdxRaw> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i))
        .collect::<Result<Vec<u32>>>()?;
    let header = 4 + 4 * rank;
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let len = len.ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?}")))?;
    let expected = header
        .checked_add(len)
        .ok_or_else(|| Error::DimensionOverflow(format!("dims {dims:?}")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after idx payload",
            bytes.len() - expected
        )));
    }
    Ok(IdxRaw {
        magic,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

pub fn parse_idx(path: impl AsRef<Path>) -> Result<IdxRaw> {
    parse_idx_bytes(&std::fs::read(path)?)
}

pub fn write_idx(path: impl AsRef<Path>, raw: &IdxRaw) -> Result<()> {
    std::fs::write(path, raw.to_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_in_memory() {
        let raw = IdxRaw::labels(vec![3, 1, 4, 1, 5]);
        let back = parse_idx_bytes(&raw.to_bytes()).unwrap();
        assert_eq!(back, raw);
        assert_eq!(back.to_labels().unwrap(), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn image_scaling_endpoints() {
        let raw = IdxRaw::images(1, 1, 3, vec![0, 255, 128]);
        let t = raw.to_images().unwrap();
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!(t.data()[2] > 0.0);
    }

    #[test]
    fn header_errors() {
        let mut bytes = IdxRaw::labels(vec![1, 2]).to_bytes();
        bytes[3] = 0x02;
        assert!(matches!(parse_idx_bytes(&bytes), Err(Error::BadMagic(0x802))));
        assert!(matches!(parse_idx_bytes(&[0, 0]), Err(Error::Truncated { .. })));
        let huge = IdxRaw {
            magic: MAGIC_IMAGES,
            dims: vec![u32::MAX, u32::MAX, u32::MAX],
            payload: vec![],
        };
        let r = parse_idx_bytes(&huge.to_bytes());
        assert!(matches!(r, Err(Error::DimensionOverflow(_)) | Err(Error::Truncated { .. })));
    }
}
