//! Flat binary value grids.
//!
//! Layout: a 64-byte little-endian header followed by row-major f64 payload.
//!
//! | offset | field                          |
//! |--------|--------------------------------|
//! | 0      | magic `QVIF`                   |
//! | 4      | version (u32) = 1              |
//! | 8      | rank (u32, at most 5)          |
//! | 12     | dtype (u32, 1 = f64)           |
//! | 16     | dims (5 x u64, unused = 0)     |
//! | 56     | payload checksum (u64)         |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QVIF";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 1;
pub const HEADER_LEN: usize = 64;
pub const MAX_RANK: usize = 5;

/// First eight bytes of the payload's SHA-256, little-endian.
fn checksum(payload: &[u8]) -> u64 {
    let d = Sha256::digest(payload);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn encode(dims: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::InvalidGrid(format!("QVIF rank must be 1..={MAX_RANK}, got {}", dims.len())));
    }
    let n: usize = dims.iter().product();
    if n != values.len() {
        return Err(Error::InvalidGrid(format!("dims {dims:?} hold {n} values, got {}", values.len())));
    }
    let mut payload = Vec::with_capacity(8 * n);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    for k in 0..MAX_RANK {
        out.extend_from_slice(&(dims.get(k).copied().unwrap_or(0) as u64).to_le_bytes());
    }
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            detail: format!("file holds {} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(malformed(format!("unsupported version {}", u32_at(4))));
    }
    let rank = u32_at(8) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(malformed(format!("rank {rank}")));
    }
    if u32_at(12) != DTYPE_F64 {
        return Err(malformed(format!("unsupported dtype {}", u32_at(12))));
    }
    let dims: Vec<usize> = (0..rank).map(|k| u64_at(16 + 8 * k) as usize).collect();
    let n: usize = dims.iter().product();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * n || checksum(payload) != u64_at(56) {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            detail: format!("payload of {} bytes does not match dims {dims:?} and header checksum", payload.len()),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, values))
}

pub fn write(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    std::fs::write(path, encode(dims, values)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_bytes() {
        let b = encode(&[2, 3], &[0.0; 6]).unwrap();
        assert_eq!(b.len(), 64 + 48);
        assert_eq!(&b[..4], b"QVIF");
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 3);
    }

    #[test]
    fn flipped_payload_bit_is_caught() {
        let mut b = encode(&[3], &[1.0, 2.0, 3.0]).unwrap();
        b[70] ^= 1;
        assert!(matches!(decode(&b, Path::new("x")), Err(Error::Checksum { .. })));
    }

    #[test]
    fn rank_limits() {
        assert!(encode(&[], &[]).is_err());
        assert!(encode(&[1; 6], &[0.0]).is_err());
        assert!(encode(&[2, 2], &[0.0; 3]).is_err());
    }
}
