//! Binary float payload framing shared by dataset and checkpoint files.
//!
//! Layout: `u64` little-endian element count, then that many `f32`
//! little-endian values, then a `u32` little-endian CRC32 over everything
//! before it.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PayloadError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: u64, found: u64 },
    #[error("payload checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
}

/// Encodes `values` and returns the bytes together with their CRC32.
pub fn encode(values: &[f32]) -> (Vec<u8>, u32) {
    let mut bytes = Vec::with_capacity(8 + 4 * values.len() + 4);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    (bytes, crc)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<f32>, u32), PayloadError> {
    if bytes.len() < 12 {
        return Err(PayloadError::Length {
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte header"));
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(12))
        .unwrap_or(u64::MAX);
    if expected != bytes.len() as u64 {
        return Err(PayloadError::Length {
            expected,
            found: bytes.len() as u64,
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4-byte crc"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PayloadError::Checksum { stored, computed });
    }
    let values = body[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte float")))
        .collect();
    Ok((values, stored))
}

pub fn write(path: &Path, values: &[f32]) -> Result<u32, PayloadError> {
    let (bytes, crc) = encode(values);
    fs::write(path, bytes).map_err(|source| PayloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(crc)
}

pub fn read(path: &Path) -> Result<(Vec<f32>, u32), PayloadError> {
    let bytes = fs::read(path).map_err(|source| PayloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_inverts_encode() {
        let values = [0.0f32, -1.5, f32::MIN_POSITIVE, 3.25e7];
        let (bytes, crc) = encode(&values);
        let (back, stored) = decode(&bytes).unwrap();
        assert_eq!(back, values);
        assert_eq!(stored, crc);
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let (bytes, _) = encode(&[1.0, 2.0, 3.0]);
        let err = decode(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, PayloadError::Length { .. }));
    }

    #[test]
    fn flipped_bit_is_a_checksum_error() {
        let (mut bytes, _) = encode(&[1.0, 2.0, 3.0]);
        bytes[9] ^= 0x10;
        assert!(matches!(decode(&bytes), Err(PayloadError::Checksum { .. })));
    }
}
