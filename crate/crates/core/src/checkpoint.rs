//! Checkpoint container: named f64 tensors in a single checksummed file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "ICVAE1\0\0"
//! version u32      currently 1
//! count   u32      number of entries
//! entry*  count times:
//!     name_len u32, name (UTF-8), rank u32, dims u32 x rank,
//!     width u8 (4 or 8), payload (width * prod(dims) bytes, LE floats)
//! crc32   u32      checksum of every preceding byte
//! ```
//!
//! Writers always emit width 8; readers also accept width 4 and promote.
//! What goes inside (parameters, optimizer moments, counters, generator
//! state) is the caller's vocabulary; this module only moves named tensors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

const MAGIC: &[u8; 8] = b"ICVAE1\0\0";
const VERSION: u32 = 1;

/// Serializes entries to the container format, checksum included.
pub fn encode_entries(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(8);
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&out);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    out
}

/// Parses the container format, verifying the checksum first.
pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::CheckpointTruncated(bytes.len()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(stored.try_into().unwrap());
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    struct Cursor<'a> {
        body: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, len: usize) -> Result<&'a [u8]> {
            let end = self
                .pos
                .checked_add(len)
                .filter(|&e| e <= self.body.len())
                .ok_or(Error::CheckpointTruncated(self.pos))?;
            let slice = &self.body[self.pos..end];
            self.pos = end;
            Ok(slice)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }
    let mut cur = Cursor { body, pos: 0 };

    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let count = cur.u32()? as usize;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::CheckpointField("name"))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = cur.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or(Error::CheckpointField("dims"))?;
            dims.push(d);
        }
        let width = cur.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(Error::CheckpointField("width"));
        }
        let payload = cur.take(
            numel
                .checked_mul(width)
                .ok_or(Error::CheckpointField("dims"))?,
        )?;
        let data: Vec<f64> = match width {
            8 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            _ => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        entries.push((name, Tensor::new(dims, data)?));
    }
    if cur.pos != body.len() {
        return Err(Error::CheckpointTruncated(cur.pos));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    std::fs::write(path, encode_entries(entries))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_entries(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_entries() -> Vec<(String, Tensor)> {
        vec![
            (
                "enc.w".to_string(),
                Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, f64::MIN_POSITIVE, 1e300, -0.0])
                    .unwrap(),
            ),
            ("enc.b".to_string(), Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()),
            ("meta.counters".to_string(), Tensor::new(vec![3], vec![4.0, 117.0, 9.0]).unwrap()),
        ]
    }

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let entries = sample_entries();
        let decoded = decode_entries(&encode_entries(&entries)).unwrap();
        assert_eq!(decoded.len(), entries.len());
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&decoded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t0), bits(t1));
        }
    }

    #[test]
    fn file_roundtrip_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &sample_entries()).unwrap();
        let decoded = read_checkpoint(&path).unwrap();
        assert_eq!(decoded[1].0, "enc.b");
        assert_eq!(decoded[1].1.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn header_bytes_are_frozen() {
        let bytes = encode_entries(&[]);
        assert_eq!(&bytes[..8], b"ICVAE1\0\0");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        assert_eq!(bytes.len(), 20); // header + crc only
    }

    #[test]
    fn any_flipped_bit_fails_the_checksum() {
        let mut bytes = encode_entries(&sample_entries());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        match decode_entries(&bytes) {
            Err(Error::ChecksumMismatch { stored, computed }) => assert_ne!(stored, computed),
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_magic_and_version_are_distinct_errors() {
        let good = encode_entries(&sample_entries());
        assert!(matches!(
            decode_entries(&good[..10]),
            Err(Error::CheckpointTruncated(_))
        ));

        // Re-checksum after each header corruption so the specific check fires.
        let rehash = |mut b: Vec<u8>| -> Vec<u8> {
            let n = b.len() - 4;
            let mut h = crc32fast::Hasher::new();
            h.update(&b[..n]);
            let crc = h.finalize().to_le_bytes();
            b[n..].copy_from_slice(&crc);
            b
        };
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_entries(&rehash(bad_magic)),
            Err(Error::CheckpointMagic)
        ));
        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert!(matches!(
            decode_entries(&rehash(bad_version)),
            Err(Error::CheckpointVersion(9))
        ));

        // Trailing garbage between the last entry and the crc.
        let mut padded = good[..good.len() - 4].to_vec();
        padded.extend_from_slice(&[0, 0, 0]);
        assert!(matches!(
            decode_entries(&rehash({
                let mut p = padded;
                p.extend_from_slice(&[0; 4]);
                p
            })),
            Err(Error::CheckpointTruncated(_))
        ));
    }

    #[test]
    fn width_four_payloads_are_promoted() {
        // Hand-build a single width-4 entry to pin reader compatibility.
        let mut body = Vec::new();
        body.extend_from_slice(MAGIC);
        body.extend_from_slice(&1u32.to_le_bytes());
        body.extend_from_slice(&1u32.to_le_bytes());
        body.extend_from_slice(&1u32.to_le_bytes());
        body.push(b'x');
        body.extend_from_slice(&1u32.to_le_bytes()); // rank
        body.extend_from_slice(&2u32.to_le_bytes()); // dim
        body.push(4);
        body.extend_from_slice(&1.5f32.to_le_bytes());
        body.extend_from_slice(&(-2.0f32).to_le_bytes());
        let mut h = crc32fast::Hasher::new();
        h.update(&body);
        let crc = h.finalize().to_le_bytes();
        body.extend_from_slice(&crc);

        let decoded = decode_entries(&body).unwrap();
        assert_eq!(decoded[0].0, "x");
        assert_eq!(decoded[0].1.data(), &[1.5, -2.0]);
    }
}
