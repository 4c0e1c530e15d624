//! Binary weight checkpoints.
//!
//! Layout, all integers unsigned 32-bit little-endian:
//!
//! ```text
//! "EPICW001"                      8 bytes
//! fingerprint                    32 bytes
//! layer count                     u32
//! per layer:
//!   name length, name (UTF-8)     u32, bytes
//!   rank, dimensions              u32, rank x u32
//!   values                        f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Fingerprint, Tensor, WeightSet};

pub const MAGIC: &[u8; 8] = b"EPICW001";

pub fn encode(weights: &WeightSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(weights));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&weights.fingerprint.0);
    push_u32(&mut out, weights.layers.len());
    for t in &weights.layers {
        push_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        push_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            push_u32(&mut out, d);
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Serialized size in bytes; depends only on tensor names and shapes.
pub fn encoded_len(weights: &WeightSet) -> usize {
    8 + 32
        + 4
        + weights.layers.iter().map(|t| 4 + t.name.len() + 4 + 4 * t.shape.len() + 4 * t.values.len()).sum::<usize>()
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut fp = [0u8; 32];
    fp.copy_from_slice(r.take(32)?);
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("shape of `{name}` overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        layers.push(Tensor { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(WeightSet { layers, fingerprint: Fingerprint(fp) })
}

pub fn save(path: &Path, weights: &WeightSet) -> Result<()> {
    fs::write(path, encode(weights))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<WeightSet> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nn::{init_model, ModelSpec};

    #[test]
    fn byte_layout() {
        let w = WeightSet {
            layers: vec![Tensor { name: "ab".into(), shape: vec![1, 2], values: vec![1.0, -2.0] }],
            fingerprint: Fingerprint([7; 32]),
        };
        let bytes = encode(&w);
        let mut expected = b"EPICW001".to_vec();
        expected.extend([7u8; 32]);
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(encoded_len(&w), bytes.len());
    }

    #[test]
    fn rejects_corruption() {
        let w = init_model(&ModelSpec::with_defaults(3, 2, 0)).unwrap();
        let bytes = encode(&w);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(input in 1usize..6, hidden in proptest::collection::vec(1usize..5, 0..3), classes in 1usize..4, bn: bool, seed: u64) {
            let spec = ModelSpec { hidden_dims: hidden, use_batchnorm: bn, ..ModelSpec::with_defaults(input, classes, seed) };
            let w = init_model(&spec).unwrap();
            let bytes = encode(&w);
            prop_assert_eq!(bytes.len(), encoded_len(&w));
            prop_assert_eq!(decode(&bytes).unwrap(), w);
        }
    }
}
