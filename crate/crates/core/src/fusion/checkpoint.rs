use std::fs;
use std::path::Path;

use super::FusionWeights;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SAWT";

/// `SAWT`, u32 tensor count, then per tensor a u32 rank, u32 dims and
/// little-endian f64 values.
pub fn encode(w: &FusionWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    let tensors = w.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<FusionWeights> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Format(format!("bad weight magic {:?}", &bytes[..4])));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = r.u32()?;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank} is implausible")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor shape {shape:?} overflows")))?;
        let data = r.take(n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after weights", bytes.len() - r.pos)));
    }
    FusionWeights::from_tensors(tensors)
}

pub fn save_weights(path: &Path, w: &FusionWeights) -> Result<()> {
    fs::write(path, encode(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<FusionWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let w = FusionWeights::random(&FusionConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sawt");
        save_weights(&path, &w).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }

    #[test]
    fn layout_header() {
        let w = FusionWeights::zeros(&FusionConfig { image_channels: 1, gate_channels: 1, bev_channels: 1, lss_channels: 1 });
        let b = encode(&w);
        assert_eq!(&b[..4], b"SAWT");
        assert_eq!(&b[4..8], &9u32.to_le_bytes());
        // first tensor: rank 4, dims 1,1,3,3
        assert_eq!(&b[8..12], &4u32.to_le_bytes());
        assert_eq!(&b[20..24], &3u32.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs() {
        let b = encode(&FusionWeights::zeros(&FusionConfig::default()));
        let mut bad = b.clone();
        bad[1] = b'X';
        assert_eq!(decode(&bad).unwrap_err().kind(), "format");
        assert_eq!(decode(&b[..b.len() - 3]).unwrap_err().kind(), "truncated");
        assert_eq!(decode(&b[..2]).unwrap_err().kind(), "truncated");
    }
}
