use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Box3D, OccGrid};
use crate::error::{Error, Result};

pub const OCC_MAGIC: &[u8; 4] = b"OCC1";
const HEADER_LEN: usize = 16;

impl OccGrid {
    /// `OCC1`, little-endian u32 `X, Y, Z`, then the class bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.classes().len());
        out.extend_from_slice(OCC_MAGIC);
        for d in self.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(self.classes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
        }
        if &bytes[..4] != OCC_MAGIC {
            return Err(Error::Format(format!("bad occupancy magic {:?}", &bytes[..4])));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let dims = [dim(0), dim(1), dim(2)];
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("occupancy dims {dims:?} overflow")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < n {
            return Err(Error::Truncated { expected: HEADER_LEN + n, found: bytes.len() });
        }
        if payload.len() > n {
            return Err(Error::Format(format!("{} trailing bytes after occupancy payload", payload.len() - n)));
        }
        Self::new(dims, payload.to_vec())
    }
}

pub fn read_occ(path: &Path) -> Result<OccGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    OccGrid::from_bytes(&bytes)
}

pub fn write_occ(path: &Path, occ: &OccGrid) -> Result<()> {
    fs::write(path, occ.to_bytes()).map_err(|e| Error::io(path, e))
}

/// JSON-lines, one [`Box3D`] per line. Each box is validated.
pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let b: Box3D = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        b.validate()?;
        out.push(b);
    }
    Ok(out)
}

pub fn write_boxes(path: &Path, boxes: &[Box3D]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for b in boxes {
        let line = serde_json::to_string(b).map_err(|source| Error::Json { path: path.into(), source })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(seed: u64) -> OccGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [5, 7, 3];
        OccGrid::new(dims, (0..105).map(|_| rng.random_range(0..=17u8)).collect()).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let g = random_grid(3);
        assert_eq!(OccGrid::from_bytes(&g.to_bytes()).unwrap(), g);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.occ");
        let g = random_grid(9);
        write_occ(&path, &g).unwrap();
        assert_eq!(read_occ(&path).unwrap(), g);
    }

    #[test]
    fn header_layout() {
        let g = OccGrid::filled([2, 3, 4], 17).unwrap();
        let b = g.to_bytes();
        assert_eq!(&b[..4], b"OCC1");
        assert_eq!(&b[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 24);
    }

    #[test]
    fn corrupt_inputs() {
        let mut b = random_grid(1).to_bytes();
        let full = b.clone();
        b[0] = b'X';
        assert!(matches!(OccGrid::from_bytes(&b), Err(Error::Format(_))));
        assert!(matches!(OccGrid::from_bytes(&full[..full.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(OccGrid::from_bytes(&full[..10]), Err(Error::Truncated { .. })));
        let mut bad_id = full.clone();
        bad_id[20] = 18;
        assert!(matches!(OccGrid::from_bytes(&bad_id), Err(Error::Format(_))));
    }

    #[test]
    fn boxes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.jsonl");
        let boxes = vec![
            Box3D { center: [1.0, -2.0, 0.5], size: [4.2, 1.8, 1.6], yaw: 0.3, class_id: 4 },
            Box3D { center: [-7.5, 3.0, 0.2], size: [0.6, 0.6, 1.7], yaw: -1.2, class_id: 7 },
        ];
        write_boxes(&path, &boxes).unwrap();
        assert_eq!(read_boxes(&path).unwrap(), boxes);
    }
}
