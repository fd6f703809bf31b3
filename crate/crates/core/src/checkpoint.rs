//! Binary checkpoints: `PHGS` magic, `u32` version, `u64` point count, then
//! one record of little-endian `f32` attributes per point in
//! [`GaussianPoint`] field order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{GaussianPoint, ATTRIBUTE_COUNT};

pub const MAGIC: &[u8; 4] = b"PHGS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

pub fn encode_checkpoint(points: &[GaussianPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + points.len() * ATTRIBUTE_COUNT * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in p.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<GaussianPoint>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, expected {VERSION}"
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let record = ATTRIBUTE_COUNT * 4;
    let expected = count
        .checked_mul(record)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Checkpoint("point count overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Checkpoint(format!(
            "truncated: {count} points need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(bytes[HEADER_LEN..]
        .chunks_exact(record)
        .map(|chunk| {
            let mut a = [0f32; ATTRIBUTE_COUNT];
            for (v, b) in a.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
            GaussianPoint::from_array(&a)
        })
        .collect())
}

pub fn save_checkpoint(points: &[GaussianPoint], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(points)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<GaussianPoint>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_round_trip() {
        let bytes = encode_checkpoint(&[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert!(decode_checkpoint(&bytes).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/scene.phgs");
        let mut pts = vec![GaussianPoint::default(); 3];
        pts[1].position = [1.5, -2.0, 0.125];
        pts[2].shadow_coeff_logit = -7.25;
        save_checkpoint(&pts, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), pts);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut bytes = encode_checkpoint(&[GaussianPoint::default()]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        bytes.pop();
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("truncated"));
        assert!(decode_checkpoint(b"PHG").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(raw in prop::collection::vec(prop::array::uniform25(any::<u32>()), 0..8)) {
            let pts: Vec<GaussianPoint> = raw
                .iter()
                .map(|r| GaussianPoint::from_array(&r.map(f32::from_bits)))
                .collect();
            let back = decode_checkpoint(&encode_checkpoint(&pts)).unwrap();
            prop_assert_eq!(back.len(), pts.len());
            for (a, b) in back.iter().zip(&pts) {
                prop_assert_eq!(a.to_array().map(f32::to_bits), b.to_array().map(f32::to_bits));
            }
        }
    }
}
