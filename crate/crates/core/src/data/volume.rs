//! Single-volume file format.
//!
//! Little-endian, 24-byte header followed by voxels in row-major order:
//!
//! ```text
//! "IMV1" | u32 dtype (0 = f32) | u32 D | u32 H | u32 W | u32 label | D·H·W × f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"IMV1";
pub const VOLUME_HEADER_LEN: usize = 24;
const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub path: PathBuf,
    pub label: usize,
    pub dims: [usize; 3],
    pub values: Vec<f32>,
}

impl VolumeRecord {
    pub fn new(path: impl Into<PathBuf>, label: usize, dims: [usize; 3], values: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!("volume dims must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::shape(format!(
                "volume dims {dims:?} do not match {} values",
                values.len()
            )));
        }
        Ok(Self {
            path: path.into(),
            label,
            dims,
            values,
        })
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.dims;
        self.values[(z * h + y) * w + x]
    }
}

pub fn encode_volume(record: &VolumeRecord) -> Result<Vec<u8>> {
    if let Some(v) = record.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "volume {} contains non-finite value {v}",
            record.path.display()
        )));
    }
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + 4 * record.values.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for &d in &record.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    let label = u32::try_from(record.label).map_err(|_| Error::Format("label exceeds u32".into()))?;
    out.extend_from_slice(&label.to_le_bytes());
    for v in &record.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(path: impl Into<PathBuf>, bytes: &[u8]) -> Result<VolumeRecord> {
    if bytes.len() < 4 || &bytes[..4] != VOLUME_MAGIC {
        return Err(Error::BadMagic { what: "volume file" });
    }
    if bytes.len() < VOLUME_HEADER_LEN {
        return Err(Error::Truncated {
            what: "volume header",
            expected: VOLUME_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let dtype = word(1);
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported volume dtype tag {dtype}")));
    }
    let dims = [word(2) as usize, word(3) as usize, word(4) as usize];
    let label = word(5) as usize;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimension overflow for {dims:?}")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(VOLUME_HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("dimension overflow for {dims:?}")))?;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            what: "volume data",
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[VOLUME_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    VolumeRecord::new(path, label, dims, values)
}

pub fn write_volume(path: &Path, record: &VolumeRecord) -> Result<()> {
    fs::write(path, encode_volume(record)?)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeRecord> {
    let bytes = fs::read(path)?;
    decode_volume(path, &bytes)
}
