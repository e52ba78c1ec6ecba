//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `IMVCKPT1`, then one record per tensor
//! until end of file:
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 dtype (0=f32, 1=f64) | u32 rank | rank × u64 dims | values
//! ```
//!
//! Batch-norm running statistics are stored as `<layer>.running_mean` and
//! `<layer>.running_var` records.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IMVCKPT1";

fn write_record<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[T]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&T::DTYPE.tag().to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in values {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for (name, t) in store.iter() {
        write_record(&mut out, name, t.shape(), t.data());
    }
    for (name, s) in store.bn_states() {
        let c = s.channels();
        write_record(&mut out, &format!("{name}.running_mean"), &[c], &s.running_mean);
        write_record(&mut out, &format!("{name}.running_var"), &[c], &s.running_var);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            what: "checkpoint",
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes every record; all records must carry `T`'s dtype.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { what: "checkpoint" });
    }
    let mut r = Reader { bytes, pos: 8 };
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("checkpoint name not UTF-8: {e}")))?
            .to_string();
        let dtype = DType::from_tag(r.u32()?)
            .ok_or_else(|| Error::Format(format!("unknown dtype tag in `{name}`")))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "record `{name}` is {dtype:?}, expected {:?}",
                T::DTYPE
            )));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Format("dimension overflow".into()))?;
            shape.push(d);
        }
        let len = numel
            .checked_mul(dtype.size_of())
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        let raw = r.take(len)?;
        let values = raw.chunks_exact(dtype.size_of()).map(T::read_le).collect();
        records.push((name, Tensor::new(&shape, values)?));
    }
    Ok(records)
}

/// Overwrites matching parameters and buffers of `store`. Unknown names
/// and shape mismatches are errors.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, records: Vec<(String, Tensor<T>)>) -> Result<()> {
    for (name, tensor) in records {
        if let Some(slot) = store.get_mut(&name) {
            if slot.shape() != tensor.shape() {
                return Err(Error::shape(format!(
                    "checkpoint `{name}` has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
            continue;
        }
        let (layer, field) = name
            .rsplit_once('.')
            .ok_or_else(|| Error::Format(format!("unknown checkpoint record `{name}`")))?;
        let state = store
            .bn_state_mut(layer)
            .map_err(|_| Error::Format(format!("unknown checkpoint record `{name}`")))?;
        let target = match field {
            "running_mean" => &mut state.running_mean,
            "running_var" => &mut state.running_var,
            _ => return Err(Error::Format(format!("unknown checkpoint record `{name}`"))),
        };
        if target.len() != tensor.numel() {
            return Err(Error::shape(format!("checkpoint `{name}` has wrong length")));
        }
        *target = tensor.into_data();
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    load_into(store, decode_checkpoint(&bytes)?)
}
