//! Binary checkpoint format:
//!
//! ```text
//! "OCCF" | version u16 | architecture hash u64 | value count u64 | f32 * count
//! ```
//!
//! All integers and floats are little-endian; values follow parameter
//! declaration order (weight then bias, layer by layer).

use std::fs;
use std::path::Path;

use super::{ParamSet, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OCCF";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const CHECKPOINT_HEADER_LEN: usize = 4 + 2 + 8 + 8;

pub fn save_checkpoint<T: Real>(params: &ParamSet<T>, arch_hash: u64, path: &Path) -> Result<()> {
    let values = params.flatten();
    let mut buf = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 4 * values.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&arch_hash.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads values into `params`. Nothing is modified unless the whole file
/// validates against `arch_hash` and the parameter count.
pub fn load_checkpoint<T: Real>(params: &mut ParamSet<T>, arch_hash: u64, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    if bytes.len() < CHECKPOINT_HEADER_LEN {
        return Err(Error::Checkpoint(format!("{} is truncated ({} bytes)", path.display(), bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hash = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
    if hash != arch_hash {
        return Err(Error::Checkpoint(format!(
            "architecture hash mismatch: file {hash:016x}, current config {arch_hash:016x}"
        )));
    }
    let count = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")) as usize;
    if count != params.param_count() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} values, model expects {}",
            params.param_count()
        )));
    }
    if bytes.len() != CHECKPOINT_HEADER_LEN + 4 * count {
        return Err(Error::Checkpoint(format!(
            "{} is truncated: expected {} bytes, found {}",
            path.display(),
            CHECKPOINT_HEADER_LEN + 4 * count,
            bytes.len()
        )));
    }
    let mut values = bytes[CHECKPOINT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("count validated");
        }
        t.zero_grad();
    }
    Ok(())
}

/// 64-bit FNV-1a, used to fingerprint canonical architecture strings.
pub fn fnv1a64(data: impl AsRef<[u8]>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in data.as_ref() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
