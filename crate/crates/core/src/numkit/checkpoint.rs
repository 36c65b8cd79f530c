//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RULFCKPT"
//! version u32      1
//! count   u32      number of records
//! record* name_len u32, name (UTF-8), rank u32, dims u64 × rank,
//!         values f64 × prod(dims)
//! ```
//!
//! Values are always stored as 64-bit floats regardless of the in-memory
//! scalar type, so an `f64` store round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RULFCKPT";
pub const VERSION: u32 = 1;

pub fn write_params<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Load("not a parameter container (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Load(format!("unsupported container version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Load("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Load(format!("{name}: {e}")))?;
        store.insert(name, t);
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_params(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path)?;
    read_params(bytes.as_slice())
}

/// Copy values from `src` into `dst` for every name in `dst`, checking shapes.
pub fn restore_into<T: Scalar>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    let names: Vec<String> = dst.names().map(str::to_string).collect();
    for name in names {
        let s = src
            .get(&name)
            .ok_or_else(|| Error::Load(format!("checkpoint is missing parameter {name}")))?;
        let d = dst.get_mut(&name).expect("name from dst");
        if d.shape() != s.shape() {
            return Err(Error::Load(format!(
                "parameter {name}: checkpoint shape {:?} does not match model shape {:?}",
                s.shape(),
                d.shape()
            )));
        }
        *d = s.clone();
    }
    Ok(())
}
