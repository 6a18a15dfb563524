//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"WACT" | version: u32 | count: u64 |
//!   count × ( name_len: u64 | name: utf-8 | ndim: u64 | dims: u64 × ndim | payload: f64 × numel )
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WACT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// Guards against absurd allocations from corrupt headers.
const MAX_NAME: u64 = 1 << 16;
const MAX_NDIM: u64 = 16;
const MAX_NUMEL: u64 = 1 << 32;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)?;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!(
                "name length {name_len} too large"
            )));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not utf-8: {e}")))?;
        let ndim = read_u64(&mut r)?;
        if ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("{name}: ndim {ndim} too large")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = read_u64(&mut r)?;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel > MAX_NUMEL {
            return Err(Error::Checkpoint(format!(
                "{name}: {numel} elements too large"
            )));
        }
        let mut data = Vec::with_capacity(numel as usize);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), entries)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
