//! Binary checkpoint format.
//!
//! ```text
//! magic    b"PCKPT1"
//! count    u32 LE
//! record*  name_len u32 LE | name utf-8 | ndim u32 LE | dims u64 LE * ndim | payload f64 LE * prod(dims)
//! ```

use std::io::{Read, Write};

use super::{NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"PCKPT1";

fn io_err(e: std::io::Error) -> NnError {
    NnError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, records: &[(String, Tensor)]) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&(records.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 3 {
            return Err(NnError::Checkpoint(format!("record `{name}` has {ndim} dims")));
        }
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 8];
        r.read_exact(&mut payload).map_err(io_err)?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(out)
}
