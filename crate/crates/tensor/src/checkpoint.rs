//! Flat binary parameter checkpoints.
//!
//! Layout: magic `DLAB`, format version (u32 LE), then per parameter:
//! name length (u64), name bytes (UTF-8), rank (u64), extents (u64 each),
//! values (f32 LE). All integers little-endian. Records run to end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DLAB";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_params<W: Write>(params: &ParamSet, out: &mut W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(input: &mut R) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(bad("missing DLAB magic"));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u64()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| bad(format!("parameter name at byte {} is not UTF-8", cur.pos)))?
            .to_string();
        let rank = cur.u64()? as usize;
        if rank > 8 {
            return Err(bad(format!("rank {rank} of '{name}' exceeds 8")));
        }
        let shape = (0..rank).map(|_| cur.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| bad(format!("extents of '{name}' overflow")))?;
        let raw = cur.take(numel.checked_mul(4).ok_or_else(|| bad("value count overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("'{name}': {e}")))?;
        params.insert(name, t);
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    read_params(&mut BufReader::new(File::open(path)?))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(bad(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
