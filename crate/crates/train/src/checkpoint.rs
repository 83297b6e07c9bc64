//! Binary checkpoints: `TSGCKPT1`, then per parameter the name length
//! (u64 LE), UTF-8 name, rank (u64 LE), dims (u64 LE each) and values
//! (f32 LE).

use std::collections::HashMap;
use std::path::Path;

use tsg_tensor::{ParamStore, Real};

use crate::error::io_err;
use crate::{Result, TrainError};

pub const MAGIC: &[u8; 8] = b"TSGCKPT1";

pub fn encode<F: Real>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in store.params() {
        let name = p.name.as_bytes();
        out.extend((name.len() as u64).to_le_bytes());
        out.extend(name);
        let shape = p.tensor.shape();
        out.extend((shape.len() as u64).to_le_bytes());
        for &d in shape {
            out.extend((d as u64).to_le_bytes());
        }
        for v in p.tensor.data().iter() {
            out.extend((v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(io_err(path))
}

struct Entry {
    shape: Vec<usize>,
    values: Vec<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Truncated {
            path: self.path.to_path_buf(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| TrainError::Truncated {
            path: self.path.to_path_buf(),
        })
    }
}

fn decode(buf: &[u8], path: &Path) -> Result<Vec<(String, Entry)>> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(TrainError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
        path,
    };
    let mut entries = Vec::new();
    while r.pos < buf.len() {
        let len = r.u64()?;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rank = r.u64()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| TrainError::Truncated {
                path: path.to_path_buf(),
            })?;
        let values = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((name, Entry { shape, values }));
    }
    Ok(entries)
}

/// Loads a checkpoint into `store`. Every parameter must be present with
/// the right shape and no extras are allowed; on any error the store is
/// left untouched.
pub fn load<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let buf = std::fs::read(path).map_err(io_err(path))?;
    load_bytes(store, &buf, path)
}

pub fn load_bytes<F: Real>(store: &ParamStore<F>, buf: &[u8], path: &Path) -> Result<()> {
    let entries: HashMap<String, Entry> = decode(buf, path)?.into_iter().collect();
    for (name, e) in &entries {
        let t = store.get(name).ok_or_else(|| TrainError::UnknownParameter {
            path: path.to_path_buf(),
            name: name.clone(),
        })?;
        if t.shape() != e.shape.as_slice() {
            return Err(TrainError::ParameterShape {
                path: path.to_path_buf(),
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: e.shape.clone(),
            });
        }
    }
    let missing: Vec<String> = store
        .names()
        .filter(|n| !entries.contains_key(*n))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(TrainError::MissingParameters {
            path: path.to_path_buf(),
            names: missing,
        });
    }
    for p in store.params() {
        let e = &entries[&p.name];
        p.tensor
            .set_data(e.values.iter().map(|&v| F::lit(v as f64)).collect())?;
    }
    Ok(())
}
