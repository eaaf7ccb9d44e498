//! Flat binary checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic    8 bytes  "CPCALCKP"
//! version  u32      = 1
//! kind     u32 len + UTF-8 bytes
//! blocks   u32 count
//!          per block: u32 name len, name bytes, u32 rows, u32 cols
//! payload  every block's values as little-endian f64, in manifest order
//! ```
//!
//! A JSON sidecar at `<path>.json` carries the architecture needed to
//! rebuild the model before its parameters are read back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ParamSet;
use crate::error::{input_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"CPCALCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode<M: ParamSet + ?Sized>(kind: &str, model: &M) -> Vec<u8> {
    let mut manifest = Vec::new();
    model.for_each_param(&mut |name, t| {
        manifest.push(BlockInfo {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
        })
    });
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, kind);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    for b in &manifest {
        put_str(&mut out, &b.name);
        out.extend_from_slice(&(b.rows as u32).to_le_bytes());
        out.extend_from_slice(&(b.cols as u32).to_le_bytes());
    }
    model.for_each_param(&mut |_, t| {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(input_err!("checkpoint truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| input_err!("checkpoint string is not UTF-8"))
    }
}

/// Parses a checkpoint and writes its values into `model`, whose block
/// manifest must match exactly.
pub fn decode_into<M: ParamSet + ?Sized>(bytes: &[u8], kind: &str, model: &mut M) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(input_err!("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(input_err!("unsupported checkpoint version {version}"));
    }
    let found_kind = r.string()?;
    if found_kind != kind {
        return Err(input_err!("checkpoint holds a '{found_kind}' model, expected '{kind}'"));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        manifest.push(BlockInfo { name, rows, cols });
    }
    let mut expected = Vec::new();
    model.for_each_param(&mut |name, t| {
        expected.push(BlockInfo {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
        })
    });
    if manifest != expected {
        return Err(input_err!("checkpoint layer manifest does not match the architecture"));
    }
    let total: usize = manifest.iter().map(|b| b.rows * b.cols).sum();
    let payload = r.take(total * 8)?;
    if r.pos != bytes.len() {
        return Err(input_err!("{} trailing bytes after checkpoint payload", bytes.len() - r.pos));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.assign_flat(&flat)
}

pub fn save<M, A>(path: &Path, kind: &str, model: &M, architecture: &A) -> Result<()>
where
    M: ParamSet + ?Sized,
    A: Serialize,
{
    fs::write(path, encode(kind, model)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(architecture).map_err(|e| Error::json("checkpoint sidecar", e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_architecture<A: DeserializeOwned>(path: &Path) -> Result<A> {
    let side = sidecar_path(path);
    let bytes = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(side.display().to_string(), e))
}

pub fn load_into<M: ParamSet + ?Sized>(path: &Path, kind: &str, model: &mut M) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, kind, model)
}
