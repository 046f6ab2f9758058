//! Named-array checkpoint file.
//!
//! Layout (little-endian): magic `DCKP`, format version `u32`, array count
//! `u32`, then per array: name length `u32`, UTF-8 name, rank `u32`, dims as
//! `u64`, raw `f32` data.

use std::io::{Read, Write};

use crate::array::numel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Arrays under `prefix/`, with the prefix stripped.
    pub fn namespace<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a NamedArray)> + 'a {
        self.arrays.iter().filter_map(move |a| {
            a.name
                .strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('/'))
                .map(|rest| (rest, a))
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            let name = a.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(a.data.len() * 4);
            for v in &a.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short for header"))?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 1 << 16 {
                return Err(bad("implausible name length"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
            let rank = read_u32(r)? as usize;
            if rank > 16 {
                return Err(bad("implausible rank"));
            }
            let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = numel(&shape);
            let mut raw = Vec::new();
            r.by_ref().take(n as u64 * 4).read_to_end(&mut raw)?;
            if raw.len() != n * 4 {
                return Err(bad(format!("truncated data for `{name}`")));
            }
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Checkpoint { arrays })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_namespaces() {
        let mut c = Checkpoint::default();
        c.push("raw/a", &[2, 3], (0..6).map(|i| i as f32 * 0.5).collect());
        c.push("ema/a", &[2, 3], vec![1.0; 6]);
        c.push("meta/x", &[], vec![7.0]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCKP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let raw: Vec<_> = back.namespace("raw").map(|(n, _)| n.to_string()).collect();
        assert_eq!(raw, vec!["a"]);
    }

    #[test]
    fn truncated_is_rejected() {
        let mut c = Checkpoint::default();
        c.push("w", &[4], vec![1.0; 4]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
        assert!(Checkpoint::read_from(&mut &b"NOPE"[..]).is_err());
    }
}
