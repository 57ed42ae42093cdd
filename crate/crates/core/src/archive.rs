//! Binary parameter archive shared by backend and learned-token checkpoints.
//!
//! Layout (little endian): magic `PRSA`, `u32` format version, `u32` metadata
//! count followed by length-prefixed UTF-8 key/value pairs, `u32` array count
//! followed by (name, `u32` rank, `u64` dims, `f64` values). Entries are
//! written in key order so equal archives are byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRSA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayEntry {
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "array shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata `{key}` has unparsable value {raw:?}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ArrayEntry) {
        self.arrays.insert(name.into(), entry);
    }

    pub fn array(&self, name: &str) -> Result<&ArrayEntry> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let entry = self.array(name)?;
        if entry.data.len() != len {
            return Err(Error::Format(format!(
                "array `{name}` has {} values, expected {len}",
                entry.data.len()
            )));
        }
        Ok(entry.data.clone())
    }

    /// Arrays whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a ArrayEntry)> + 'a {
        self.arrays
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(move |(k, v)| (&k[prefix.len()..], v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            write_str(&mut out, k);
            write_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, entry) in &self.arrays {
            write_str(&mut out, name);
            out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
            for d in &entry.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &entry.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut archive = Archive::new();
        let n_meta = cur.u32()?;
        for _ in 0..n_meta {
            let k = cur.string()?;
            let v = cur.string()?;
            archive.meta.insert(k, v);
        }
        let n_arrays = cur.u32()?;
        for _ in 0..n_arrays {
            let name = cur.string()?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            archive.arrays.insert(name, ArrayEntry { shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after archive".into()));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of archive".into()))?;
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

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 key".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_wrong_version() {
        let mut bytes = Archive::new().to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn rejects_truncated() {
        let mut a = Archive::new();
        a.insert("x", ArrayEntry::vector(vec![1.0, 2.0]));
        let bytes = a.to_bytes();
        assert!(matches!(
            Archive::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(Archive::from_bytes(b"NOPE"), Err(Error::Format(_))));
    }

    #[test]
    fn prefix_iteration() {
        let mut a = Archive::new();
        a.insert("tok/a", ArrayEntry::vector(vec![1.0]));
        a.insert("tok/b", ArrayEntry::vector(vec![2.0]));
        a.insert("toz", ArrayEntry::vector(vec![3.0]));
        let names: Vec<_> = a.with_prefix("tok/").map(|(k, _)| k.to_string()).collect();
        assert_eq!(names, vec!["a", "b"]);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(values in proptest::collection::vec(any::<f64>(), 0..40), key in "[a-z/]{1,12}") {
            let mut a = Archive::new();
            a.set_meta("k", &key);
            a.insert(key.clone(), ArrayEntry::vector(values.clone()));
            let b = Archive::from_bytes(&a.to_bytes()).unwrap();
            let got = &b.array(&key).unwrap().data;
            prop_assert_eq!(got.len(), values.len());
            for (x, y) in got.iter().zip(&values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(b.to_bytes(), a.to_bytes());
        }
    }
}
