//! Reader and writer for `HOIE` embedding archives.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "HOIE"
//! version u32      1
//! dim     u32
//! count   u64
//! count × { key_len u16, key (UTF-8), dim × f32 }
//! ```
//!
//! Pair embeddings are keyed `"{image_id}:{pair_index}"`, text embeddings
//! `"hoi{hoi_id}"`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HOIE";
pub const VERSION: u32 = 1;
/// Allowed deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Keyed store of unit-norm `f32` vectors, held in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Scales `v` to unit length in place. Zero vectors are left untouched.
pub fn normalize(v: &mut [f32]) {
    let n = l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / n) as f32;
        }
    }
}

pub fn text_key(hoi_id: impl std::fmt::Display) -> String {
    format!("hoi{hoi_id}")
}

impl EmbeddingArchive {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Validation(format!("invalid embedding dim {dim}")));
        }
        Ok(EmbeddingArchive {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Appends a vector, checking length, key uniqueness and normalization.
    pub fn insert(&mut self, key: impl Into<String>, vector: &[f32]) -> Result<()> {
        let key = key.into();
        if key.len() > u16::MAX as usize {
            return Err(Error::Validation(format!("key too long ({} bytes)", key.len())));
        }
        if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "key {key:?}: vector length {} != dim {}",
                vector.len(),
                self.dim
            )));
        }
        let norm = l2_norm(vector);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!(
                "key {key:?}: vector norm {norm} is not within {NORM_TOLERANCE} of 1"
            )));
        }
        if self.index.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate key {key:?}")));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index
            .get(key)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, key: &str) -> Result<&[f32]> {
        self.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.keys
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for (key, vector) in self.iter() {
            w.write_all(&(key.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(key.as_bytes()).map_err(io)?;
            for x in vector {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut header = [0u8; 20];
        read_or_format(&mut r, &mut header, path, "header")?;
        if &header[0..4] != MAGIC {
            return Err(Error::format(path, "header", "bad magic, expected \"HOIE\""));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(
                path,
                "header",
                format!("unsupported version {version}"),
            ));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::format(path, "header", "dim is zero"));
        }

        let mut archive = EmbeddingArchive::new(dim)?;
        let mut vec_bytes = vec![0u8; dim * 4];
        let mut vector = vec![0f32; dim];
        for found in 0..count {
            let truncated = || Error::Truncated {
                path: path.to_path_buf(),
                expected: count,
                found,
            };
            let mut len = [0u8; 2];
            if !read_full(&mut r, &mut len).map_err(|e| Error::io(path, e))? {
                return Err(truncated());
            }
            let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
            if !read_full(&mut r, &mut key).map_err(|e| Error::io(path, e))?
                || !read_full(&mut r, &mut vec_bytes).map_err(|e| Error::io(path, e))?
            {
                return Err(truncated());
            }
            let key = String::from_utf8(key)
                .map_err(|e| Error::format(path, format!("record {found}"), e))?;
            for (x, b) in vector.iter_mut().zip(vec_bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(b.try_into().unwrap());
            }
            archive.insert(key, &vector)?;
        }

        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(
                path,
                format!("after record {count}"),
                "trailing bytes beyond declared count",
            ));
        }
        Ok(archive)
    }
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on clean or partial EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    match r.read_exact(buf) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(e),
    }
}

fn read_or_format(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    if read_full(r, buf).map_err(|e| Error::io(path, e))? {
        Ok(())
    } else {
        Err(Error::format(path, what, "file too short"))
    }
}
