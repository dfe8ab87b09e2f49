//! Sparse image descriptors and the `HMPV` descriptor file.
//!
//! Layout (little-endian): `"HMPV"`, version byte, `u32` id length, UTF-8 id,
//! `u32` dimension, `u32` nnz, then `nnz` pairs of (`u32` index, `f64` value) sorted
//! by index.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse_coding::{read_exact, read_f64, read_u32};

const MAGIC: &[u8; 4] = b"HMPV";
const VERSION: u8 = 1;

/// A sparse real vector with strictly increasing indices and nonzero values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.retain(|e| e.1 != 0.0);
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("sparse vector has duplicate indices"));
        }
        if entries.last().is_some_and(|e| e.0 as usize >= dim) {
            return Err(Error::invalid(format!("index out of range for dimension {dim}")));
        }
        if entries.iter().any(|e| !e.1.is_finite()) {
            return Err(Error::invalid("sparse vector has non-finite values"));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    /// Dot product by merging the two index lists in ascending order.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = 0.0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.0.cmp(&y.0) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    acc += x.1 * y.1;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }

    /// True if both vectors are nonzero at some common index.
    pub fn overlaps(&self, other: &SparseVector) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < other.entries.len() {
            match self.entries[i].0.cmp(&other.entries[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDescriptor {
    pub image_id: String,
    pub vector: SparseVector,
}

impl ImageDescriptor {
    pub fn new(image_id: impl Into<String>, vector: SparseVector) -> Self {
        Self {
            image_id: image_id.into(),
            vector,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let id = self.image_id.as_bytes();
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(self.vector.dim as u32).to_le_bytes())?;
        w.write_all(&(self.vector.entries.len() as u32).to_le_bytes())?;
        for &(i, v) in &self.vector.entries {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "HMPV")?;
        if &magic != MAGIC {
            return Err(Error::format("HMPV", "bad magic bytes"));
        }
        let mut version = [0u8; 1];
        read_exact(&mut r, &mut version, "HMPV")?;
        if version[0] != VERSION {
            return Err(Error::format("HMPV", format!("unsupported version {}", version[0])));
        }
        let id_len = read_u32(&mut r, "HMPV")? as usize;
        let mut id = vec![0u8; id_len.min(1 << 20)];
        if id.len() != id_len {
            return Err(Error::format("HMPV", "image id too long"));
        }
        read_exact(&mut r, &mut id, "HMPV")?;
        let image_id = String::from_utf8(id).map_err(|_| Error::format("HMPV", "image id is not UTF-8"))?;
        let dim = read_u32(&mut r, "HMPV")? as usize;
        let nnz = read_u32(&mut r, "HMPV")? as usize;
        if nnz > dim {
            return Err(Error::format("HMPV", "more nonzeros than dimensions"));
        }
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let i = read_u32(&mut r, "HMPV")?;
            let v = read_f64(&mut r, "HMPV")?;
            entries.push((i, v));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::format("HMPV", "entries not sorted by index"));
        }
        let vector = SparseVector::new(dim, entries).map_err(|e| Error::format("HMPV", e.to_string()))?;
        Ok(Self { image_id, vector })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
