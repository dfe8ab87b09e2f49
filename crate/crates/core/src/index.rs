//! Inverted-file cosine search over sparse descriptors.
//!
//! Each descriptor dimension owns a posting list of `(document, value)` pairs. A
//! query touches only the posting lists of its own nonzero dimensions, so the
//! candidate set is every document sharing at least one dimension with the query.
//! Stored descriptors are unit-norm, making the accumulated dot product the cosine
//! similarity.
//!
//! File layout (little-endian): `"HMPI"`, version byte, `u32` dimension, `u32`
//! document count, the id table (`u32` length + UTF-8 bytes per document, in ordinal
//! order), then one block per non-empty dimension in ascending order:
//! `u32` dimension, `u32` length, `length × (u32 ordinal, f64 value)`. Version 2
//! files carry `dimension × f64` IDF weights between the id table and the blocks.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::descriptor::{ImageDescriptor, SparseVector};
use crate::error::{Error, Result};
use crate::sparse_coding::{read_exact, read_f64, read_u32};

const MAGIC: &[u8; 4] = b"HMPI";
const VERSION_PLAIN: u8 = 1;
const VERSION_IDF: u8 = 2;

/// Ranked `(image id, score)` pairs: scores non-increasing, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub hits: Vec<(String, f64)>,
}

impl RankedResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.0.as_str())
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

fn finish(mut hits: Vec<(String, f64)>, top_k: usize) -> RankedResult {
    hits.sort_by(rank_order);
    hits.truncate(top_k);
    RankedResult { hits }
}

/// Anything that can rank stored images against a query descriptor.
pub trait Ranker {
    /// Dimension of the descriptors the ranker expects.
    fn dimension(&self) -> usize;

    fn contains(&self, image_id: &str) -> bool;

    fn rank(&self, query: &ImageDescriptor, top_k: usize, self_exclude: bool) -> Result<RankedResult>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    dimension: usize,
    /// Document ids by ordinal (insertion order).
    ids: Vec<String>,
    ordinals: HashMap<String, u32>,
    /// Per dimension, `(ordinal, value)` sorted by the document's id.
    postings: Vec<Vec<(u32, f64)>>,
    idf: Option<Vec<f64>>,
}

impl InvertedIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ids: Vec::new(),
            ordinals: HashMap::new(),
            postings: vec![Vec::new(); dimension],
            idf: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn postings(&self, dim: usize) -> &[(u32, f64)] {
        &self.postings[dim]
    }

    pub fn posting_count(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn idf_weights(&self) -> Option<&[f64]> {
        self.idf.as_deref()
    }

    fn check_dim(&self, v: &SparseVector) -> Result<()> {
        if v.dim() != self.dimension {
            return Err(Error::invalid(format!(
                "descriptor has dimension {}, index has {}",
                v.dim(),
                self.dimension
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, desc: &ImageDescriptor) -> Result<()> {
        self.check_dim(&desc.vector)?;
        if self.idf.is_some() {
            return Err(Error::invalid("documents must be added before IDF weighting"));
        }
        if self.ordinals.contains_key(&desc.image_id) {
            return Err(Error::DuplicateId(desc.image_id.clone()));
        }
        let ord = u32::try_from(self.ids.len()).map_err(|_| Error::invalid("index is full"))?;
        self.ids.push(desc.image_id.clone());
        self.ordinals.insert(desc.image_id.clone(), ord);
        let ids = &self.ids;
        for &(i, v) in desc.vector.entries() {
            let list = &mut self.postings[i as usize];
            let at = list.partition_point(|&(o, _)| ids[o as usize] < desc.image_id);
            list.insert(at, (ord, v));
        }
        Ok(())
    }

    pub fn from_descriptors<'a>(dimension: usize, descs: impl IntoIterator<Item = &'a ImageDescriptor>) -> Result<Self> {
        let mut idx = Self::new(dimension);
        for d in descs {
            idx.add(d)?;
        }
        Ok(idx)
    }

    /// Weights every dimension by `ln(N / df)` and renormalizes each document, so
    /// scores remain cosines of the weighted vectors. Dimensions present in every
    /// document get weight 0.
    pub fn apply_idf(mut self) -> Self {
        if self.idf.is_some() {
            warn!("index is already IDF-weighted");
            return self;
        }
        let n = self.doc_count().max(1) as f64;
        let weights: Vec<f64> = self
            .postings
            .iter()
            .map(|p| if p.is_empty() { 0.0 } else { (n / p.len() as f64).ln() })
            .collect();
        let mut norms = vec![0.0; self.doc_count()];
        for (list, w) in self.postings.iter_mut().zip(&weights) {
            for (o, v) in list.iter_mut() {
                *v *= w;
                norms[*o as usize] += *v * *v;
            }
        }
        for list in &mut self.postings {
            for (o, v) in list.iter_mut() {
                let nrm = norms[*o as usize].sqrt();
                if nrm > 0.0 {
                    *v /= nrm;
                }
            }
            list.retain(|e| e.1 != 0.0);
        }
        self.idf = Some(weights);
        self
    }

    fn weighted_query(&self, q: &SparseVector) -> Vec<(u32, f64)> {
        match &self.idf {
            None => q.entries().to_vec(),
            Some(w) => {
                let mut e: Vec<(u32, f64)> = q
                    .entries()
                    .iter()
                    .map(|&(i, v)| (i, v * w[i as usize]))
                    .filter(|e| e.1 != 0.0)
                    .collect();
                let nrm = e.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    e.iter_mut().for_each(|x| x.1 /= nrm);
                }
                e
            }
        }
    }

    /// Ranks every document sharing a nonzero dimension with `q` by cosine
    /// similarity. With `self_exclude`, the document whose id equals the query's id
    /// is dropped.
    pub fn query(&self, q: &ImageDescriptor, top_k: usize, self_exclude: bool) -> Result<RankedResult> {
        self.check_dim(&q.vector)?;
        let mut scores = vec![0.0; self.doc_count()];
        let mut touched = vec![false; self.doc_count()];
        for (i, qv) in self.weighted_query(&q.vector) {
            for &(o, v) in &self.postings[i as usize] {
                scores[o as usize] += qv * v;
                touched[o as usize] = true;
            }
        }
        let hits = touched
            .iter()
            .enumerate()
            .filter(|(o, t)| **t && !(self_exclude && self.ids[*o] == q.image_id))
            .map(|(o, _)| (self.ids[o].clone(), scores[o]))
            .collect();
        Ok(finish(hits, top_k))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[if self.idf.is_some() { VERSION_IDF } else { VERSION_PLAIN }])?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.doc_count() as u32).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        if let Some(weights) = &self.idf {
            for v in weights {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for (dim, list) in self.postings.iter().enumerate().filter(|(_, l)| !l.is_empty()) {
            w.write_all(&(dim as u32).to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for &(o, v) in list {
                w.write_all(&o.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        const KIND: &str = "HMPI";
        let mut head = [0u8; 5];
        read_exact(&mut r, &mut head, KIND)?;
        if &head[..4] != MAGIC {
            return Err(Error::format(KIND, "bad magic bytes"));
        }
        let version = head[4];
        if version != VERSION_PLAIN && version != VERSION_IDF {
            return Err(Error::format(KIND, format!("unsupported version {version}")));
        }
        let dimension = read_u32(&mut r, KIND)? as usize;
        let count = read_u32(&mut r, KIND)? as usize;
        let mut idx = Self::new(dimension);
        for _ in 0..count {
            let len = read_u32(&mut r, KIND)? as usize;
            if len > 1 << 20 {
                return Err(Error::format(KIND, "image id too long"));
            }
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf, KIND)?;
            let id = String::from_utf8(buf).map_err(|_| Error::format(KIND, "image id is not UTF-8"))?;
            let ord = idx.ids.len() as u32;
            if idx.ordinals.insert(id.clone(), ord).is_some() {
                return Err(Error::format(KIND, format!("duplicate id {id:?}")));
            }
            idx.ids.push(id);
        }
        if version == VERSION_IDF {
            let mut w = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                w.push(read_f64(&mut r, KIND)?);
            }
            idx.idf = Some(w);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let mut cur = &rest[..];
        let mut last_dim: Option<usize> = None;
        while !cur.is_empty() {
            let dim = read_u32(&mut cur, KIND)? as usize;
            let len = read_u32(&mut cur, KIND)? as usize;
            if dim >= dimension || last_dim.is_some_and(|d| d >= dim) {
                return Err(Error::format(KIND, format!("posting block for dimension {dim} out of order or range")));
            }
            if len > count || len * 12 > cur.len() {
                return Err(Error::format(KIND, "truncated posting block"));
            }
            let list = &mut idx.postings[dim];
            for _ in 0..len {
                let o = read_u32(&mut cur, KIND)?;
                let v = read_f64(&mut cur, KIND)?;
                if o as usize >= count || v == 0.0 {
                    return Err(Error::format(KIND, "invalid posting entry"));
                }
                list.push((o, v));
            }
            last_dim = Some(dim);
        }
        Ok(idx)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl Ranker for InvertedIndex {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn contains(&self, image_id: &str) -> bool {
        self.ordinals.contains_key(image_id)
    }

    fn rank(&self, query: &ImageDescriptor, top_k: usize, self_exclude: bool) -> Result<RankedResult> {
        self.query(query, top_k, self_exclude)
    }
}

/// Exact cosine of `q` against every stored descriptor, sorted like [`InvertedIndex::query`].
pub fn exhaustive_scan(descriptors: &[ImageDescriptor], q: &ImageDescriptor, top_k: usize) -> RankedResult {
    let qn = q.vector.norm();
    let hits = descriptors
        .iter()
        .map(|d| {
            let denom = qn * d.vector.norm();
            let s = if denom > 0.0 { q.vector.dot(&d.vector) / denom } else { 0.0 };
            (d.image_id.clone(), s)
        })
        .collect();
    finish(hits, top_k)
}

/// The exhaustive scan restricted to the inverted file's candidate rule (documents
/// sharing a nonzero dimension with the query), usable wherever an index is.
#[derive(Debug, Clone)]
pub struct ExhaustiveRanker {
    descriptors: Vec<ImageDescriptor>,
}

impl ExhaustiveRanker {
    pub fn new(descriptors: Vec<ImageDescriptor>) -> Self {
        Self { descriptors }
    }
}

impl Ranker for ExhaustiveRanker {
    fn dimension(&self) -> usize {
        self.descriptors.first().map_or(0, ImageDescriptor::dim)
    }

    fn contains(&self, image_id: &str) -> bool {
        self.descriptors.iter().any(|d| d.image_id == image_id)
    }

    fn rank(&self, query: &ImageDescriptor, top_k: usize, self_exclude: bool) -> Result<RankedResult> {
        let candidates: Vec<ImageDescriptor> = self
            .descriptors
            .iter()
            .filter(|d| d.vector.overlaps(&query.vector))
            .filter(|d| !(self_exclude && d.image_id == query.image_id))
            .cloned()
            .collect();
        Ok(exhaustive_scan(&candidates, query, top_k))
    }
}
