//! Average precision and mAP over a ground-truth file.
//!
//! Ground truth is plain text, one query per line:
//! `<query-id>\t<relevant-id>[,<relevant-id>...]`. The query itself is never counted
//! as relevant.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::descriptor::ImageDescriptor;
use crate::error::{Error, Result};
use crate::index::Ranker;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    queries: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a query; the query id is removed from its own relevant set.
    pub fn insert<I, S>(&mut self, query: impl Into<String>, relevant: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let query = query.into();
        let set: BTreeSet<String> = relevant.into_iter().map(Into::into).filter(|r| *r != query).collect();
        if set.is_empty() {
            return Err(Error::invalid(format!("query {query:?} has no relevant images")));
        }
        if self.queries.insert(query.clone(), set).is_some() {
            return Err(Error::DuplicateId(query));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut gt = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (q, rel) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("ground truth line {}: expected <query>\\t<ids>", n + 1)))?;
            let ids: Vec<&str> = rel.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            gt.insert(q.trim(), ids)
                .map_err(|e| Error::Config(format!("ground truth line {}: {e}", n + 1)))?;
        }
        Ok(gt)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read ground truth {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.queries
            .iter()
            .map(|(q, r)| format!("{q}\t{}\n", r.iter().cloned().collect::<Vec<_>>().join(",")))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Queries in ascending id order with their relevant sets.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.queries.iter().map(|(q, r)| (q.as_str(), r))
    }

    /// Ids referenced by the ground truth that are not in `known`.
    pub fn unknown_ids<'a>(&'a self, known: &HashSet<&str>) -> Vec<&'a str> {
        let mut missing: BTreeSet<&str> = BTreeSet::new();
        for (q, rel) in &self.queries {
            for id in std::iter::once(q).chain(rel) {
                if !known.contains(id.as_str()) {
                    missing.insert(id);
                }
            }
        }
        missing.into_iter().collect()
    }

    /// Groups where the first id (in the given order) is the query and the others
    /// are its relevant images, the Holidays convention.
    pub fn from_groups<S: AsRef<str>>(groups: &[Vec<S>]) -> Result<Self> {
        let mut gt = Self::new();
        for g in groups {
            if let Some((q, rest)) = g.split_first() {
                gt.insert(q.as_ref(), rest.iter().map(|s| s.as_ref().to_string()))?;
            }
        }
        Ok(gt)
    }
}

/// `AP = (1/|R|) Σ_r [ranked[r] ∈ R] · precision@r`. Relevant items that never
/// appear in `ranked` contribute zero.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::invalid("average precision needs a nonempty relevant set"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, id) in ranked.iter().enumerate() {
        if relevant.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query: String,
    pub average_precision: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Ordered by query id.
    pub queries: Vec<QueryOutcome>,
    pub mean_average_precision: f64,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config {}", self.fingerprint)?;
        for q in &self.queries {
            writeln!(w, "{}\t{:.6}\t{:.6}", q.query, q.average_precision, q.seconds)?;
        }
        writeln!(w, "mAP {:.6}", self.mean_average_precision)?;
        Ok(())
    }

    pub fn mean_query_seconds(&self) -> f64 {
        if self.queries.is_empty() {
            0.0
        } else {
            self.queries.iter().map(|q| q.seconds).sum::<f64>() / self.queries.len() as f64
        }
    }
}

/// Runs every ground-truth query against `ranker` (full ranking) and averages AP.
pub fn evaluate<R: Ranker + Sync>(
    ranker: &R,
    descriptors: &HashMap<String, ImageDescriptor>,
    gt: &GroundTruth,
    self_exclude: bool,
    fingerprint: impl Into<String>,
) -> Result<EvalReport> {
    let missing: Vec<String> = gt
        .iter()
        .filter(|(q, _)| !descriptors.contains_key(*q))
        .map(|(q, _)| q.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingQueries(missing));
    }
    let queries: Vec<(&str, &BTreeSet<String>)> = gt.iter().collect();
    let outcomes = queries
        .par_iter()
        .map(|&(q, relevant)| {
            let start = Instant::now();
            let ranked = ranker.rank(&descriptors[q], usize::MAX, self_exclude)?;
            let seconds = start.elapsed().as_secs_f64();
            let ids: Vec<&str> = ranked.ids().collect();
            Ok(QueryOutcome {
                query: q.to_string(),
                average_precision: average_precision(&ids, relevant)?,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().map(|o| o.average_precision).sum::<f64>() / outcomes.len() as f64
    };
    Ok(EvalReport {
        queries: outcomes,
        mean_average_precision: mean,
        fingerprint: fingerprint.into(),
    })
}
