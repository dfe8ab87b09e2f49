//! Greedy sparse approximation against a fixed codebook.
//!
//! [`omp_encode`] solves `min ||y - Cx||² s.t. ||x||₀ ≤ L` with orthogonal matching
//! pursuit; [`vq_encode`] is the hard-assignment special case used by the
//! bag-of-features baseline (`||x||₀ = 1`, `||x||₁ = 1`, `x ≥ 0`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Columns of a [`Dictionary`] must have unit norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// OMP stops once the residual norm drops below this value.
pub const RESIDUAL_TOL: f64 = 1e-10;

const DICT_MAGIC: &[u8; 4] = b"HMPD";
const DICT_VERSION: u8 = 1;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit ℓ2 norm. The zero vector is returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out);
    out
}

pub(crate) fn l2_normalize_in_place(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// A codebook of `size` unit-norm atoms of dimension `dim`, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    size: usize,
    atoms: Vec<f64>,
}

impl Dictionary {
    /// Builds a dictionary from column-major data, rejecting columns that are not
    /// unit-norm.
    pub fn new(dim: usize, size: usize, atoms: Vec<f64>) -> Result<Self> {
        let dict = Self::unchecked(dim, size, atoms)?;
        for k in 0..size {
            let n = norm(dict.atom(k));
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "atom {k} has norm {n}, expected 1"
                )));
            }
        }
        Ok(dict)
    }

    /// Builds a dictionary from column-major data, normalizing every column.
    /// Zero columns are rejected.
    pub fn from_columns(dim: usize, size: usize, mut atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || size == 0 || atoms.len() != dim * size {
            return Err(Error::invalid(format!(
                "expected {dim}x{size} atoms, got {} values",
                atoms.len()
            )));
        }
        for (k, col) in atoms.chunks_mut(dim).enumerate() {
            if norm(col) == 0.0 {
                return Err(Error::invalid(format!("atom {k} is the zero vector")));
            }
            l2_normalize_in_place(col);
        }
        Self::new(dim, size, atoms)
    }

    fn unchecked(dim: usize, size: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 || size == 0 {
            return Err(Error::invalid(format!(
                "dictionary must be at least 1x1, got {dim}x{size}"
            )));
        }
        if atoms.len() != dim * size {
            return Err(Error::invalid(format!(
                "expected {} values for a {dim}x{size} dictionary, got {}",
                dim * size,
                atoms.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary contains non-finite values"));
        }
        Ok(Self { dim, size, atoms })
    }

    /// The identity codebook of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut atoms = vec![0.0; n * n];
        for k in 0..n {
            atoms[k * n + k] = 1.0;
        }
        Self::unchecked(n, n, atoms).expect("identity is a valid dictionary")
    }

    /// Signal dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms `K`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks(self.dim)
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.atoms
    }

    pub(crate) fn atom_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    /// `C x` for a sparse code.
    pub fn reconstruct(&self, code: &SparseCode) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(k, v) in code.entries() {
            for (o, a) in out.iter_mut().zip(self.atom(k)) {
                *o += v * a;
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DICT_MAGIC)?;
        w.write_all(&[DICT_VERSION])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.size as u32).to_le_bytes())?;
        for v in &self.atoms {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "HMPD")?;
        if &magic != DICT_MAGIC {
            return Err(Error::format("HMPD", "bad magic bytes"));
        }
        let mut version = [0u8; 1];
        read_exact(&mut r, &mut version, "HMPD")?;
        if version[0] != DICT_VERSION {
            return Err(Error::format(
                "HMPD",
                format!("unsupported version {}", version[0]),
            ));
        }
        let dim = read_u32(&mut r, "HMPD")? as usize;
        let size = read_u32(&mut r, "HMPD")? as usize;
        let count = dim
            .checked_mul(size)
            .ok_or_else(|| Error::format("HMPD", "dimension overflow"))?;
        let mut atoms = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            atoms.push(read_f64(&mut r, "HMPD")?);
        }
        Self::new(dim, size, atoms).map_err(|e| Error::format("HMPD", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], kind: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(kind, "truncated file"),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, kind: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, kind)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, kind: &'static str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, kind)?;
    Ok(f64::from_le_bytes(b))
}

/// A sparse coefficient vector of length `len`; indices strictly increasing and
/// values nonzero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCode {
    len: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseCode {
    /// Builds a code from arbitrary `(index, value)` pairs: zeros are dropped and the
    /// rest sorted by index.
    pub fn new(len: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("sparse code has duplicate indices"));
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= len {
                return Err(Error::invalid(format!(
                    "index {i} out of range for code length {len}"
                )));
            }
        }
        Ok(Self { len, entries })
    }

    pub fn empty(len: usize) -> Self {
        Self {
            len,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            len: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Per-iteration record of an OMP run.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpTrace {
    pub code: SparseCode,
    /// Atoms in selection order.
    pub selected: Vec<usize>,
    /// Residual norms: entry 0 is `||y||`, entry `t` the norm after `t` selections.
    pub residual_norms: Vec<f64>,
}

fn check_signal(dict: &Dictionary, signal: &[f64]) -> Result<()> {
    if signal.len() != dict.dim() {
        return Err(Error::invalid(format!(
            "signal has length {}, dictionary dimension is {}",
            signal.len(),
            dict.dim()
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite values"));
    }
    Ok(())
}

/// Orthogonal matching pursuit with at most `sparsity` atoms.
///
/// Atom-selection ties go to the lowest index. The loop stops early when the
/// residual norm falls below [`RESIDUAL_TOL`] or no unselected atom correlates with
/// the residual.
pub fn omp_encode(dict: &Dictionary, signal: &[f64], sparsity: usize) -> Result<SparseCode> {
    omp_encode_traced(dict, signal, sparsity).map(|t| t.code)
}

pub fn omp_encode_traced(dict: &Dictionary, signal: &[f64], sparsity: usize) -> Result<OmpTrace> {
    check_signal(dict, signal)?;
    let max_l = dict.dim().min(dict.size());
    if sparsity == 0 || sparsity > max_l {
        return Err(Error::invalid(format!(
            "sparsity {sparsity} outside 1..={max_l}"
        )));
    }

    let mut residual = signal.to_vec();
    let mut residual_norms = vec![norm(&residual)];
    let mut support: Vec<usize> = Vec::with_capacity(sparsity);
    let mut coefs: Vec<f64> = Vec::new();
    let mut in_support = vec![false; dict.size()];
    // Gram matrix of the support and the atom/signal correlations, grown by one
    // row/column per selection.
    let mut gram: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();

    while support.len() < sparsity && *residual_norms.last().unwrap() >= RESIDUAL_TOL {
        let mut best = None;
        let mut best_abs = 0.0;
        for (k, atom) in dict.atoms().enumerate() {
            if in_support[k] {
                continue;
            }
            let c = dot(atom, &residual).abs();
            if c > best_abs {
                best_abs = c;
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        in_support[k] = true;
        support.push(k);

        let s = support.len();
        let mut grown = vec![0.0; s * s];
        for i in 0..s - 1 {
            grown[i * s..i * s + s - 1].copy_from_slice(&gram[i * (s - 1)..(i + 1) * (s - 1)]);
        }
        for (i, &j) in support.iter().enumerate() {
            let g = dot(dict.atom(j), dict.atom(k));
            grown[i * s + s - 1] = g;
            grown[(s - 1) * s + i] = g;
        }
        gram = grown;
        rhs.push(dot(dict.atom(k), signal));

        coefs = solve_normal_equations(s, &gram, &rhs);

        residual.copy_from_slice(signal);
        for (&j, &x) in support.iter().zip(&coefs) {
            for (r, a) in residual.iter_mut().zip(dict.atom(j)) {
                *r -= x * a;
            }
        }
        residual_norms.push(norm(&residual));
    }

    let code = SparseCode::new(dict.size(), support.iter().copied().zip(coefs).collect())?;
    Ok(OmpTrace {
        code,
        selected: support,
        residual_norms,
    })
}

/// Solves `G x = b` for symmetric positive semi-definite `G` via Cholesky, falling
/// back to the pseudo-inverse (minimum-norm) solution when `G` is singular.
fn solve_normal_equations(n: usize, gram: &[f64], rhs: &[f64]) -> Vec<f64> {
    let g = DMatrix::from_row_slice(n, n, gram);
    let b = DVector::from_column_slice(rhs);
    if let Some(chol) = g.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return x.iter().copied().collect();
        }
    }
    let svd = g.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(n));
    x.iter().copied().collect()
}

/// Hard assignment to the nearest atom: `x = e_k` with `k = argmin ||y - c_k||²`,
/// lowest index on ties.
pub fn vq_encode(dict: &Dictionary, signal: &[f64]) -> Result<SparseCode> {
    check_signal(dict, signal)?;
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, atom) in dict.atoms().enumerate() {
        let d: f64 = atom
            .iter()
            .zip(signal)
            .map(|(a, y)| (y - a) * (y - a))
            .sum();
        if d < best_dist {
            best_dist = d;
            best = k;
        }
    }
    Ok(SparseCode {
        len: dict.size(),
        entries: vec![(best, 1.0)],
    })
}

/// OMP over many signals in parallel. Results are identical to calling
/// [`omp_encode`] per signal.
pub fn omp_encode_batch<S>(dict: &Dictionary, signals: &[S], sparsity: usize) -> Result<Vec<SparseCode>>
where
    S: AsRef<[f64]> + Sync,
{
    signals
        .par_iter()
        .map(|s| omp_encode(dict, s.as_ref(), sparsity))
        .collect()
}
