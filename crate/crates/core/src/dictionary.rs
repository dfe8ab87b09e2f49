//! Codebook training: KSVD with an optional mutual-incoherence penalty.
//!
//! The objective is `||Y - CX||²_F + λ Σ_{i≠j} |c_i·c_j|`. Each iteration sparse-codes
//! every training signal with OMP and then sweeps the atoms in ascending order,
//! refitting each atom and its coefficient row as a rank-1 approximation of the
//! residual restricted to the signals that use it.

use log::{debug, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse_coding::{dot, l2_normalize_in_place, norm, omp_encode, Dictionary, SparseCode};

/// Training signals stored column-major, one signal per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    data: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form columns of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("training set contains non-finite values"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_signals<S: AsRef<[f64]>>(signals: &[S]) -> Result<Self> {
        let dim = signals
            .first()
            .map(|s| s.as_ref().len())
            .ok_or_else(|| Error::invalid("empty training set"))?;
        let mut data = Vec::with_capacity(dim * signals.len());
        for s in signals {
            if s.as_ref().len() != dim {
                return Err(Error::invalid("training signals have mixed dimensions"));
            }
            data.extend_from_slice(s.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn signal(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn signals(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub codebook_size: usize,
    pub sparsity: usize,
    pub iterations: usize,
    /// Weight of the mutual-incoherence penalty; 0 gives plain KSVD.
    pub incoherence_weight: f64,
    pub seed: u64,
    /// Atoms tried as swap victims when an iteration improves the objective by
    /// less than 1%; 0 disables swapping. Each try costs a few extra iterations.
    pub stall_swaps: usize,
}

impl TrainConfig {
    pub fn new(codebook_size: usize, sparsity: usize) -> Self {
        Self {
            codebook_size,
            sparsity,
            iterations: 10,
            incoherence_weight: 0.1,
            seed: 0,
            stall_swaps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(Error::invalid("codebook size must be at least 2"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one training iteration is required"));
        }
        if self.sparsity == 0 {
            return Err(Error::invalid("sparsity must be at least 1"));
        }
        if !(self.incoherence_weight >= 0.0 && self.incoherence_weight.is_finite()) {
            return Err(Error::invalid("incoherence weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Pairwise atom correlations of a dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    /// `Σ_{i≠j} |c_i·c_j|` over ordered pairs.
    pub sum: f64,
    /// `max_{i≠j} |c_i·c_j|`.
    pub max: f64,
}

pub fn coherence(dict: &Dictionary) -> Coherence {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..dict.size() {
        for j in i + 1..dict.size() {
            let c = dot(dict.atom(i), dict.atom(j)).abs();
            sum += 2.0 * c;
            max = max.max(c);
        }
    }
    Coherence { sum, max }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&v) > 0.0 {
            l2_normalize_in_place(&mut v);
            return v;
        }
    }
}

/// Seeded initial codebook drawn from the training columns.
///
/// With at least `K` signals the columns are sampled without replacement; otherwise
/// with replacement plus a small seeded perturbation so repeats stay distinct. Zero
/// columns are replaced by random unit vectors.
pub fn init_dictionary(train: &TrainingSet, cfg: &TrainConfig) -> Result<Dictionary> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let k = cfg.codebook_size;
    let n = train.len();
    let dim = train.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut atoms = Vec::with_capacity(dim * k);
    if n >= k {
        for i in sample(&mut rng, n, k).into_iter() {
            atoms.extend_from_slice(train.signal(i));
        }
    } else {
        warn!("training set has {n} signals for {k} atoms; sampling with replacement");
        for _ in 0..k {
            let i = rng.random_range(0..n);
            let scale = 1e-3 * norm(train.signal(i)).max(1e-3);
            atoms.extend(
                train
                    .signal(i)
                    .iter()
                    .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)),
            );
        }
    }
    for col in atoms.chunks_mut(dim) {
        if norm(col) == 0.0 {
            col.copy_from_slice(&random_unit(&mut rng, dim));
        } else {
            l2_normalize_in_place(col);
        }
    }
    Dictionary::new(dim, k, atoms)
}

/// Seeded initialization followed by [`train_from`].
pub fn train(train: &TrainingSet, cfg: &TrainConfig) -> Result<(Dictionary, Vec<f64>)> {
    let init = init_dictionary(train, cfg)?;
    train_from(train, cfg, init)
}

fn squared_error(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Runs `cfg.iterations` KSVD iterations starting from `init`, returning the trained
/// dictionary and the objective value after each iteration.
pub fn train_from(
    train: &TrainingSet,
    cfg: &TrainConfig,
    init: Dictionary,
) -> Result<(Dictionary, Vec<f64>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if init.dim() != train.dim() || init.size() != cfg.codebook_size {
        return Err(Error::invalid(format!(
            "initial dictionary is {}x{}, expected {}x{}",
            init.dim(),
            init.size(),
            train.dim(),
            cfg.codebook_size
        )));
    }
    let n = train.len();
    let dim = train.dim();
    let k = cfg.codebook_size;
    if n < k {
        warn!("training with {n} signals for {k} atoms");
    }
    let sparsity = cfg.sparsity.min(dim).min(k);
    let lambda = cfg.incoherence_weight;

    let mut state = State {
        dict: init,
        codes: vec![Vec::new(); n],
        residuals: train.signals().map(<[f64]>::to_vec).collect(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15),
    };
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.iterations);
    let energy: f64 = train.signals().map(squared_error).sum();

    for iter in 0..cfg.iterations {
        state.code_step(train, sparsity, iter == 0)?;
        state.atom_step(train, lambda);
        let mut objective = state.objective(lambda);

        // When progress stalls, compare one more plain iteration against the same
        // iteration run after swapping out a weak atom, and keep the best outcome.
        // Every candidate starts from the current state, so the trace stays
        // monotone.
        let stalled = trace.last().is_some_and(|&prev| prev - objective <= STALL_TOL * prev);
        if cfg.stall_swaps > 0 && stalled && objective > 1e-12 * energy {
            let mut best = state.clone();
            for _ in 0..LOOKAHEAD {
                best.code_step(train, sparsity, false)?;
                best.atom_step(train, lambda);
            }
            let mut best_obj = best.objective(lambda);
            for (victim, pooled) in swap_candidates(&state.dict, &state.codes, cfg.stall_swaps)
                .into_iter()
                .flat_map(|v| [(v, true), (v, false)])
            {
                let mut trial = state.clone();
                if !trial.swap_in(victim, pooled) {
                    break;
                }
                for _ in 0..LOOKAHEAD {
                    trial.code_step(train, sparsity, false)?;
                    trial.atom_step(train, lambda);
                }
                let after = trial.objective(lambda);
                if after < best_obj {
                    debug!("ksvd iteration {iter}: swapping atom {victim} gives {after:.6e}");
                    best = trial;
                    best_obj = after;
                }
            }
            if best_obj <= objective {
                state = best;
                objective = best_obj;
            }
        }
        debug!("ksvd iteration {iter}: objective {objective:.6e}");
        trace.push(objective);
    }
    Ok((state.dict, trace))
}

/// Relative per-iteration decrease below which training counts as stalled.
const STALL_TOL: f64 = 1e-2;
/// Iterations run from each candidate state before comparing.
const LOOKAHEAD: usize = 3;

#[derive(Clone)]
struct State {
    dict: Dictionary,
    /// `codes[i]` holds the coefficients of signal `i`.
    codes: Vec<Vec<(usize, f64)>>,
    /// `residuals[i] = y_i - C codes[i]`.
    residuals: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl State {
    /// Sparse-codes every signal. After the first pass a fresh OMP code only
    /// replaces the previous one when it reconstructs at least as well, so the data
    /// term cannot increase.
    fn code_step(&mut self, train: &TrainingSet, sparsity: usize, first: bool) -> Result<()> {
        let dict = &self.dict;
        let fresh: Vec<(SparseCode, Vec<f64>)> = (0..train.len())
            .into_par_iter()
            .map(|i| {
                let y = train.signal(i);
                let code = omp_encode(dict, y, sparsity)?;
                let (_, r) = code_error(dict, y, code.entries());
                Ok((code, r))
            })
            .collect::<Result<_>>()?;
        for (i, (code, r)) in fresh.into_iter().enumerate() {
            if first || squared_error(&r) <= squared_error(&self.residuals[i]) {
                self.codes[i] = code.entries().to_vec();
                self.residuals[i] = r;
            }
        }
        Ok(())
    }

    /// Updates the atoms in ascending order; unused atoms are re-seeded.
    fn atom_step(&mut self, train: &TrainingSet, lambda: f64) {
        let k = self.dict.size();
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, code) in self.codes.iter().enumerate() {
            for &(j, _) in code {
                users[j].push(i);
            }
        }
        let mut replaced = vec![false; train.len()];
        for (atom, users) in users.iter().enumerate() {
            if users.is_empty() {
                replace_dead_atom(&mut self.dict, atom, train, &self.residuals, &mut replaced, &mut self.rng);
            } else {
                update_atom(&mut self.dict, atom, users, &mut self.codes, &mut self.residuals, lambda);
            }
        }
    }

    fn objective(&self, lambda: f64) -> f64 {
        let data: f64 = self.residuals.iter().map(|r| squared_error(r)).sum();
        if lambda > 0.0 {
            data + lambda * coherence(&self.dict).sum
        } else {
            data
        }
    }

    /// Replaces atom `victim` by the dominant direction of the worst residuals and
    /// drops its coefficients. Returns false when every residual is zero.
    fn swap_in(&mut self, victim: usize, pooled: bool) -> bool {
        let n = self.residuals.len();
        let errs: Vec<f64> = self.residuals.iter().map(|r| squared_error(r)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| errs[b].total_cmp(&errs[a]).then(a.cmp(&b)));
        if errs[order[0]] == 0.0 {
            return false;
        }
        let take = if pooled { (2 * n / self.dict.size()).max(1) } else { 1 };
        let fresh = dominant_direction(
            &self.residuals[order[0]],
            order.iter().take(take).map(|&i| self.residuals[i].as_slice()),
        );
        let old = self.dict.atom(victim).to_vec();
        for (code, r) in self.codes.iter_mut().zip(self.residuals.iter_mut()) {
            if let Some(p) = code.iter().position(|&(j, _)| j == victim) {
                let x = code.remove(p).1;
                for (rv, a) in r.iter_mut().zip(&old) {
                    *rv += x * a;
                }
            }
        }
        self.dict.atom_mut(victim).copy_from_slice(&fresh);
        true
    }
}

/// Refits atom `k` and its coefficients on the signals in `users` by alternating
/// `d = Eg/||Eg||` and `g = Eᵀd` starting from the current coefficients; each
/// half-step is optimal given the other factor.
fn update_atom(
    dict: &mut Dictionary,
    k: usize,
    users: &[usize],
    codes: &mut [Vec<(usize, f64)>],
    residuals: &mut [Vec<f64>],
    lambda: f64,
) {
    const POWER_STEPS: usize = 12;
    let dim = dict.dim();
    let pos: Vec<usize> = users
        .iter()
        .map(|&i| codes[i].iter().position(|&(j, _)| j == k).expect("atom in code"))
        .collect();
    let mut g: Vec<f64> = users.iter().zip(&pos).map(|(&i, &p)| codes[i][p].1).collect();
    let old = dict.atom(k).to_vec();
    // restricted error E = R + d_old gᵀ, one column per user
    let errors: Vec<Vec<f64>> = users
        .iter()
        .zip(&g)
        .map(|(&i, &gi)| residuals[i].iter().zip(&old).map(|(r, a)| r + gi * a).collect())
        .collect();

    let mut d = old;
    for _ in 0..POWER_STEPS {
        let mut eg = vec![0.0; dim];
        for (e, &gi) in errors.iter().zip(&g) {
            for (acc, v) in eg.iter_mut().zip(e) {
                *acc += gi * v;
            }
        }
        if norm(&eg) == 0.0 {
            break;
        }
        l2_normalize_in_place(&mut eg);
        if lambda > 0.0 {
            incoherence_step(dict, k, &mut eg, lambda, dot(&g, &g));
        }
        let moved = eg.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        d = eg;
        for (gi, e) in g.iter_mut().zip(&errors) {
            *gi = dot(e, &d);
        }
        if moved < 1e-12 {
            break;
        }
    }

    dict.atom_mut(k).copy_from_slice(&d);
    for ((&i, &p), (e, &gi)) in users.iter().zip(&pos).zip(errors.iter().zip(&g)) {
        codes[i][p].1 = gi;
        for ((r, ev), a) in residuals[i].iter_mut().zip(e).zip(&d) {
            *r = ev - gi * a;
        }
    }
}

/// Gradient step on `λ Σ_{j≠k} |d·c_j|` followed by renormalization. The step is
/// scaled by the curvature `||g||²` of the data term so heavily used atoms move less.
fn incoherence_step(dict: &Dictionary, k: usize, d: &mut [f64], lambda: f64, energy: f64) {
    let step = lambda / energy.max(1.0);
    let mut grad = vec![0.0; d.len()];
    for (j, atom) in dict.atoms().enumerate() {
        if j == k {
            continue;
        }
        let s = dot(d, atom).signum();
        for (gv, a) in grad.iter_mut().zip(atom) {
            *gv += s * a;
        }
    }
    let before = d.to_vec();
    for (dv, gv) in d.iter_mut().zip(&grad) {
        *dv -= step * gv;
    }
    if norm(d) == 0.0 {
        d.copy_from_slice(&before);
    } else {
        l2_normalize_in_place(d);
    }
}

/// Atoms to try swapping out: the weaker member of the most coherent pair, then
/// the atoms carrying the least coefficient energy `Σ x²`.
fn swap_candidates(dict: &Dictionary, codes: &[Vec<(usize, f64)>], count: usize) -> Vec<usize> {
    let k = dict.size();
    let mut energy = vec![0.0; k];
    for &(j, x) in codes.iter().flatten() {
        energy[j] += x * x;
    }
    let mut out = Vec::with_capacity(count + 1);
    let mut best = (-1.0, 0);
    for i in 0..k {
        for j in i + 1..k {
            let c = dot(dict.atom(i), dict.atom(j)).abs();
            if c > best.0 {
                best = (c, if energy[j] < energy[i] { j } else { i });
            }
        }
    }
    if best.0 >= 0.0 {
        out.push(best.1);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(a.cmp(&b)));
    out.extend(order.into_iter().filter(|&j| j != best.1));
    out.truncate(count);
    out
}

/// Leading eigenvector of `Σ r rᵀ` over `rows`, by power iteration from `start`.
fn dominant_direction<'a>(start: &[f64], rows: impl Iterator<Item = &'a [f64]> + Clone) -> Vec<f64> {
    let mut d = start.to_vec();
    l2_normalize_in_place(&mut d);
    for _ in 0..20 {
        let mut next = vec![0.0; d.len()];
        for r in rows.clone() {
            let c = dot(r, &d);
            for (acc, v) in next.iter_mut().zip(r) {
                *acc += c * v;
            }
        }
        if norm(&next) == 0.0 {
            break;
        }
        l2_normalize_in_place(&mut next);
        d = next;
    }
    d
}

fn code_error(dict: &Dictionary, y: &[f64], code: &[(usize, f64)]) -> (f64, Vec<f64>) {
    let mut r = y.to_vec();
    for &(j, x) in code {
        for (rv, a) in r.iter_mut().zip(dict.atom(j)) {
            *rv -= x * a;
        }
    }
    (squared_error(&r), r)
}

/// An atom no signal uses is replaced by the worst-reconstructed training signal
/// not already used for a replacement this sweep. Its coefficient row is zero, so
/// the reconstruction `CX` is unchanged.
fn replace_dead_atom(
    dict: &mut Dictionary,
    k: usize,
    train: &TrainingSet,
    residuals: &[Vec<f64>],
    replaced: &mut [bool],
    rng: &mut ChaCha8Rng,
) {
    let worst = residuals
        .iter()
        .enumerate()
        .filter(|(i, _)| !replaced[*i] && norm(train.signal(*i)) > 0.0)
        .map(|(i, r)| (i, squared_error(r)))
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, be)) if be >= e => best,
            _ => Some((i, e)),
        });
    let fresh = match worst {
        Some((i, _)) => {
            replaced[i] = true;
            let mut v = train.signal(i).to_vec();
            l2_normalize_in_place(&mut v);
            v
        }
        None => random_unit(rng, dict.dim()),
    };
    dict.atom_mut(k).copy_from_slice(&fresh);
}
