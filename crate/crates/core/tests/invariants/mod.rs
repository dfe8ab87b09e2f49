//! Property checks shared by the `properties` and `acceptance` test targets.
//!
//! Every check runs a deterministic proptest runner and returns the first failure
//! as text, so callers can either assert on it or report it.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use hmpir::cli;
use hmpir::config::{architecture_to_toml, RunConfig, TrainingSection};
use hmpir::descriptor::SparseVector;
use hmpir::dictionary::{coherence, train, TrainConfig, TrainingSet};
use hmpir::encoder::{encode_image, signed_max_pool, ArchitectureConfig, LayerConfig, UnitPooling};
use hmpir::image::decode_image;
use hmpir::index::ExhaustiveRanker;
use hmpir::patches::{assign_cells, extract_patches};
use hmpir::sparse_coding::omp_encode_traced;
use hmpir::synth::{texture_corpus, CorpusSpec};
use hmpir::{
    average_precision, evaluate, exhaustive_scan, omp_encode, vq_encode, Dictionary, GroundTruth, ImageDescriptor,
    IntensityImage, InvertedIndex, SparseCode,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = fn() -> Result<(), String>;

pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_dictionary(rng: &mut ChaCha8Rng, dim: usize, size: usize) -> Dictionary {
    loop {
        let v = gaussian(rng, dim * size);
        if let Ok(d) = Dictionary::from_columns(dim, size, v) {
            return d;
        }
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> IntensityImage {
    let px = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
    IntensityImage::new(w, h, px).expect("valid pixels")
}

/// Nonnegative unit-norm sparse descriptor, the shape every HMP descriptor has.
pub fn random_descriptor(rng: &mut ChaCha8Rng, id: String, dim: usize, max_nnz: usize) -> ImageDescriptor {
    let nnz = rng.random_range(1..=max_nnz.min(dim));
    let mut dims: Vec<usize> = (0..dim).collect();
    dims.shuffle(rng);
    let mut dense = vec![0.0; dim];
    for &d in &dims[..nnz] {
        dense[d] = rng.random_range(0.01..1.0);
    }
    let n = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
    dense.iter_mut().for_each(|v| *v /= n);
    ImageDescriptor::new(id, SparseVector::from_dense(&dense))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- sparse coding ----

fn omp_instance() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..=6, 1usize..=8, any::<u64>())
}

pub fn omp_residual_monotone() -> Result<(), String> {
    run(256, omp_instance(), |(d, k, seed)| {
        let mut r = rng(seed);
        let dict = random_dictionary(&mut r, d, k);
        let y = gaussian(&mut r, d);
        for l in 1..=d.min(k) {
            let t = omp_encode_traced(&dict, &y, l).unwrap();
            for w in t.residual_norms.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "residual grew: {:?}", t.residual_norms);
            }
        }
        Ok(())
    })
}

pub fn omp_orthogonal_residual() -> Result<(), String> {
    run(256, omp_instance(), |(d, k, seed)| {
        let mut r = rng(seed);
        let dict = random_dictionary(&mut r, d, k);
        let y = gaussian(&mut r, d);
        for l in 1..=d.min(k) {
            let code = omp_encode(&dict, &y, l).unwrap();
            let rec = dict.reconstruct(&code);
            let res: Vec<f64> = y.iter().zip(&rec).map(|(a, b)| a - b).collect();
            for &(j, _) in code.entries() {
                let c = dot(dict.atom(j), &res).abs();
                prop_assert!(c <= 1e-8, "atom {j} correlates {c:e} with the residual");
            }
        }
        Ok(())
    })
}

/// Exhaustive best single-atom least-squares fit, lowest index on ties.
pub fn best_single_atom(dict: &Dictionary, y: &[f64]) -> (usize, f64) {
    let mut best = (0, 0.0, f64::INFINITY);
    for (k, c) in dict.atoms().enumerate() {
        let x = dot(c, y) / dot(c, c);
        let err: f64 = y.iter().zip(c).map(|(a, b)| (a - x * b).powi(2)).sum();
        if err < best.2 {
            best = (k, x, err);
        }
    }
    (best.0, best.1)
}

pub fn omp_single_atom_optimal() -> Result<(), String> {
    run(256, omp_instance(), |(d, k, seed)| {
        let mut r = rng(seed);
        let dict = random_dictionary(&mut r, d, k);
        let y = gaussian(&mut r, d);
        let code = omp_encode(&dict, &y, 1).unwrap();
        let (j, x) = best_single_atom(&dict, &y);
        prop_assert_eq!(code.entries().len(), 1);
        prop_assert_eq!(code.entries()[0].0, j);
        prop_assert!((code.entries()[0].1 - x).abs() <= 1e-9);
        Ok(())
    })
}

pub fn vq_constraints() -> Result<(), String> {
    run(256, omp_instance(), |(d, k, seed)| {
        let mut r = rng(seed);
        let dict = random_dictionary(&mut r, d, k);
        let y = gaussian(&mut r, d);
        let code = vq_encode(&dict, &y).unwrap();
        prop_assert_eq!(code.nnz(), 1);
        let l1: f64 = code.entries().iter().map(|e| e.1.abs()).sum();
        prop_assert_eq!(l1, 1.0);
        prop_assert!(code.entries().iter().all(|e| e.1 >= 0.0));
        let dist = |j: usize| -> f64 { y.iter().zip(dict.atom(j)).map(|(a, b)| (a - b).powi(2)).sum() };
        let j = code.entries()[0].0;
        prop_assert!((0..k).all(|m| dist(j) <= dist(m)));
        Ok(())
    })
}

pub fn omp_scale_equivariant() -> Result<(), String> {
    run(256, (omp_instance(), 0.05f64..20.0), |((d, k, seed), alpha)| {
        let mut r = rng(seed);
        let dict = random_dictionary(&mut r, d, k);
        let y = gaussian(&mut r, d);
        let ys: Vec<f64> = y.iter().map(|v| alpha * v).collect();
        for l in 1..=d.min(k) {
            let a = omp_encode(&dict, &y, l).unwrap();
            let b = omp_encode(&dict, &ys, l).unwrap();
            let sa: BTreeSet<usize> = a.entries().iter().map(|e| e.0).collect();
            let sb: BTreeSet<usize> = b.entries().iter().map(|e| e.0).collect();
            prop_assert_eq!(sa, sb);
            for &(j, x) in a.entries() {
                let want = alpha * x;
                let tol = 1e-8 * want.abs().max(1.0);
                prop_assert!((b.get(j) - want).abs() <= tol, "coefficient {j}: {} vs {want}", b.get(j));
            }
        }
        Ok(())
    })
}

// ---- dictionary training ----

fn training_problem() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (2usize..=6, 2usize..=8, 1usize..=3, 10usize..=60, any::<u64>())
}

fn random_training(seed: u64, dim: usize, n: usize) -> TrainingSet {
    let mut r = rng(seed);
    TrainingSet::new(dim, gaussian(&mut r, dim * n)).unwrap()
}

pub fn training_keeps_unit_atoms() -> Result<(), String> {
    run(24, (training_problem(), 0.0f64..0.5), |((d, k, l, n, seed), lambda)| {
        let set = random_training(seed, d, n);
        for t in 1..=3 {
            let cfg = TrainConfig {
                codebook_size: k,
                sparsity: l.min(d).min(k),
                iterations: t,
                incoherence_weight: lambda,
                seed,
                stall_swaps: 2,
            };
            let (dict, _) = train(&set, &cfg).unwrap();
            for atom in dict.atoms() {
                let nrm = dot(atom, atom).sqrt();
                prop_assert!((nrm - 1.0).abs() <= 1e-9, "atom norm {nrm} after {t} iterations");
            }
        }
        Ok(())
    })
}

pub fn training_descends_without_penalty() -> Result<(), String> {
    run(24, (training_problem(), 0usize..=3), |((d, k, l, n, seed), swaps)| {
        let set = random_training(seed, d, n);
        let cfg = TrainConfig {
            codebook_size: k,
            sparsity: l.min(d).min(k),
            iterations: 8,
            incoherence_weight: 0.0,
            seed,
            stall_swaps: swaps,
        };
        let (_, trace) = train(&set, &cfg).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6, "objective rose: {trace:?}");
        }
        Ok(())
    })
}

pub fn training_is_deterministic() -> Result<(), String> {
    run(16, training_problem(), |(d, k, l, n, seed)| {
        let set = random_training(seed, d, n);
        let mut cfg = TrainConfig::new(k, l.min(d).min(k));
        cfg.iterations = 4;
        cfg.seed = seed;
        cfg.stall_swaps = 2;
        let a = train(&set, &cfg).unwrap();
        let b = train(&set, &cfg).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
        Ok(())
    })
}

/// Mean final coherence sum with and without the incoherence penalty over seeds.
pub fn coherence_with_and_without_penalty(seeds: std::ops::Range<u64>, lambda: f64) -> (f64, f64) {
    let (mut with, mut without) = (0.0, 0.0);
    let count = (seeds.end - seeds.start) as f64;
    for seed in seeds {
        let set = random_training(seed, 8, 200);
        let mut cfg = TrainConfig::new(16, 2);
        cfg.iterations = 10;
        cfg.seed = seed;
        cfg.incoherence_weight = lambda;
        with += coherence(&train(&set, &cfg).unwrap().0).sum / count;
        cfg.incoherence_weight = 0.0;
        without += coherence(&train(&set, &cfg).unwrap().0).sum / count;
    }
    (with, without)
}

pub fn penalty_lowers_coherence() -> Result<(), String> {
    for lambda in [0.1, 1.0] {
        let (with, without) = coherence_with_and_without_penalty(0..8, lambda);
        if with > without {
            return Err(format!("λ={lambda}: mean coherence sum {with} exceeds {without} without the penalty"));
        }
    }
    Ok(())
}

// ---- images and patches ----

pub fn cells_partition_patches() -> Result<(), String> {
    let geometry = (8usize..40, 8usize..40, 1usize..=5, 1usize..=3, 1usize..=4, any::<u64>());
    run(128, geometry, |(w, h, p, stride, cells, seed)| {
        let mut r = rng(seed);
        let img = random_image(&mut r, w, h);
        let grid = extract_patches(&img, p.min(w).min(h), stride).unwrap();
        let extent = w.max(h);
        let region = extent.div_ceil(cells) * cells;
        let groups = assign_cells(&grid.centers(), grid.origin, region, cells).unwrap();
        let mut seen = vec![0u32; grid.len()];
        for g in &groups {
            for &i in g {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "patch counts per cell membership: {seen:?}");
        Ok(())
    })
}

pub fn patches_have_zero_mean() -> Result<(), String> {
    run(128, (5usize..30, 5usize..30, 1usize..=5, 1usize..=3, any::<u64>()), |(w, h, p, s, seed)| {
        let mut r = rng(seed);
        let img = random_image(&mut r, w, h);
        let grid = extract_patches(&img, p, s).unwrap();
        for patch in &grid.patches {
            let mean = patch.iter().sum::<f64>() / patch.len() as f64;
            prop_assert!(mean.abs() <= 1e-9);
        }
        Ok(())
    })
}

fn png_bytes(img: &IntensityImage) -> Vec<u8> {
    let buf = image::GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Luma([(img.get(y as usize, x as usize) * 255.0).round() as u8])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png).expect("png encodes");
    out.into_inner()
}

pub fn decoding_is_deterministic() -> Result<(), String> {
    run(48, (6usize..40, 6usize..40, any::<bool>(), any::<u64>()), |(w, h, png, seed)| {
        let mut r = rng(seed);
        let img = random_image(&mut r, w, h);
        let (bytes, name) = if png { (png_bytes(&img), "x.png") } else { (img.to_pgm(), "x.pgm") };
        let a = decode_image(&bytes, Path::new(name)).unwrap();
        let b = decode_image(&bytes.clone(), Path::new(name)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(extract_patches(&a, 5, 2).unwrap(), extract_patches(&b, 5, 2).unwrap());
        Ok(())
    })
}

// ---- encoder ----

fn pooling_codes() -> impl Strategy<Value = (usize, Vec<Vec<(usize, f64)>>)> {
    (1usize..8).prop_flat_map(|k| {
        let code = prop::collection::vec((0..k, -5.0f64..5.0), 0..4);
        (Just(k), prop::collection::vec(code, 0..6))
    })
}

fn to_codes(k: usize, raw: &[Vec<(usize, f64)>]) -> Vec<SparseCode> {
    raw.iter()
        .map(|entries| {
            let mut dense = vec![0.0; k];
            for &(i, v) in entries {
                dense[i] = v;
            }
            SparseCode::from_dense(&dense)
        })
        .collect()
}

pub fn pooling_is_monotone() -> Result<(), String> {
    run(256, (pooling_codes(), prop::collection::vec((0usize..8, -5.0f64..5.0), 0..4)), |((k, raw), extra)| {
        let codes = to_codes(k, &raw);
        let mut more = codes.clone();
        let extra: Vec<(usize, f64)> = extra.into_iter().filter(|e| e.0 < k).collect();
        more.extend(to_codes(k, &[extra]));
        let a = signed_max_pool(&codes, k).unwrap();
        let b = signed_max_pool(&more, k).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| y >= x));
        Ok(())
    })
}

pub fn pooling_ignores_order() -> Result<(), String> {
    run(256, (pooling_codes(), any::<u64>()), |((k, raw), seed)| {
        let codes = to_codes(k, &raw);
        let mut shuffled = codes.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(signed_max_pool(&codes, k).unwrap(), signed_max_pool(&shuffled, k).unwrap());
        Ok(())
    })
}

/// Small random architecture with 1 to 3 layers and matching random dictionaries.
pub fn small_architecture() -> impl Strategy<Value = (ArchitectureConfig, u64)> {
    let pyramid = prop::sample::subsequence(vec![1usize, 2, 3], 1..=3);
    (1usize..=3, 3usize..=4, prop::collection::vec(2usize..=5, 3), any::<bool>(), pyramid, any::<u64>()).prop_map(
        |(depth, patch, ks, overlap, pyramid, seed)| {
            let units = [(8, 2), (16, 2)];
            let mut layers = Vec::new();
            for l in 0..depth {
                let last = l + 1 == depth;
                let pooling = (!last).then(|| {
                    let (size, grid) = units[l];
                    UnitPooling {
                        unit_size: size,
                        unit_stride: overlap.then_some(size / 2),
                        cell_grid: grid,
                    }
                });
                layers.push(LayerConfig {
                    codebook_size: ks[l],
                    sparsity: if last { 2 } else { 1 },
                    pooling,
                });
            }
            let arch = ArchitectureConfig {
                patch_size: patch,
                patch_stride: 1,
                pyramid,
                layers,
            };
            (arch, seed)
        },
    )
}

pub fn dictionaries_for(arch: &ArchitectureConfig, r: &mut ChaCha8Rng) -> Vec<Dictionary> {
    (0..arch.depth())
        .map(|l| random_dictionary(r, arch.input_dim(l), arch.layers[l].codebook_size))
        .collect()
}

pub fn descriptor_length_law() -> Result<(), String> {
    run(48, (small_architecture(), 0usize..10), |((arch, seed), pad)| {
        arch.validate().unwrap();
        let mut r = rng(seed);
        let dicts = dictionaries_for(&arch, &mut r);
        let side = arch.min_image_side() + pad;
        let img = random_image(&mut r, side, side + pad / 2);
        let v = encode_image(&img, &arch, &dicts).unwrap();
        let expected = 2 * arch.final_codebook_size() * arch.pyramid.iter().map(|g| g * g).sum::<usize>();
        prop_assert_eq!(v.dim(), expected);
        Ok(())
    })
}

pub fn descriptors_are_unit_norm() -> Result<(), String> {
    run(48, (small_architecture(), 0usize..10), |((arch, seed), pad)| {
        let mut r = rng(seed);
        let dicts = dictionaries_for(&arch, &mut r);
        let side = arch.min_image_side() + pad;
        let img = random_image(&mut r, side, side);
        let v = encode_image(&img, &arch, &dicts).unwrap();
        let n = v.norm();
        prop_assert!(v.nnz() == 0 || (n - 1.0).abs() <= 1e-9, "norm {n}");
        Ok(())
    })
}

pub fn encoding_is_deterministic() -> Result<(), String> {
    run(32, small_architecture(), |(arch, seed)| {
        let mut r = rng(seed);
        let dicts = dictionaries_for(&arch, &mut r);
        let side = arch.min_image_side() + 3;
        let img = random_image(&mut r, side, side);
        let copy = IntensityImage::new(img.width(), img.height(), img.pixels().to_vec()).unwrap();
        let a = encode_image(&img, &arch, &dicts).unwrap();
        let b = encode_image(&copy, &arch.clone(), &dicts.clone()).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

// ---- index ----

fn corpus(seed: u64, docs: usize, dim: usize, max_nnz: usize) -> Vec<ImageDescriptor> {
    let mut r = rng(seed);
    (0..docs).map(|i| random_descriptor(&mut r, format!("img{i:04}"), dim, max_nnz)).collect()
}

/// Compares an index ranking with the exhaustive scan: identical ids and scores
/// within `tol` over the candidates, and every document beyond them scores zero.
pub fn matches_exhaustive(
    index: &InvertedIndex,
    docs: &[ImageDescriptor],
    q: &ImageDescriptor,
    top_k: usize,
    tol: f64,
) -> Result<(), String> {
    let got = index.query(q, top_k, false).map_err(|e| e.to_string())?;
    let want = exhaustive_scan(docs, q, top_k);
    if got.len() > want.len() {
        return Err(format!("index returned {} hits, scan {}", got.len(), want.len()));
    }
    for (g, w) in got.hits.iter().zip(&want.hits) {
        if g.0 != w.0 || (g.1 - w.1).abs() > tol {
            return Err(format!("index {g:?} vs scan {w:?}"));
        }
    }
    if let Some(extra) = want.hits[got.len()..].iter().find(|h| h.1 != 0.0) {
        return Err(format!("scan ranks {extra:?} which the index never returned"));
    }
    Ok(())
}

pub fn index_matches_oracle() -> Result<(), String> {
    run(24, (1usize..=500, 4usize..=200, 1usize..=16, 1usize..=600, any::<u64>()), |(n, dim, nnz, k, seed)| {
        let docs = corpus(seed, n, dim, nnz);
        let index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        let mut r = rng(seed ^ 1);
        for q in 0..5 {
            let query = random_descriptor(&mut r, format!("q{q}"), dim, nnz);
            matches_exhaustive(&index, &docs, &query, k, 1e-9).map_err(TestCaseError::fail)?;
        }
        Ok(())
    })
}

pub fn indexed_image_finds_itself() -> Result<(), String> {
    run(48, (2usize..=200, 8usize..=128, 1usize..=12, any::<u64>()), |(n, dim, nnz, seed)| {
        let docs = corpus(seed, n, dim, nnz);
        let index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        for d in docs.iter().take(10) {
            let hits = index.query(d, usize::MAX, false).unwrap().hits;
            let own = hits.iter().find(|h| h.0 == d.image_id).expect("self is a candidate").1;
            prop_assert!(hits.iter().all(|h| h.1 <= own + 1e-12));
            let tied = hits.iter().any(|h| h.0 < d.image_id && h.1 >= own);
            prop_assert!(tied || hits[0].0 == d.image_id, "{} ranked behind {:?}", d.image_id, hits[0]);
        }
        Ok(())
    })
}

pub fn scores_are_bounded() -> Result<(), String> {
    run(48, (2usize..=100, 4usize..=64, any::<u64>()), |(n, dim, seed)| {
        let mut r = rng(seed);
        // signed unit vectors, so negative cosines occur
        let docs: Vec<ImageDescriptor> = (0..n)
            .map(|i| {
                let mut v = gaussian(&mut r, dim);
                v.iter_mut().for_each(|x| {
                    if r.random_bool(0.6) {
                        *x = 0.0
                    }
                });
                let nrm = dot(&v, &v).sqrt().max(1e-300);
                v.iter_mut().for_each(|x| *x /= nrm);
                ImageDescriptor::new(format!("d{i}"), SparseVector::from_dense(&v))
            })
            .collect();
        let index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        for q in &docs {
            for (_, s) in index.query(q, usize::MAX, false).unwrap().hits {
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s), "score {s}");
            }
        }
        Ok(())
    })
}

pub fn index_survives_round_trip() -> Result<(), String> {
    run(24, (1usize..=200, 4usize..=100, 1usize..=10, any::<bool>(), any::<u64>()), |(n, dim, nnz, idf, seed)| {
        let docs = corpus(seed, n, dim, nnz);
        let mut index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        if idf {
            index = index.apply_idf();
        }
        let mut bytes = Vec::new();
        index.write_to(&mut bytes).unwrap();
        let loaded = InvertedIndex::read_from(bytes.as_slice()).unwrap();
        for q in docs.iter().take(10) {
            let a = index.query(q, 20, false).unwrap();
            let b = loaded.query(q, 20, false).unwrap();
            prop_assert_eq!(a.hits.len(), b.hits.len());
            for (x, y) in a.hits.iter().zip(&b.hits) {
                prop_assert!(x.0 == y.0 && x.1.to_bits() == y.1.to_bits());
            }
        }
        Ok(())
    })
}

// ---- evaluation ----

pub fn ap_rewards_promotion() -> Result<(), String> {
    run(256, (2usize..30, any::<u64>()), |(n, seed)| {
        let mut r = rng(seed);
        let ranked: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let relevant: BTreeSet<String> = ranked.iter().filter(|_| r.random_bool(0.4)).cloned().collect();
        let mut relevant = relevant;
        relevant.insert(format!("missing{}", r.random_range(0..2)));
        let base = average_precision(&ranked, &relevant).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        for p in 1..n {
            if relevant.contains(&ranked[p]) && !relevant.contains(&ranked[p - 1]) {
                let mut up = ranked.clone();
                up.swap(p, p - 1);
                let ap = average_precision(&up, &relevant).unwrap();
                prop_assert!(ap >= base, "promoting rank {p} lowered AP {base} -> {ap}");
            }
        }
        Ok(())
    })
}

fn grouped_corpus(seed: u64, groups: usize, per: usize, dim: usize) -> (Vec<ImageDescriptor>, GroundTruth) {
    let docs = corpus(seed, groups * per, dim, 6);
    let ids: Vec<Vec<String>> = (0..groups)
        .map(|g| (0..per).map(|m| docs[g * per + m].image_id.clone()).collect())
        .collect();
    (docs, GroundTruth::from_groups(&ids).unwrap())
}

pub fn map_is_mean_of_aps() -> Result<(), String> {
    run(32, (1usize..8, 2usize..5, 4usize..40, any::<u64>()), |(g, per, dim, seed)| {
        let (docs, gt) = grouped_corpus(seed, g, per, dim);
        let index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        let map: HashMap<String, ImageDescriptor> = docs.iter().map(|d| (d.image_id.clone(), d.clone())).collect();
        let report = evaluate(&index, &map, &gt, true, "x").unwrap();
        let mean = report.queries.iter().map(|q| q.average_precision).sum::<f64>() / report.queries.len() as f64;
        prop_assert_eq!(report.mean_average_precision, mean);
        prop_assert!(report.queries.iter().all(|q| (0.0..=1.0).contains(&q.average_precision)));
        Ok(())
    })
}

pub fn oracle_gives_same_map() -> Result<(), String> {
    run(32, (1usize..8, 2usize..5, 4usize..40, any::<u64>()), |(g, per, dim, seed)| {
        let (docs, gt) = grouped_corpus(seed, g, per, dim);
        let index = InvertedIndex::from_descriptors(dim, &docs).unwrap();
        let map: HashMap<String, ImageDescriptor> = docs.iter().map(|d| (d.image_id.clone(), d.clone())).collect();
        let a = evaluate(&index, &map, &gt, true, "x").unwrap();
        let b = evaluate(&ExhaustiveRanker::new(docs.clone()), &map, &gt, true, "x").unwrap();
        prop_assert_eq!(a.mean_average_precision, b.mean_average_precision);
        Ok(())
    })
}

// ---- pipeline ----

/// Writes `groups × per_group` synthetic images plus manifest and ground truth
/// into `dir`, and a run configuration for a one-layer architecture with `k` atoms.
pub fn pipeline_fixture(dir: &Path, seed: u64, groups: usize, k: usize) -> RunConfig {
    let spec = CorpusSpec {
        seed,
        groups,
        ..CorpusSpec::default()
    };
    fixture_from(dir, &spec, k)
}

pub fn fixture_from(dir: &Path, spec: &CorpusSpec, k: usize) -> RunConfig {
    let seed = spec.seed;
    texture_corpus(spec).write_to_dir(dir).expect("corpus written");
    let arch = ArchitectureConfig {
        patch_size: 5,
        patch_stride: 1,
        pyramid: vec![1],
        layers: vec![LayerConfig {
            codebook_size: k,
            sparsity: 2,
            pooling: None,
        }],
    };
    std::fs::write(dir.join("arch.toml"), architecture_to_toml(&arch)).expect("architecture written");
    RunConfig {
        manifest: dir.join("manifest.tsv"),
        architecture: dir.join("arch.toml"),
        dictionary_dir: dir.join("dicts"),
        descriptor_dir: dir.join("descriptors"),
        index: dir.join("index.hmpi"),
        ground_truth: Some(dir.join("truth.txt")),
        report: None,
        seed,
        threads: 0,
        max_side: None,
        baseline: false,
        idf: false,
        training: TrainingSection {
            samples: 1500,
            iterations: 3,
            incoherence_weight: 0.1,
            stall_swaps: 0,
        },
    }
}

fn full_run(cfg: &RunConfig) -> hmpir::Result<Vec<(String, f64)>> {
    cli::train_dictionaries(cfg)?;
    cli::encode_all(cfg)?;
    cli::build_index(cfg)?;
    let (_, report) = cli::evaluate_run(cfg, true)?;
    let mut out: Vec<(String, f64)> = report.queries.into_iter().map(|q| (q.query, q.average_precision)).collect();
    out.push(("mAP".into(), report.mean_average_precision));
    Ok(out)
}

pub fn pipeline_is_deterministic() -> Result<(), String> {
    run(3, (any::<u64>(), any::<bool>()), |(seed, baseline)| {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = pipeline_fixture(tmp.path(), seed, 3, 16);
        cfg.baseline = baseline;
        let first = full_run(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let dict_bytes = std::fs::read(dir_files(&cfg.dictionary_dir)[0].clone()).unwrap();
        let again = full_run(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(first, again);
        prop_assert_eq!(dict_bytes, std::fs::read(dir_files(&cfg.dictionary_dir)[0].clone()).unwrap());
        Ok(())
    })
}

pub fn dir_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out: Vec<_> = walk(dir);
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    entries
        .flatten()
        .flat_map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk(&p)
            } else {
                vec![p]
            }
        })
        .collect()
}

/// Each stage rejects missing inputs before writing anything.
pub fn stages_fail_fast() -> Result<(), String> {
    run(4, any::<u64>(), |seed| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let cfg = pipeline_fixture(dir, seed, 2, 8);
        let before = dir_files(dir);

        let mut empty = cfg.clone();
        empty.manifest = dir.join("empty.tsv");
        std::fs::write(&empty.manifest, "# nothing\n").unwrap();
        prop_assert!(cli::train_dictionaries(&empty).is_err());
        prop_assert!(cli::encode_all(&cfg).is_err(), "encode without dictionaries");
        prop_assert!(cli::build_index(&cfg).is_err(), "index without descriptors");
        prop_assert!(cli::evaluate_run(&cfg, true).is_err(), "evaluate without index");
        prop_assert!(cli::query(&cfg, &cfg.manifest, 5, true).is_err(), "query without index");
        let mut after = dir_files(dir);
        after.retain(|p| p != &empty.manifest);
        prop_assert_eq!(before, after);

        cli::train_dictionaries(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut no_truth = cfg.clone();
        no_truth.ground_truth = Some(dir.join("missing.txt"));
        cli::encode_all(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        cli::build_index(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(cli::evaluate_run(&no_truth, true).is_err(), "evaluate without ground truth");
        Ok(())
    })
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("omp residual never grows", omp_residual_monotone as Check),
        ("omp residual orthogonal to support", omp_orthogonal_residual),
        ("omp L=1 matches exhaustive fit", omp_single_atom_optimal),
        ("vq output is one-hot and nearest", vq_constraints),
        ("omp is scale equivariant", omp_scale_equivariant),
        ("training keeps unit-norm atoms", training_keeps_unit_atoms),
        ("training objective non-increasing at λ=0", training_descends_without_penalty),
        ("penalty lowers mean coherence", penalty_lowers_coherence),
        ("training is deterministic", training_is_deterministic),
        ("cells partition patches", cells_partition_patches),
        ("decoding is deterministic", decoding_is_deterministic),
        ("patches have zero mean", patches_have_zero_mean),
        ("descriptor length law", descriptor_length_law),
        ("descriptors are unit norm", descriptors_are_unit_norm),
        ("pooling is monotone", pooling_is_monotone),
        ("pooling ignores order", pooling_ignores_order),
        ("encoding is deterministic", encoding_is_deterministic),
        ("index matches exhaustive scan", index_matches_oracle),
        ("indexed image finds itself", indexed_image_finds_itself),
        ("scores are bounded", scores_are_bounded),
        ("index survives save and load", index_survives_round_trip),
        ("promoting a relevant item never lowers AP", ap_rewards_promotion),
        ("mAP is the mean of per-query APs", map_is_mean_of_aps),
        ("exhaustive ranker gives the same mAP", oracle_gives_same_map),
        ("pipeline is deterministic", pipeline_is_deterministic),
        ("stages fail fast on missing inputs", stages_fail_fast),
    ]
}
