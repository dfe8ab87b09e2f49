//! Pipeline stages behind the `hmpir` binary.
//!
//! Every stage reads a [`RunConfig`], validates its inputs before doing any heavy
//! work, and writes its artifacts to files whose names carry the pipeline variant so
//! stages can be re-run independently:
//!
//! - dictionaries: `<dictionary_dir>/layer<n>-k<K>-d<D>.hmpd` (baseline: `bof-k<K>-d<D>.hmpd`)
//! - descriptors: `<descriptor_dir>/<variant>/<id>.hmpv`
//! - index: the configured path (baseline: `<stem>.bof-k<K>.hmpi`)

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{load_architecture, RunConfig};
use crate::dataset::Manifest;
use crate::descriptor::{ImageDescriptor, SparseVector};
use crate::dictionary::{self, TrainConfig, TrainingSet};
use crate::encoder::{bof_encode, encode_image, layer_input, ArchitectureConfig, FeatureMap, HmpEncoder};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, GroundTruth};
use crate::image::{load_image, IntensityImage};
use crate::index::{InvertedIndex, RankedResult};
use crate::patches::extract_patches;
use crate::sparse_coding::{norm, Dictionary};

/// Runs `f` on a rayon pool with `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn dictionary_path(cfg: &RunConfig, arch: &ArchitectureConfig, layer: usize) -> PathBuf {
    if cfg.baseline {
        let k = arch.final_codebook_size();
        cfg.dictionary_dir.join(format!("bof-k{k}-d{}.hmpd", arch.input_dim(0)))
    } else {
        let k = arch.layers[layer].codebook_size;
        cfg.dictionary_dir.join(format!("layer{}-k{k}-d{}.hmpd", layer + 1, arch.input_dim(layer)))
    }
}

fn dictionary_count(cfg: &RunConfig, arch: &ArchitectureConfig) -> usize {
    if cfg.baseline {
        1
    } else {
        arch.depth()
    }
}

/// Id-safe file name: anything outside `[A-Za-z0-9._-]` is percent-encoded.
fn file_stem_for(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

struct Loaded {
    arch: ArchitectureConfig,
    manifest: Manifest,
}

fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let arch = load_architecture(&cfg.architecture)?;
    let manifest = Manifest::load(&cfg.manifest)?;
    if manifest.is_empty() {
        return Err(Error::Config(format!("manifest {} lists no images", cfg.manifest.display())));
    }
    Ok(Loaded { arch, manifest })
}

fn prepare(img: IntensityImage, cfg: &RunConfig) -> IntensityImage {
    match cfg.max_side {
        Some(side) => img.resize_max_side(side),
        None => img,
    }
}

/// Loads every manifest image; failures are logged and skipped, and more than half
/// failing aborts.
fn load_all(cfg: &RunConfig, manifest: &Manifest) -> Result<Vec<(String, IntensityImage)>> {
    let loaded: Vec<Option<(String, IntensityImage)>> = manifest
        .entries
        .par_iter()
        .map(|e| match load_image(&e.path) {
            Ok(img) => Some((e.id.clone(), prepare(img, cfg))),
            Err(err) => {
                warn!("skipping {}: {err}", e.id);
                None
            }
        })
        .collect();
    let total = loaded.len();
    let images: Vec<_> = loaded.into_iter().flatten().collect();
    let skipped = total - images.len();
    if 2 * skipped > total {
        return Err(Error::Config(format!("{skipped} of {total} images could not be read")));
    }
    Ok(images)
}

fn sample_rows(
    items: &[Vec<f64>],
    take: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let useful: Vec<&Vec<f64>> = items.iter().filter(|v| norm(v) > 0.0).collect();
    let take = take.min(useful.len());
    let mut picks: Vec<usize> = sample(rng, useful.len(), take).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| useful[i].clone()).collect()
}

fn map_rows(map: &FeatureMap) -> Vec<Vec<f64>> {
    map.elements().map(<[f64]>::to_vec).collect()
}

/// Training signals for layer `layer`: raw patches for the first layer (and the
/// baseline), lower-layer outputs above it.
fn training_signals(
    cfg: &RunConfig,
    arch: &ArchitectureConfig,
    images: &[(String, IntensityImage)],
    dicts: &[Dictionary],
    layer: usize,
) -> Result<Vec<Vec<f64>>> {
    let per_image = cfg.training.samples.div_ceil(images.len().max(1)).max(1);
    let per: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .enumerate()
        .map(|(i, (id, img))| {
            let rows = if layer == 0 {
                match extract_patches(img, arch.patch_size, arch.patch_stride) {
                    Ok(g) => g.patches,
                    Err(e) => {
                        warn!("no training patches from {id}: {e}");
                        return Ok(Vec::new());
                    }
                }
            } else {
                match layer_input(img, arch, dicts, layer) {
                    Ok(map) => map_rows(&map),
                    Err(Error::ImageTooSmall { .. }) => {
                        warn!("{id} is too small for layer {}", layer + 1);
                        return Ok(Vec::new());
                    }
                    Err(e) => return Err(e),
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((layer as u64) << 32) ^ i as u64);
            Ok(sample_rows(&rows, per_image, &mut rng))
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<Vec<f64>> = per.into_iter().flatten().collect();
    all.truncate(cfg.training.samples);
    Ok(all)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub files: Vec<PathBuf>,
    pub traces: Vec<Vec<f64>>,
}

/// `train-dict`: trains one dictionary per layer (or the baseline codebook).
pub fn train_dictionaries(cfg: &RunConfig) -> Result<TrainSummary> {
    let Loaded { arch, manifest } = load_inputs(cfg)?;
    let images = load_all(cfg, &manifest)?;
    std::fs::create_dir_all(&cfg.dictionary_dir)?;

    let mut dicts: Vec<Dictionary> = Vec::new();
    let mut summary = TrainSummary {
        files: Vec::new(),
        traces: Vec::new(),
    };
    let mut log = String::new();
    for layer in 0..dictionary_count(cfg, &arch) {
        let signals = training_signals(cfg, &arch, &images, &dicts, layer)?;
        if signals.is_empty() {
            return Err(Error::Config(format!("no training signals for layer {}", layer + 1)));
        }
        let (k, sparsity) = if cfg.baseline {
            (arch.final_codebook_size(), 1)
        } else {
            (arch.layers[layer].codebook_size, arch.layers[layer].sparsity)
        };
        let tc = TrainConfig {
            codebook_size: k,
            sparsity,
            iterations: cfg.training.iterations,
            incoherence_weight: cfg.training.incoherence_weight,
            seed: cfg.seed.wrapping_add(layer as u64),
            stall_swaps: cfg.training.stall_swaps,
        };
        info!("layer {}: training K={k} on {} signals", layer + 1, signals.len());
        let set = TrainingSet::from_signals(&signals)?;
        let (dict, trace) = dictionary::train(&set, &tc)?;
        let path = dictionary_path(cfg, &arch, layer);
        dict.save(&path)?;
        let _ = writeln!(
            log,
            "{}\tsignals={}\tobjective={}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            signals.len(),
            trace.iter().map(|v| format!("{v:.6e}")).collect::<Vec<_>>().join(",")
        );
        summary.files.push(path);
        summary.traces.push(trace);
        dicts.push(dict);
    }
    std::fs::write(cfg.dictionary_dir.join("train.log"), log)?;
    Ok(summary)
}

/// Loads the dictionaries for the configured variant, failing before any encoding.
pub fn load_dictionaries(cfg: &RunConfig, arch: &ArchitectureConfig) -> Result<Vec<Dictionary>> {
    let paths: Vec<PathBuf> = (0..dictionary_count(cfg, arch)).map(|l| dictionary_path(cfg, arch, l)).collect();
    for p in &paths {
        require_file(p, "dictionary")?;
    }
    paths.iter().map(Dictionary::load).collect()
}

/// Encoder for one image under the configured variant.
pub struct ImageEncoder {
    arch: ArchitectureConfig,
    dicts: Vec<Dictionary>,
    baseline: bool,
}

impl ImageEncoder {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let arch = load_architecture(&cfg.architecture)?;
        let dicts = load_dictionaries(cfg, &arch)?;
        if cfg.baseline {
            let (d, k) = (&dicts[0], arch.final_codebook_size());
            if d.dim() != arch.input_dim(0) || d.size() != k {
                return Err(Error::Config(format!(
                    "baseline dictionary is {}x{}, expected {}x{k}",
                    d.dim(),
                    d.size(),
                    arch.input_dim(0)
                )));
            }
        } else {
            HmpEncoder::new(arch.clone(), dicts.clone())?;
        }
        Ok(Self {
            arch,
            dicts,
            baseline: cfg.baseline,
        })
    }

    pub fn descriptor_len(&self) -> usize {
        if self.baseline {
            self.arch.final_codebook_size()
        } else {
            self.arch.descriptor_len()
        }
    }

    pub fn encode(&self, img: &IntensityImage) -> Result<SparseVector> {
        if self.baseline {
            bof_encode(img, self.arch.patch_size, self.arch.patch_stride, &self.dicts[0])
        } else {
            encode_image(img, &self.arch, &self.dicts)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodeSummary {
    pub count: usize,
    pub mean_nnz: f64,
    pub dimension: usize,
    pub dir: PathBuf,
}

/// `encode`: writes one descriptor file per readable manifest image.
pub fn encode_all(cfg: &RunConfig) -> Result<EncodeSummary> {
    let Loaded { arch, manifest } = load_inputs(cfg)?;
    let encoder = ImageEncoder::from_config(cfg)?;
    let images = load_all(cfg, &manifest)?;
    let dir = cfg.descriptor_path(&arch);
    std::fs::create_dir_all(&dir)?;
    let descs: Vec<ImageDescriptor> = images
        .par_iter()
        .map(|(id, img)| encoder.encode(img).map(|v| ImageDescriptor::new(id.clone(), v)))
        .collect::<Result<_>>()?;
    for d in &descs {
        d.save(dir.join(format!("{}.hmpv", file_stem_for(&d.image_id))))?;
    }
    let mean_nnz = descs.iter().map(|d| d.vector.nnz()).sum::<usize>() as f64 / descs.len().max(1) as f64;
    Ok(EncodeSummary {
        count: descs.len(),
        mean_nnz,
        dimension: encoder.descriptor_len(),
        dir,
    })
}

/// Reads every descriptor file of the configured variant, sorted by file name.
pub fn load_descriptors(cfg: &RunConfig, arch: &ArchitectureConfig) -> Result<Vec<ImageDescriptor>> {
    let dir = cfg.descriptor_path(arch);
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| Error::Config(format!("cannot read descriptors in {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hmpv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no descriptors in {}", dir.display())));
    }
    paths.iter().map(ImageDescriptor::load).collect()
}

/// `build-index`: builds and saves the inverted file; IDF weighting applies to the
/// baseline when enabled.
pub fn build_index(cfg: &RunConfig) -> Result<(PathBuf, InvertedIndex)> {
    let arch = load_architecture(&cfg.architecture)?;
    let descs = load_descriptors(cfg, &arch)?;
    let dim = if cfg.baseline { arch.final_codebook_size() } else { arch.descriptor_len() };
    let mut index = InvertedIndex::from_descriptors(dim, &descs)?;
    if cfg.baseline && cfg.idf {
        index = index.apply_idf();
    }
    let path = cfg.index_path(&arch);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    index.save(&path)?;
    Ok((path, index))
}

/// `query`: encodes an image file and ranks the indexed images against it. If the
/// file is listed in the manifest its id is used for self-exclusion.
pub fn query(cfg: &RunConfig, image: &Path, top_k: usize, self_exclude: bool) -> Result<RankedResult> {
    let arch = load_architecture(&cfg.architecture)?;
    let index_path = cfg.index_path(&arch);
    require_file(&index_path, "index")?;
    let encoder = ImageEncoder::from_config(cfg)?;
    let img = prepare(load_image(image)?, cfg);
    let id = Manifest::load(&cfg.manifest)
        .ok()
        .and_then(|m| m.find_path(image).map(|e| e.id.clone()))
        .unwrap_or_else(|| image.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let index = InvertedIndex::load(&index_path)?;
    let q = ImageDescriptor::new(id, encoder.encode(&img)?);
    index.query(&q, top_k, self_exclude)
}

pub fn format_ranking(result: &RankedResult) -> String {
    result
        .hits
        .iter()
        .enumerate()
        .map(|(r, (id, s))| format!("{}\t{id}\t{s:.6}\n", r + 1))
        .collect()
}

/// `evaluate`: runs every ground-truth query and writes the report.
pub fn evaluate_run(cfg: &RunConfig, self_exclude: bool) -> Result<(PathBuf, EvalReport)> {
    let arch = load_architecture(&cfg.architecture)?;
    let gt_path = cfg
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Config("run config has no ground_truth path".into()))?;
    let gt = GroundTruth::load(gt_path)?;
    let index_path = cfg.index_path(&arch);
    require_file(&index_path, "index")?;
    let index = InvertedIndex::load(&index_path)?;
    let descs: HashMap<String, ImageDescriptor> = load_descriptors(cfg, &arch)?
        .into_iter()
        .map(|d| (d.image_id.clone(), d))
        .collect();
    let fingerprint = format!("{} seed={}", cfg.variant(&arch), cfg.seed);
    let report = evaluate(&index, &descs, &gt, self_exclude, fingerprint)?;
    let path = cfg.report_path(&arch);
    let mut buf = Vec::new();
    report.write_to(&mut buf)?;
    std::fs::write(&path, buf)?;
    Ok((path, report))
}
