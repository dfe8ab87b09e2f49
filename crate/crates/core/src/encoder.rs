//! Hierarchical matching pursuit encoder.
//!
//! Layer 1 sparse-codes mean-subtracted pixel patches. Every non-final layer groups
//! its codes into square coding units, splits each unit into an `s × s` cell grid,
//! max-pools the positive and negative code parts separately per cell, concatenates
//! the cells in row-major order and ℓ2-normalizes the result. Those unit features
//! form the input grid of the next layer. The final layer's codes are max-pooled over
//! a spatial pyramid on the whole image and the concatenation is ℓ2-normalized once.
//!
//! Geometry is tracked in pixels: a feature grid element at `(r, c)` covers the
//! square `[r·step, r·step + footprint)` on each axis.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::SparseVector;
use crate::error::{Error, Result};
use crate::image::IntensityImage;
use crate::patches::{assign_cells, extract_patches, window_count, PatchGrid};
use crate::sparse_coding::{l2_normalize_in_place, omp_encode, vq_encode, Dictionary, SparseCode};

/// Pooling geometry of a non-final layer, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitPooling {
    /// Side of the square region pooled into one output feature.
    pub unit_size: usize,
    /// Distance between neighbouring units; defaults to `unit_size` (no overlap).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_stride: Option<usize>,
    /// Cells per side inside a unit.
    pub cell_grid: usize,
}

impl UnitPooling {
    pub fn new(unit_size: usize, cell_grid: usize) -> Self {
        Self {
            unit_size,
            unit_stride: None,
            cell_grid,
        }
    }

    pub fn stride(&self) -> usize {
        self.unit_stride.unwrap_or(self.unit_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub codebook_size: usize,
    pub sparsity: usize,
    /// Required on every layer except the last, which is pooled by the pyramid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<UnitPooling>,
}

fn default_patch_size() -> usize {
    5
}

fn default_patch_stride() -> usize {
    1
}

/// Number of layers plus geometry. One, two or three layers give HMP-IR1/2/3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_patch_stride")]
    pub patch_stride: usize,
    /// Spatial pyramid grid sizes, each 1, 2 or 3.
    pub pyramid: Vec<usize>,
    pub layers: Vec<LayerConfig>,
}

pub const HIDDEN_SPARSITY: usize = 4;
pub const FINAL_SPARSITY: usize = 10;
pub const LAYER1_CODEBOOK: usize = 128;
pub const LAYER2_CODEBOOK: usize = 512;

impl ArchitectureConfig {
    /// Default geometry for a `depth`-layer pipeline: 5×5 patches at stride 1,
    /// 16×16 units with 4×4 cells after layer 1, 36×36 units with 2×2 cells after
    /// layer 2, and a 1×1 pyramid.
    pub fn hmp_ir(depth: usize, final_codebook: usize) -> Result<Self> {
        let hidden = [
            LayerConfig {
                codebook_size: LAYER1_CODEBOOK,
                sparsity: HIDDEN_SPARSITY,
                pooling: Some(UnitPooling::new(16, 4)),
            },
            LayerConfig {
                codebook_size: LAYER2_CODEBOOK,
                sparsity: HIDDEN_SPARSITY,
                pooling: Some(UnitPooling::new(36, 2)),
            },
        ];
        if !(1..=3).contains(&depth) {
            return Err(Error::invalid(format!("depth must be 1, 2 or 3, got {depth}")));
        }
        let mut layers = hidden[..depth - 1].to_vec();
        layers.push(LayerConfig {
            codebook_size: final_codebook,
            sparsity: FINAL_SPARSITY,
            pooling: None,
        });
        let cfg = Self {
            patch_size: default_patch_size(),
            patch_stride: default_patch_stride(),
            pyramid: vec![1],
            layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_pyramid(mut self, pyramid: Vec<usize>) -> Self {
        self.pyramid = pyramid;
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn final_codebook_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.codebook_size)
    }

    /// Input dimension of layer `l` (0-based).
    pub fn input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.patch_size * self.patch_size
        } else {
            self.output_dim(l - 1)
        }
    }

    /// Output feature length of a pooling layer: `2 · K · s²`.
    pub fn output_dim(&self, l: usize) -> usize {
        let layer = &self.layers[l];
        let cells = layer.pooling.map_or(1, |p| p.cell_grid * p.cell_grid);
        2 * layer.codebook_size * cells
    }

    /// `2 · K_final · Σ g²` over the pyramid.
    pub fn descriptor_len(&self) -> usize {
        2 * self.final_codebook_size() * self.pyramid.iter().map(|g| g * g).sum::<usize>()
    }

    /// Smallest square image that yields at least one coding unit at every layer.
    pub fn min_image_side(&self) -> usize {
        (self.patch_size..).find(|&side| self.fits(side)).expect("some side fits")
    }

    /// Whether a square image of this side leaves room for a unit at every layer.
    fn fits(&self, side: usize) -> bool {
        let covered = |extent: usize, window: usize, stride: usize| {
            (window <= extent).then(|| (extent - window) / stride.max(1) * stride + window)
        };
        let mut extent = covered(side, self.patch_size, self.patch_stride);
        for p in self.layers.iter().filter_map(|l| l.pooling) {
            extent = extent.and_then(|e| covered(e, p.unit_size, p.stride()));
        }
        extent.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.layers.len()) {
            return bad(format!("expected 1 to 3 layers, got {}", self.layers.len()));
        }
        if self.patch_size == 0 || self.patch_stride == 0 {
            return bad("patch size and stride must be positive".into());
        }
        if self.pyramid.is_empty() {
            return bad("pyramid must list at least one grid size".into());
        }
        if let Some(g) = self.pyramid.iter().find(|g| !(1..=3).contains(*g)) {
            return bad(format!("pyramid grid {g} is not one of 1, 2, 3"));
        }
        let mut footprint = self.patch_size;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let n = l + 1;
            if layer.codebook_size < 2 {
                return bad(format!("layer {n}: codebook size must be at least 2"));
            }
            let max_l = self.input_dim(l).min(layer.codebook_size);
            if layer.sparsity == 0 || layer.sparsity > max_l {
                return bad(format!("layer {n}: sparsity {} outside 1..={max_l}", layer.sparsity));
            }
            match (layer.pooling, l == last) {
                (Some(_), true) => {
                    return bad(format!("layer {n} is final and is pooled by the pyramid; remove its pooling section"))
                }
                (None, false) => return bad(format!("layer {n} needs a pooling section")),
                (Some(p), false) => {
                    if p.cell_grid == 0 || p.unit_size % p.cell_grid != 0 {
                        return bad(format!(
                            "layer {n}: unit size {} is not divisible by cell grid {}",
                            p.unit_size, p.cell_grid
                        ));
                    }
                    if p.unit_size < footprint {
                        return bad(format!(
                            "layer {n}: unit size {} is smaller than its input footprint {footprint}",
                            p.unit_size
                        ));
                    }
                    if p.stride() == 0 {
                        return bad(format!("layer {n}: unit stride must be positive"));
                    }
                    footprint = p.unit_size;
                }
                (None, true) => {}
            }
        }
        Ok(())
    }

    /// Short content hash of the configuration.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        Sha256::digest(text.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A grid of equally sized feature vectors laid out over the image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Pixel distance between neighbouring elements.
    pub step: usize,
    /// Pixel side of the square each element describes.
    pub footprint: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, dim: usize, step: usize, footprint: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::invalid(format!(
                "feature map {rows}x{cols}x{dim} needs {} values, got {}",
                rows * cols * dim,
                data.len()
            )));
        }
        if step == 0 || footprint == 0 {
            return Err(Error::invalid("feature map step and footprint must be positive"));
        }
        Ok(Self { rows, cols, dim, step, footprint, data })
    }

    pub fn from_patches(grid: &PatchGrid) -> Self {
        let dim = grid.patch_size * grid.patch_size;
        Self {
            rows: grid.rows,
            cols: grid.cols,
            dim,
            step: grid.stride,
            footprint: grid.patch_size,
            data: grid.patches.concat(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.len())
    }

    pub fn element_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn center(&self, i: usize) -> (usize, usize) {
        let (r, c) = (i / self.cols, i % self.cols);
        (r * self.step + self.footprint / 2, c * self.step + self.footprint / 2)
    }

    /// Pixel extent `(height, width)` covered by the grid.
    pub fn extent(&self) -> (usize, usize) {
        if self.is_empty() {
            return (0, 0);
        }
        (
            (self.rows - 1) * self.step + self.footprint,
            (self.cols - 1) * self.step + self.footprint,
        )
    }
}

/// Signed max pooling: `out[m] = max_j max(x_jm, 0)` and
/// `out[K + m] = max_j max(-x_jm, 0)`. An empty input pools to zeros.
pub fn signed_max_pool<'a>(codes: impl IntoIterator<Item = &'a SparseCode>, k: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; 2 * k];
    for code in codes {
        if code.len() != k {
            return Err(Error::invalid(format!(
                "code of length {} pooled with codebook size {k}",
                code.len()
            )));
        }
        for &(m, v) in code.entries() {
            if v > 0.0 {
                out[m] = out[m].max(v);
            } else {
                out[k + m] = out[k + m].max(-v);
            }
        }
    }
    Ok(out)
}

/// Concatenates per-cell features in the given order.
pub fn concat_cells<V: AsRef<[f64]>>(cells: &[V]) -> Result<Vec<f64>> {
    let Some(first) = cells.first() else {
        return Ok(Vec::new());
    };
    let len = first.as_ref().len();
    if let Some((s, c)) = cells.iter().enumerate().find(|(_, c)| c.as_ref().len() != len) {
        return Err(Error::invalid(format!(
            "cell {s} has length {}, expected {len}",
            c.as_ref().len()
        )));
    }
    Ok(cells.iter().flat_map(|c| c.as_ref().iter().copied()).collect())
}

fn code_all(features: &FeatureMap, dict: &Dictionary, sparsity: usize) -> Result<Vec<SparseCode>> {
    if dict.dim() != features.dim {
        return Err(Error::invalid(format!(
            "layer dictionary expects inputs of dimension {}, feature grid has dimension {}",
            dict.dim(),
            features.dim
        )));
    }
    (0..features.len())
        .into_par_iter()
        .map(|i| omp_encode(dict, features.element(i), sparsity))
        .collect()
}

/// Codes one layer and pools its codes into the next layer's feature grid.
pub fn encode_layer(features: &FeatureMap, layer: &LayerConfig, dict: &Dictionary) -> Result<FeatureMap> {
    let pooling = layer
        .pooling
        .ok_or_else(|| Error::invalid("encode_layer needs a layer with a pooling section"))?;
    if dict.size() != layer.codebook_size {
        return Err(Error::invalid(format!(
            "layer expects a codebook of size {}, dictionary has {}",
            layer.codebook_size,
            dict.size()
        )));
    }
    let (unit, stride, cells) = (pooling.unit_size, pooling.stride(), pooling.cell_grid);
    let (height, width) = features.extent();
    let out_rows = window_count(height, unit, stride);
    let out_cols = window_count(width, unit, stride);
    if unit < features.footprint || out_rows == 0 || out_cols == 0 {
        return Err(Error::invalid(format!(
            "coding unit {unit}x{unit} (stride {stride}) does not fit a {height}x{width} grid of {f}x{f} features",
            f = features.footprint
        )));
    }

    let codes = code_all(features, dict, layer.sparsity)?;
    let k = layer.codebook_size;
    let out_dim = 2 * k * cells * cells;
    let (step, fp) = (features.step, features.footprint);
    // element rows fully inside [top, top + unit)
    let span = |top: usize, count: usize| {
        let first = top.div_ceil(step);
        let last = ((top + unit - fp) / step).min(count - 1);
        first..=last
    };

    let units: Vec<Vec<f64>> = (0..out_rows * out_cols)
        .into_par_iter()
        .map(|u| {
            let (top, left) = ((u / out_cols) * stride, (u % out_cols) * stride);
            let mut members = Vec::new();
            for r in span(top, features.rows) {
                for c in span(left, features.cols) {
                    members.push(r * features.cols + c);
                }
            }
            let centers: Vec<_> = members.iter().map(|&i| features.center(i)).collect();
            let groups = assign_cells(&centers, (top, left), unit, cells)?;
            let pooled = groups
                .iter()
                .map(|g| signed_max_pool(g.iter().map(|&j| &codes[members[j]]), k))
                .collect::<Result<Vec<_>>>()?;
            let mut feature = concat_cells(&pooled)?;
            l2_normalize_in_place(&mut feature);
            Ok(feature)
        })
        .collect::<Result<_>>()?;

    FeatureMap::new(out_rows, out_cols, out_dim, stride, unit, units.concat())
}

/// Final-layer codes with their centre pixels, over an image area.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMap {
    pub height: usize,
    pub width: usize,
    pub centers: Vec<(usize, usize)>,
    pub codes: Vec<SparseCode>,
}

/// Region index along one axis: `g` equal parts, remainder to the last part.
fn pyramid_cell(pos: usize, extent: usize, g: usize) -> usize {
    let size = (extent / g).max(1);
    (pos / size).min(g - 1)
}

/// Signed max pooling over every region of every pyramid level, concatenated in
/// level order (regions row-major) and ℓ2-normalized once.
pub fn pyramid_pool(codes: &CodeMap, pyramid: &[usize], k: usize) -> Result<SparseVector> {
    if pyramid.is_empty() || pyramid.contains(&0) {
        return Err(Error::invalid("pyramid grid sizes must be positive"));
    }
    if codes.centers.len() != codes.codes.len() {
        return Err(Error::invalid("code map has mismatched centres and codes"));
    }
    let total: usize = pyramid.iter().map(|g| g * g).sum();
    if codes.codes.is_empty() {
        warn!("pyramid pooling over an empty code grid; emitting a zero descriptor");
        return Ok(SparseVector::zeros(2 * k * total));
    }
    let mut out = Vec::with_capacity(2 * k * total);
    for &g in pyramid {
        let mut regions: Vec<Vec<&SparseCode>> = vec![Vec::new(); g * g];
        for (&(r, c), code) in codes.centers.iter().zip(&codes.codes) {
            let idx = pyramid_cell(r, codes.height, g) * g + pyramid_cell(c, codes.width, g);
            regions[idx].push(code);
        }
        for region in regions {
            out.extend(signed_max_pool(region, k)?);
        }
    }
    l2_normalize_in_place(&mut out);
    Ok(SparseVector::from_dense(&out))
}

/// Architecture plus one trained dictionary per layer.
#[derive(Debug, Clone)]
pub struct HmpEncoder {
    arch: ArchitectureConfig,
    dictionaries: Vec<Dictionary>,
}

impl HmpEncoder {
    pub fn new(arch: ArchitectureConfig, dictionaries: Vec<Dictionary>) -> Result<Self> {
        arch.validate()?;
        check_dictionaries(&arch, &dictionaries)?;
        if dictionaries.len() != arch.depth() {
            return Err(Error::Config(format!(
                "{} layers configured but {} dictionaries given",
                arch.depth(),
                dictionaries.len()
            )));
        }
        Ok(Self { arch, dictionaries })
    }

    pub fn architecture(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn dictionaries(&self) -> &[Dictionary] {
        &self.dictionaries
    }

    pub fn encode(&self, img: &IntensityImage) -> Result<SparseVector> {
        encode_image(img, &self.arch, &self.dictionaries)
    }
}

fn check_dictionaries(arch: &ArchitectureConfig, dicts: &[Dictionary]) -> Result<()> {
    for (l, d) in dicts.iter().enumerate().take(arch.depth()) {
        let (dim, k) = (arch.input_dim(l), arch.layers[l].codebook_size);
        if d.dim() != dim || d.size() != k {
            return Err(Error::Config(format!(
                "layer {} dictionary is {}x{}, architecture expects {dim}x{k}",
                l + 1,
                d.dim(),
                d.size()
            )));
        }
    }
    Ok(())
}

fn check_size(img: &IntensityImage, arch: &ArchitectureConfig) -> Result<()> {
    let required = arch.min_image_side();
    if img.width() < required || img.height() < required {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            required,
        });
    }
    Ok(())
}

/// Feature grid entering layer `layer` (0-based), computed with the dictionaries of
/// the layers below it. Layer 0's input is the raw patch grid.
pub fn layer_input(img: &IntensityImage, arch: &ArchitectureConfig, dicts: &[Dictionary], layer: usize) -> Result<FeatureMap> {
    arch.validate()?;
    if layer >= arch.depth() || dicts.len() < layer {
        return Err(Error::invalid(format!(
            "layer {layer} input needs {layer} dictionaries of a {}-layer architecture",
            arch.depth()
        )));
    }
    check_dictionaries(arch, &dicts[..layer])?;
    check_size(img, arch)?;
    let patches = extract_patches(img, arch.patch_size, arch.patch_stride)?;
    let mut map = FeatureMap::from_patches(&patches);
    for (cfg, dict) in arch.layers.iter().zip(dicts).take(layer) {
        map = encode_layer(&map, cfg, dict)?;
    }
    Ok(map)
}

/// Full pipeline: patches, hidden layers, final coding and pyramid pooling.
pub fn encode_image(img: &IntensityImage, arch: &ArchitectureConfig, dicts: &[Dictionary]) -> Result<SparseVector> {
    let last = arch.depth() - 1;
    if dicts.len() != arch.depth() {
        return Err(Error::Config(format!(
            "{} layers configured but {} dictionaries given",
            arch.depth(),
            dicts.len()
        )));
    }
    let input = layer_input(img, arch, dicts, last)?;
    check_dictionaries(arch, dicts)?;
    let layer = &arch.layers[last];
    let codes = code_all(&input, &dicts[last], layer.sparsity)?;
    let map = CodeMap {
        height: img.height(),
        width: img.width(),
        centers: (0..input.len()).map(|i| input.center(i)).collect(),
        codes,
    };
    pyramid_pool(&map, &arch.pyramid, layer.codebook_size)
}

/// Bag-of-features baseline: each nonzero patch is hard-assigned to its nearest atom
/// and the assignments are averaged over the image, then ℓ2-normalized. The result
/// has one entry per atom.
pub fn bof_encode(img: &IntensityImage, patch_size: usize, stride: usize, dict: &Dictionary) -> Result<SparseVector> {
    let grid = extract_patches(img, patch_size, stride)?;
    if dict.dim() != patch_size * patch_size {
        return Err(Error::Config(format!(
            "baseline dictionary has dimension {}, patches have {}",
            dict.dim(),
            patch_size * patch_size
        )));
    }
    let assigned: Vec<usize> = grid
        .patches
        .par_iter()
        .filter(|p| p.iter().any(|v| *v != 0.0))
        .map(|p| vq_encode(dict, p).map(|c| c.entries()[0].0))
        .collect::<Result<_>>()?;
    let mut hist = vec![0.0; dict.size()];
    for &k in &assigned {
        hist[k] += 1.0;
    }
    if !assigned.is_empty() {
        let n = assigned.len() as f64;
        hist.iter_mut().for_each(|h| *h /= n);
    }
    l2_normalize_in_place(&mut hist);
    Ok(SparseVector::from_dense(&hist))
}
