//! Dense square patches and their assignment to spatial cells.

use crate::error::{Error, Result};
use crate::image::IntensityImage;

/// Mean-subtracted square patches sampled on a regular grid.
///
/// Patch `(r, c)` covers pixels `origin + (r·stride .. r·stride + patch_size)` and
/// its centre is the top-left corner plus `patch_size / 2` on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// Top-left pixel `(row, col)` of the first patch.
    pub origin: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    /// Row-major, each of length `patch_size²`.
    pub patches: Vec<Vec<f64>>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Centre pixel `(row, col)` of patch `i`.
    pub fn center(&self, i: usize) -> (usize, usize) {
        let (r, c) = (i / self.cols, i % self.cols);
        (
            self.origin.0 + r * self.stride + self.patch_size / 2,
            self.origin.1 + c * self.stride + self.patch_size / 2,
        )
    }

    pub fn centers(&self) -> Vec<(usize, usize)> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }
}

/// Number of window positions of size `window` along an axis of length `extent`.
pub fn window_count(extent: usize, window: usize, stride: usize) -> usize {
    if window > extent || stride == 0 {
        0
    } else {
        (extent - window) / stride + 1
    }
}

/// Extracts every `patch_size × patch_size` window at the given stride. Windows that
/// would cross the image border are dropped. Each patch has its mean removed.
pub fn extract_patches(img: &IntensityImage, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    if patch_size > img.width().min(img.height()) {
        return Err(Error::invalid(format!(
            "patch size {patch_size} exceeds the {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let rows = window_count(img.height(), patch_size, stride);
    let cols = window_count(img.width(), patch_size, stride);
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (top, left) = (r * stride, c * stride);
            let mut p = Vec::with_capacity(patch_size * patch_size);
            for y in top..top + patch_size {
                p.extend_from_slice(&img.pixels()[y * img.width() + left..][..patch_size]);
            }
            if p.iter().all(|v| *v == p[0]) {
                p.fill(0.0);
            } else {
                let mean = p.iter().sum::<f64>() / p.len() as f64;
                p.iter_mut().for_each(|v| *v -= mean);
            }
            patches.push(p);
        }
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        origin: (0, 0),
        rows,
        cols,
        patches,
    })
}

/// Assigns points to the `cells × cells` grid tiling a square region of side
/// `region_size` at `region_origin`. Returns one list of point indices per cell in
/// row-major cell order.
pub fn assign_cells(
    centers: &[(usize, usize)],
    region_origin: (usize, usize),
    region_size: usize,
    cells: usize,
) -> Result<Vec<Vec<usize>>> {
    if cells == 0 || region_size == 0 || !region_size.is_multiple_of(cells) {
        return Err(Error::invalid(format!(
            "region of size {region_size} cannot be tiled by a {cells}x{cells} cell grid"
        )));
    }
    let cell = region_size / cells;
    let mut out = vec![Vec::new(); cells * cells];
    for (i, &(r, c)) in centers.iter().enumerate() {
        let inside = |v: usize, o: usize| v >= o && v < o + region_size;
        if !inside(r, region_origin.0) || !inside(c, region_origin.1) {
            return Err(Error::invalid(format!(
                "point {i} centred at ({r}, {c}) lies outside the {region_size}x{region_size} region at {region_origin:?}"
            )));
        }
        let cr = (r - region_origin.0) / cell;
        let cc = (c - region_origin.1) / cell;
        out[cr * cells + cc].push(i);
    }
    Ok(out)
}

/// Groups the patches of a grid into a `cells × cells` layout over the square region
/// of side `region_size` starting at the grid origin.
pub fn group_into_cells(grid: &PatchGrid, region_size: usize, cells: usize) -> Result<Vec<Vec<usize>>> {
    assign_cells(&grid.centers(), grid.origin, region_size, cells)
}
