//! Seeded synthetic texture corpora for desk-scale retrieval experiments.
//!
//! A shared vocabulary of small primitives (oriented gratings, checkerboards, dots)
//! is combined into 2×2 motifs. Every group owns a few motifs and its base image
//! tiles the canvas with them; the other members of a group are the base image with
//! a brightness change, a small translation and pixel noise. Local primitives are
//! shared by all groups, so telling groups apart requires mid-level structure.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::eval::GroundTruth;
use crate::image::IntensityImage;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub groups: usize,
    pub per_group: usize,
    /// Side of the square images in pixels.
    pub size: usize,
    /// Side of one primitive tile; motifs are twice this.
    pub tile: usize,
    pub motifs_per_group: usize,
    /// Primitives available to the whole corpus, at most 8. Each motif uses four
    /// distinct ones when the palette allows, so a palette of 4 makes every motif a
    /// rearrangement of the same primitives.
    pub palette: usize,
    pub max_shift: i64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            groups: 10,
            per_group: 3,
            size: 64,
            tile: 8,
            motifs_per_group: 3,
            palette: 4,
            max_shift: 3,
            noise: 0.06,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// `(id, image)` in group order; ids are `g{group}_{member}`.
    pub images: Vec<(String, IntensityImage)>,
    /// Member ids per group, base image first.
    pub groups: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    /// Holidays-style ground truth: each group's base image queries the rest.
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::from_groups(&self.groups).expect("groups have at least two members")
    }

    /// Writes every image as `<id>.pgm` plus `manifest.tsv` and `truth.txt` into
    /// `dir`, returning the manifest and ground-truth paths.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (id, img) in &self.images {
            let file = format!("{id}.pgm");
            std::fs::write(dir.join(&file), img.to_pgm())?;
            manifest.push_str(&format!("{id}\t{file}\n"));
        }
        let (m, t) = (dir.join("manifest.tsv"), dir.join("truth.txt"));
        std::fs::write(&m, manifest)?;
        std::fs::write(&t, self.ground_truth().to_text())?;
        Ok((m, t))
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Grating { angle: f64, period: f64 },
    Checker { period: f64 },
    Dots { period: f64 },
}

impl Primitive {
    fn value(&self, y: f64, x: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            Primitive::Grating { angle, period } => (TAU * (x * angle.cos() + y * angle.sin()) / period).sin(),
            Primitive::Checker { period } => {
                let s = (TAU * x / period).sin() * (TAU * y / period).sin();
                s.signum() * s.abs().sqrt()
            }
            Primitive::Dots { period } => {
                let (u, v) = ((x / period).fract() - 0.5, (y / period).fract() - 0.5);
                if u * u + v * v < 0.08 {
                    1.0
                } else {
                    -0.4
                }
            }
        }
    }
}

fn vocabulary() -> Vec<Primitive> {
    use std::f64::consts::PI;
    let mut v: Vec<Primitive> = (0..4)
        .map(|i| Primitive::Grating {
            angle: i as f64 * PI / 4.0,
            period: 4.0,
        })
        .collect();
    v.push(Primitive::Grating { angle: 0.0, period: 7.0 });
    v.push(Primitive::Grating { angle: PI / 2.0, period: 7.0 });
    v.push(Primitive::Checker { period: 6.0 });
    v.push(Primitive::Dots { period: 4.0 });
    v
}

pub fn texture_corpus(spec: &CorpusSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = vocabulary();
    vocab.shuffle(&mut rng);
    vocab.truncate(spec.palette.clamp(1, 8));
    let motif = 2 * spec.tile;
    let margin = spec.max_shift.max(0) as usize;
    let canvas = spec.size + 2 * margin;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise level");

    let mut images = Vec::new();
    let mut groups = Vec::new();
    for g in 0..spec.groups {
        let motifs: Vec<[Primitive; 4]> = (0..spec.motifs_per_group)
            .map(|_| {
                if vocab.len() >= 4 {
                    let pick: Vec<Primitive> = vocab.choose_multiple(&mut rng, 4).copied().collect();
                    [pick[0], pick[1], pick[2], pick[3]]
                } else {
                    std::array::from_fn(|_| *vocab.choose(&mut rng).expect("vocabulary"))
                }
            })
            .collect();
        let cells = canvas.div_ceil(motif);
        let layout: Vec<usize> = (0..cells * cells).map(|_| rng.random_range(0..motifs.len())).collect();
        let base: Vec<f64> = (0..canvas * canvas)
            .map(|i| {
                let (y, x) = (i / canvas, i % canvas);
                let m = &motifs[layout[(y / motif) * cells + x / motif]];
                let quadrant = ((y % motif) / spec.tile) * 2 + (x % motif) / spec.tile;
                m[quadrant].value(y as f64, x as f64)
            })
            .collect();

        let mut ids = Vec::new();
        for member in 0..spec.per_group {
            let (gain, offset, dy, dx) = if member == 0 {
                (1.0, 0.0, 0, 0)
            } else {
                (
                    rng.random_range(0.7..1.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-spec.max_shift..=spec.max_shift),
                    rng.random_range(-spec.max_shift..=spec.max_shift),
                )
            };
            let sigma = if member == 0 { 0.0 } else { 1.0 };
            let jitter: Vec<f64> = (0..spec.size * spec.size).map(|_| sigma * noise.sample(&mut rng)).collect();
            let img = IntensityImage::from_fn(spec.size, spec.size, |r, c| {
                let y = (r as i64 + margin as i64 + dy) as usize;
                let x = (c as i64 + margin as i64 + dx) as usize;
                0.5 + gain * (0.35 * base[y * canvas + x] + offset) + jitter[r * spec.size + c]
            });
            let id = format!("g{g:02}_{member}");
            ids.push(id.clone());
            images.push((id, img));
        }
        groups.push(ids);
    }
    SyntheticCorpus { images, groups }
}
