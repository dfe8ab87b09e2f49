//! TOML configuration files.
//!
//! An architecture file describes the encoder:
//!
//! ```toml
//! patch_size = 5
//! patch_stride = 1
//! pyramid = [1]
//!
//! [[layers]]
//! codebook_size = 128
//! sparsity = 4
//! [layers.pooling]
//! unit_size = 16
//! cell_grid = 4
//!
//! [[layers]]
//! codebook_size = 1000
//! sparsity = 10
//! ```
//!
//! A run file wires a dataset to the pipeline stages; relative paths are resolved
//! against the run file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::ArchitectureConfig;
use crate::error::{Error, Result};

pub fn load_architecture(path: impl AsRef<Path>) -> Result<ArchitectureConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read architecture {}: {e}", path.display())))?;
    parse_architecture(&text)
}

pub fn parse_architecture(text: &str) -> Result<ArchitectureConfig> {
    let arch: ArchitectureConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("architecture: {e}")))?;
    arch.validate()?;
    Ok(arch)
}

pub fn architecture_to_toml(arch: &ArchitectureConfig) -> String {
    toml::to_string(arch).expect("architecture serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Training signals sampled per layer.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_incoherence")]
    pub incoherence_weight: f64,
    /// Swap victims tried when training stalls; 0 disables.
    #[serde(default)]
    pub stall_swaps: usize,
}

fn default_samples() -> usize {
    20_000
}

fn default_iterations() -> usize {
    10
}

fn default_incoherence() -> f64 {
    0.1
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            iterations: default_iterations(),
            incoherence_weight: default_incoherence(),
            stall_swaps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub architecture: PathBuf,
    pub dictionary_dir: PathBuf,
    pub descriptor_dir: PathBuf,
    pub index: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Evaluation report; defaults to `<index stem>.report.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    /// Downscale images so the longer side is at most this many pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_side: Option<usize>,
    /// Bag-of-features baseline (nearest-atom coding, average pooling).
    #[serde(default)]
    pub baseline: bool,
    /// IDF-weight the baseline index.
    #[serde(default)]
    pub idf: bool,
    #[serde(default)]
    pub training: TrainingSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read run config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.architecture);
        fix(&mut self.dictionary_dir);
        fix(&mut self.descriptor_dir);
        fix(&mut self.index);
        if let Some(p) = self.ground_truth.as_mut() {
            fix(p);
        }
        if let Some(p) = self.report.as_mut() {
            fix(p);
        }
    }

    /// Name of the pipeline variant, used to key artifact files.
    pub fn variant(&self, arch: &ArchitectureConfig) -> String {
        if self.baseline {
            format!("bof-k{}", arch.final_codebook_size())
        } else {
            format!("hmp{}-{}", arch.depth(), arch.fingerprint())
        }
    }

    pub fn index_path(&self, arch: &ArchitectureConfig) -> PathBuf {
        if self.baseline {
            self.index.with_extension(format!("{}.hmpi", self.variant(arch)))
        } else {
            self.index.clone()
        }
    }

    pub fn report_path(&self, arch: &ArchitectureConfig) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.index_path(arch).with_extension("report.txt"))
    }

    pub fn descriptor_path(&self, arch: &ArchitectureConfig) -> PathBuf {
        self.descriptor_dir.join(self.variant(arch))
    }
}
