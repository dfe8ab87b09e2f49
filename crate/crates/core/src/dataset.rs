//! Dataset manifests: one `<image-id>\t<path>` record per line.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are resolved
//! against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, path) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected <id>\\t<path>", n + 1)))?;
            let (id, path) = (id.trim(), path.trim());
            if id.is_empty() || path.is_empty() {
                return Err(Error::Config(format!("manifest line {}: empty id or path", n + 1)));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            let path = Path::new(path);
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn find_path(&self, path: &Path) -> Option<&ManifestEntry> {
        let canon = |p: &Path| p.canonicalize().ok();
        let target = canon(path)?;
        self.entries.iter().find(|e| canon(&e.path).as_ref() == Some(&target))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.id, e.path.display()))
            .collect()
    }
}
