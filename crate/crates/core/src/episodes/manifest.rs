//! Seen/unseen class splits with a per-class index of qualifying blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PointCloud;

pub const DEFAULT_THRESHOLD: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: i32,
    pub name: String,
    /// Blocks holding at least `threshold` points of this class.
    #[serde(default)]
    pub blocks: Vec<PathBuf>,
}

/// Stored as TOML; see `docs/formats.md`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    #[serde(default = "default_threshold")]
    pub threshold: usize,
    pub seen: Vec<i32>,
    pub unseen: Vec<i32>,
    #[serde(rename = "class")]
    pub classes: Vec<ClassEntry>,
}

pub(crate) fn default_threshold() -> usize {
    DEFAULT_THRESHOLD
}

impl SplitManifest {
    /// Builds the block index from labeled blocks.
    pub fn build<'a>(
        class_names: &BTreeMap<i32, String>,
        seen: Vec<i32>,
        unseen: Vec<i32>,
        threshold: usize,
        blocks: impl IntoIterator<Item = (PathBuf, &'a PointCloud)>,
    ) -> Result<Self> {
        let mut index: BTreeMap<i32, Vec<PathBuf>> =
            class_names.keys().map(|&id| (id, Vec::new())).collect();
        for (path, cloud) in blocks {
            let labels = cloud.labels().ok_or_else(|| {
                Error::Manifest(format!("block {} has no labels", path.display()))
            })?;
            let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
            for &l in labels {
                *counts.entry(l).or_default() += 1;
            }
            for (class, count) in counts {
                if count >= threshold {
                    if let Some(list) = index.get_mut(&class) {
                        list.push(path.clone());
                    }
                }
            }
        }
        let manifest = Self {
            threshold,
            seen,
            unseen,
            classes: class_names
                .iter()
                .map(|(&id, name)| ClassEntry {
                    id,
                    name: name.clone(),
                    blocks: index.remove(&id).unwrap_or_default(),
                })
                .collect(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if !ids.insert(c.id) {
                return Err(Error::Manifest(format!("class {} listed twice", c.id)));
            }
        }
        let mut split = BTreeSet::new();
        for &c in self.seen.iter().chain(&self.unseen) {
            if !ids.contains(&c) {
                return Err(Error::Manifest(format!("class {c} is in a split but not declared")));
            }
            if !split.insert(c) {
                return Err(Error::Manifest(format!("class {c} appears twice across seen/unseen")));
            }
        }
        Ok(())
    }

    pub fn class(&self, id: i32) -> Option<&ClassEntry> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn blocks_of(&self, id: i32) -> &[PathBuf] {
        self.class(id).map(|c| c.blocks.as_slice()).unwrap_or(&[])
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Loads a manifest; relative block paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in &mut m.classes {
            for b in &mut c.blocks {
                if b.is_relative() {
                    *b = base.join(&*b);
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
