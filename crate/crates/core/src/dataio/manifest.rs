use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    entries: Vec<ManifestEntry>,
}

/// A labeled image list with a dense class index.
///
/// Class ids are positions in the lexicographically sorted list of unique
/// labels. Relative entry paths resolve against `root` (the directory of the
/// manifest file, when loaded from disk).
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    class_index: Vec<String>,
    root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::Data(format!(
                    "duplicate manifest path {}",
                    e.path.display()
                )));
            }
            if e.label.is_empty() {
                return Err(Error::Data(format!(
                    "empty label for {}",
                    e.path.display()
                )));
            }
        }
        let class_index: Vec<String> = entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Manifest {
            entries,
            class_index,
            root: root.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text)
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        if file.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::malformed(
                path,
                format!("unsupported manifest schema_version {}", file.schema_version),
            ));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(file.entries, root)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFile {
            schema_version: MANIFEST_SCHEMA_VERSION,
            entries: self.entries.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_index(&self) -> &[String] {
        &self.class_index
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.class_index.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Class id of every entry, in entry order.
    pub fn label_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.class_id(&e.label).expect("label indexed at construction"))
            .collect()
    }

    pub fn resolve(&self, index: usize) -> PathBuf {
        let p = &self.entries[index].path;
        if p.is_absolute() {
            p.clone()
        } else {
            self.root.join(p)
        }
    }
}
