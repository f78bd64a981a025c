use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::rng;

pub const SPLIT_SCHEMA_VERSION: u32 = 1;

/// Fractions of each class assigned to train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidParam(format!(
                "split ratios must be positive: {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "split ratios must sum to 1: {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub schema_version: u32,
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: DatasetSplit =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if split.schema_version != SPLIT_SCHEMA_VERSION {
            return Err(Error::malformed(
                path,
                format!("unsupported split schema_version {}", split.schema_version),
            ));
        }
        Ok(split)
    }

    /// Checks that the three lists partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of range 0..{n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} appears twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("split misses index {missing}")));
        }
        Ok(())
    }
}

/// Stratified seeded split.
///
/// Each class's entries (in manifest order) are shuffled with a generator
/// derived from `(seed, class id)`; the first `round(n * validation)` go to
/// validation, the next `round(n * test)` to test, the remainder to train.
/// Classes with fewer than three entries go entirely to train and a warning
/// is recorded. Output lists are sorted ascending.
pub fn split_manifest(manifest: &Manifest, seed: u64, ratios: SplitRatios) -> Result<DatasetSplit> {
    ratios.validate()?;
    let ids = manifest.label_ids();
    let mut split = DatasetSplit {
        schema_version: SPLIT_SCHEMA_VERSION,
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for (class, label) in manifest.class_index().iter().enumerate() {
        let mut members: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == class).collect();
        let n = members.len();
        if n < 3 {
            let msg = format!("class `{label}` has {n} entries; all placed in train");
            log::warn!("{msg}");
            split.warnings.push(msg);
            split.train.extend(members);
            continue;
        }
        let mut rng = rng::rng_for(seed, &format!("split/class/{class}"));
        members.shuffle(&mut rng);
        let n_val = (n as f64 * ratios.validation).round() as usize;
        let n_test = ((n as f64 * ratios.test).round() as usize).min(n - n_val);
        split.validation.extend_from_slice(&members[..n_val]);
        split.test.extend_from_slice(&members[n_val..n_val + n_test]);
        split.train.extend_from_slice(&members[n_val + n_test..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
