use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Per-class test count used by [`SplitPolicy::Standard`] for classes of exactly 400 images.
pub const STANDARD_TEST_COUNT: usize = 55;
pub const STANDARD_CLASS_SIZE: usize = 400;
pub const STANDARD_TEST_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How many entries of each class go to the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// 55 of 400 for classes of exactly 400 images, otherwise `round(0.15 · n)`.
    #[default]
    Standard,
    /// `round(f · n)` with `f ∈ (0, 1)`.
    Fraction(f64),
    /// A fixed count per class.
    TestCount(usize),
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<(), DataError> {
        match *self {
            SplitPolicy::Fraction(f) if !(f > 0.0 && f < 1.0) => {
                Err(DataError::InvalidPolicy(format!("fraction {f} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Test entries for a class of `n` images.
    pub fn test_count(&self, n: usize) -> usize {
        match *self {
            SplitPolicy::Standard if n == STANDARD_CLASS_SIZE => STANDARD_TEST_COUNT,
            SplitPolicy::Standard => (STANDARD_TEST_FRACTION * n as f64).round() as usize,
            SplitPolicy::Fraction(f) => (f * n as f64).round() as usize,
            SplitPolicy::TestCount(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    /// `None` until the manifest is split.
    pub split: Option<Split>,
}

/// Per-label image inventory with an optional train/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: Option<u64>,
    pub policy: Option<SplitPolicy>,
    pub entries: Vec<ManifestEntry>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Inventories `root/<label>/*.{jpg,jpeg,png}`.
///
/// Labels are sorted lexicographically and entries by path. Other files are ignored.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let root = root.as_ref();
    let io = |e: std::io::Error| DataError::Io {
        path: root.to_path_buf(),
        source: e,
    };
    let mut by_class: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for dir in fs::read_dir(root).map_err(io)? {
        let dir = dir.map_err(io)?;
        if !dir.file_type().map_err(io)?.is_dir() {
            continue;
        }
        let label = dir.file_name().to_string_lossy().into_owned();
        let mut images = Vec::new();
        for f in fs::read_dir(dir.path()).map_err(io)? {
            let f = f.map_err(io)?;
            let path = f.path();
            if f.file_type().map_err(io)?.is_file() && is_image(&path) {
                images.push(path);
            }
        }
        by_class.insert(label, images);
    }
    if by_class.is_empty() {
        return Err(DataError::NoClasses(root.to_path_buf()));
    }
    if let Some((label, _)) = by_class.iter().find(|(_, v)| v.is_empty()) {
        return Err(DataError::EmptyClass(label.clone()));
    }
    let classes: Vec<String> = by_class.keys().cloned().collect();
    let mut entries: Vec<ManifestEntry> = by_class
        .into_iter()
        .flat_map(|(label, paths)| {
            paths.into_iter().map(move |path| ManifestEntry {
                path,
                label: label.clone(),
                split: None,
            })
        })
        .collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        classes,
        seed: None,
        policy: None,
        entries,
    })
}

/// Assigns each entry to train or test.
///
/// Per class (in `classes` order), the entries in path order are shuffled with a ChaCha8
/// stream seeded by `seed` on stream `class index`; the last `policy.test_count(n)`
/// shuffled entries become the test split. Entry order in the manifest is preserved.
pub fn split_manifest(
    manifest: &DatasetManifest,
    policy: SplitPolicy,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    policy.validate()?;
    let mut out = manifest.clone();
    for (class_idx, label) in manifest.classes.iter().enumerate() {
        let mut members: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.label == label)
            .map(|(i, _)| i)
            .collect();
        members.sort_by(|&a, &b| manifest.entries[a].path.cmp(&manifest.entries[b].path));
        let n = members.len();
        let test = policy.test_count(n);
        if test >= n {
            return Err(DataError::TestCountTooLarge {
                label: label.clone(),
                test,
                available: n,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class_idx as u64);
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            out.entries[i].split = Some(if rank >= n - test { Split::Test } else { Split::Train });
        }
    }
    if let Some(e) = out.entries.iter().find(|e| !manifest.classes.contains(&e.label)) {
        return Err(DataError::UnknownLabel(e.label.clone()));
    }
    out.seed = Some(seed);
    out.policy = Some(policy);
    Ok(out)
}

impl DatasetManifest {
    /// Entries in the given split (`None` selects all), in manifest order.
    pub fn select(&self, split: Option<Split>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| split.is_none() || e.split == split)
            .collect()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// (train, test) counts per class, in `classes` order.
    pub fn split_counts(&self) -> Vec<(String, usize, usize)> {
        self.classes
            .iter()
            .map(|c| {
                let of = |s| {
                    self.entries
                        .iter()
                        .filter(|e| &e.label == c && e.split == Some(s))
                        .count()
                };
                (c.clone(), of(Split::Train), of(Split::Test))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DataError> {
        serde_json::from_str(s).map_err(|e| DataError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&s)
    }
}
