//! Dataset manifest: JSON lines of `{"path": ..., "split": ..., "pose": ...}`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown split {split:?}")]
    UnknownSplit { line: usize, split: String },
    #[error("duplicate path {0:?}")]
    DuplicatePath(String),
    #[error("missing file {0:?}")]
    MissingPath(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    /// Orientation-grid pose id (4 = rest pose).
    #[serde(default = "rest_pose")]
    pub pose: u8,
}

fn rest_pose() -> u8 {
    4
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| ManifestError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if let Some(s) = value.get("split").and_then(|s| s.as_str()) {
                if !matches!(s, "train" | "val" | "test") {
                    return Err(ManifestError::UnknownSplit {
                        line: line_no,
                        split: s.to_string(),
                    });
                }
            }
            let entry: ManifestEntry =
                serde_json::from_value(value).map_err(|e| ManifestError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if entry.pose > 8 {
                return Err(ManifestError::Malformed {
                    line: line_no,
                    message: format!("pose id {} outside 0..=8", entry.pose),
                });
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Counts entries per split, rejecting duplicate paths and, when `root` is
/// given, paths that do not exist under it.
pub fn validate_manifest(
    manifest: &DatasetManifest,
    root: Option<&Path>,
) -> Result<SplitCounts, ManifestError> {
    let mut seen = BTreeSet::new();
    let mut counts = SplitCounts::default();
    for e in &manifest.entries {
        if !seen.insert(e.path.as_str()) {
            return Err(ManifestError::DuplicatePath(e.path.clone()));
        }
        if let Some(root) = root {
            if !root.join(&e.path).exists() {
                return Err(ManifestError::MissingPath(e.path.clone()));
            }
        }
        match e.split {
            Split::Train => counts.train += 1,
            Split::Val => counts.val += 1,
            Split::Test => counts.test += 1,
        }
    }
    Ok(counts)
}
