//! Split-dataset manifest: subjects with disjoint train/test image sets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Forward-slash path relative to the manifest root.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<String>,
}

impl ImageRecord {
    /// Identifier used to key per-image state: the relative path without extension.
    pub fn id(&self) -> String {
        match self.image.rsplit_once('.') {
            Some((stem, ext)) if !ext.contains('/') => stem.to_string(),
            _ => self.image.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    #[serde(rename = "id")]
    pub subject_id: String,
    pub supercategory: String,
    #[serde(rename = "train")]
    pub train_images: Vec<ImageRecord>,
    #[serde(rename = "test")]
    pub test_images: Vec<ImageRecord>,
}

impl SubjectRecord {
    pub fn train_image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.train_images.iter().find(|r| r.id() == image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Root as written in the document; relative roots are taken against the
    /// manifest file's directory.
    #[serde(rename = "root")]
    pub root: String,
    pub subjects: Vec<SubjectRecord>,
    /// Resolved root directory; not part of the wire format.
    #[serde(skip)]
    pub root_path: PathBuf,
}

impl DatasetManifest {
    pub fn subject(&self, subject_id: &str) -> Result<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)
            .ok_or_else(|| Error::Data(format!("no subject `{subject_id}` in manifest")))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let mut p = self.root_path.clone();
        for part in relative.split('/').filter(|s| !s.is_empty()) {
            p.push(part);
        }
        p
    }

    pub fn image_count(&self) -> usize {
        self.subjects
            .iter()
            .map(|s| s.train_images.len() + s.test_images.len())
            .sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Every relative path referenced by the manifest.
    pub fn referenced_paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for s in &self.subjects {
            for r in s.train_images.iter().chain(&s.test_images) {
                out.push(r.image.as_str());
                if let Some(m) = &r.mask {
                    out.push(m.as_str());
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Parse a manifest document and check that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut manifest = DatasetManifest::from_json(&text, path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let root = Path::new(&manifest.root);
    manifest.root_path = if root.is_absolute() {
        root.to_path_buf()
    } else {
        base.join(root)
    };
    let mut seen = BTreeSet::new();
    for rel in manifest.referenced_paths() {
        if !seen.insert(rel) {
            continue;
        }
        let resolved = manifest.resolve(rel);
        if !resolved.is_file() {
            return Err(Error::MissingFile(resolved));
        }
    }
    Ok(manifest)
}
