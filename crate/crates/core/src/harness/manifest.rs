//! Experiment manifests: a JSON list of stage files with their labels.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Gesture, SampleMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub meta: SampleMeta,
}

/// Entry filters; `None` keeps everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestFilter {
    pub orientation_deg: Option<i32>,
    pub access_point: Option<String>,
    pub gestures: Option<Vec<Gesture>>,
}

impl ManifestFilter {
    pub fn keeps(&self, m: &SampleMeta) -> bool {
        self.orientation_deg.is_none_or(|o| o == m.orientation_deg)
            && self.access_point.as_ref().is_none_or(|a| *a == m.access_point)
            && self.gestures.as_ref().is_none_or(|g| g.contains(&m.gesture))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub filters: ManifestFilter,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.meta.subject.is_empty() {
                return Err(Error::invalid(format!("{}: empty subject", e.meta.sample_id)));
            }
            if !ids.insert(&e.meta.sample_id) {
                return Err(Error::invalid(format!("duplicate sample_id {:?}", e.meta.sample_id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Loads a manifest, resolving relative paths against its directory and
    /// checking that every file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            if !e.path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} listed in manifest does not exist", e.path.display()),
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Entries passing the filters, in manifest order.
    pub fn selected(&self) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| self.filters.keeps(&e.meta)).collect()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.selected().iter().map(|e| e.meta.subject.clone()).collect()
    }

    /// Keeps only the selected entries of the given subjects.
    pub fn restrict_to_subjects(&self, subjects: &[String]) -> Manifest {
        Manifest {
            entries: self
                .selected()
                .into_iter()
                .filter(|e| subjects.contains(&e.meta.subject))
                .cloned()
                .collect(),
            filters: ManifestFilter::default(),
        }
    }
}
