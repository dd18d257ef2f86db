use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{KudoClass, Material, Orientation};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// One row of `manifest.csv`: `path,class,material,orientation,seed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub class: KudoClass,
    pub material: Material,
    pub orientation: Orientation,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Reads a manifest file, or `manifest.csv` inside a directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let mut reader = csv::Reader::from_path(&file).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Data(format!("cannot open manifest {}: {e}", file.display())),
            _ => Error::Csv(e),
        })?;
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        Ok(Self {
            root: file.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        })
    }

    pub fn write(&self) -> Result<PathBuf> {
        let file = self.root.join(MANIFEST_FILE);
        let mut writer = csv::Writer::from_path(&file)?;
        for r in &self.records {
            writer.serialize(r)?;
        }
        writer.flush().map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.class.index()).collect()
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.records[index].path)
    }

    /// Samples per class in A, G, O, R order.
    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for r in &self.records {
            counts[r.class.index()] += 1;
        }
        counts
    }
}
