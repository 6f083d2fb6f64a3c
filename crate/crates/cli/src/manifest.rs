//! Experiment manifest: the dataset files of one phantom and how they were made.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use outcomes_core::io;
use outcomes_core::{AcsSpec, GridSpec, MultiCoilKspace, PhantomSpec};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContrastEntry {
    pub index: usize,
    /// Array stem relative to the manifest directory.
    pub stem: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub grid: GridSpec,
    pub acs: AcsSpec,
    pub seed: u64,
    pub noise_std: f64,
    pub contrasts: Vec<ContrastEntry>,
    /// sha256 of the phantom spec that produced the data.
    pub phantom_hash: String,
    pub phantom: PhantomSpec,
}

/// A manifest together with the directory its paths are relative to.
pub struct Loaded {
    pub manifest: ExperimentManifest,
    pub dir: PathBuf,
}

impl ExperimentManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        fs::write(&path, serde_json::to_vec_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

impl Loaded {
    /// Reads a manifest (file or directory containing one) and checks every listed array.
    pub fn open(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(FILE_NAME)
        } else {
            path.to_path_buf()
        };
        let bytes =
            fs::read(&file).with_context(|| format!("reading manifest {}", file.display()))?;
        let manifest: ExperimentManifest = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing manifest {}", file.display()))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Loaded { manifest, dir };
        for c in &loaded.manifest.contrasts {
            let stem = loaded.dir.join(&c.stem);
            let header =
                io::read_header(&stem).with_context(|| format!("contrast {} dataset", c.index))?;
            if header.shape != loaded.manifest.grid.shape() {
                bail!(
                    "contrast {} has shape {:?}, manifest grid is {:?}",
                    c.index,
                    header.shape,
                    loaded.manifest.grid.shape()
                );
            }
            if !io::raw_path(&stem).exists() {
                bail!(
                    "contrast {} data file {} is missing",
                    c.index,
                    io::raw_path(&stem).display()
                );
            }
        }
        Ok(loaded)
    }

    pub fn n_contrasts(&self) -> usize {
        self.manifest.contrasts.len()
    }

    pub fn kspace(&self, contrast: usize) -> Result<MultiCoilKspace> {
        let entry = self
            .manifest
            .contrasts
            .iter()
            .find(|c| c.index == contrast)
            .with_context(|| {
                format!(
                    "contrast {contrast} is not in the manifest ({} contrasts)",
                    self.n_contrasts()
                )
            })?;
        Ok(io::read_array(&self.dir.join(&entry.stem))?.into())
    }
}
