//! Snapshot archives plus the metadata needed to rebuild a predictive model.
//!
//! An archive only stores assignments, so `fit` writes `<archive>.meta.json`
//! alongside it naming the representation file and class it was fitted on.
//! The prior is re-derived from those rows on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use repdensity::sampler::{load_snapshots, save_snapshots};
use repdensity::{derive_prior, load_representations, Error, PredictiveModel, Snapshot};

use crate::config::SamplerSection;
use crate::manifest::{sha256_file, sidecar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub input: String,
    pub input_sha256: String,
    pub class: u32,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub sampler: SamplerSection,
}

pub fn meta_path(archive: &Path) -> PathBuf {
    sidecar(archive, ".meta.json")
}

pub fn save_archive(archive: &Path, meta: &ArchiveMeta, snapshots: &[Snapshot]) -> Result<PathBuf, Error> {
    save_snapshots(archive, meta.d, snapshots)?;
    let path = meta_path(archive);
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

pub struct LoadedModel {
    pub meta: ArchiveMeta,
    pub model: PredictiveModel,
}

pub fn load_archive(archive: &Path) -> Result<LoadedModel, Error> {
    let path = meta_path(archive);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    let meta: ArchiveMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (n, d, snapshots) = load_snapshots(archive)?;
    if (n, d) != (meta.n, meta.d) {
        return Err(Error::Corruption(format!(
            "{} holds {n}x{d} assignments but its metadata says {}x{}",
            archive.display(),
            meta.n,
            meta.d
        )));
    }
    let input = Path::new(&meta.input);
    if sha256_file(input)? != meta.input_sha256 {
        return Err(Error::Validation(format!("{} changed since {} was fitted", meta.input, archive.display())));
    }
    let data = load_representations(input)?;
    let rows = data.select(&data.class_indices(meta.class)).into_rows();
    if rows.dim() != (n, d) {
        return Err(Error::Validation(format!(
            "class {} of {} has {} rows of dimension {}, archive expects {n}x{d}",
            meta.class,
            meta.input,
            rows.nrows(),
            rows.ncols()
        )));
    }
    let prior = derive_prior(rows.view())?;
    let model = PredictiveModel::new(snapshots, rows, prior)?;
    Ok(LoadedModel { meta, model })
}
