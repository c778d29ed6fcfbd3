//! Dataset manifests (`id,class,path`) and bulk descriptor preparation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::classify::{with_threads, ClassifyError, LabeledBundle};
use crate::descriptors::{build_features, BundleError, FeatureConfig, FeatureSet};
use crate::mask::{load_mask, normalize, BinaryMask, MaskError, NormalizationConfig};
use crate::synth::SynthSample;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("image `{id}`: {source}")]
    Mask {
        id: String,
        #[source]
        source: MaskError,
    },
    #[error("image `{id}`: {source}")]
    Features {
        id: String,
        #[source]
        source: BundleError,
    },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    /// Relative to the manifest's directory.
    pub path: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    if entries.is_empty() {
        w.write_record(["id", "class", "path"])?;
    }
    w.flush()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let fail = |message: String| DatasetError::Manifest {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out: Vec<ManifestEntry> = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for row in reader.deserialize() {
        let e: ManifestEntry = row.map_err(|e| fail(e.to_string()))?;
        if !ids.insert(e.id.clone()) {
            return Err(fail(format!("duplicate id `{}`", e.id)));
        }
        out.push(e);
    }
    Ok(out)
}

/// A mask with its identity and class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    pub id: String,
    pub label: String,
    pub mask: BinaryMask,
}

/// Resolves the manifest inside `dir` (or a manifest file path) and loads
/// every listed mask.
pub fn load_dataset(dir_or_manifest: impl AsRef<Path>) -> Result<Vec<LabeledMask>, DatasetError> {
    let p = dir_or_manifest.as_ref();
    let manifest: PathBuf = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.to_path_buf() };
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    read_manifest(&manifest)?
        .into_iter()
        .map(|e| {
            let mask = load_mask(base.join(&e.path)).map_err(|source| DatasetError::Mask {
                id: e.id.clone(),
                source,
            })?;
            Ok(LabeledMask {
                id: e.id,
                label: e.class,
                mask,
            })
        })
        .collect()
}

/// Normalizes rendered samples in parallel, preserving order.
pub fn normalize_samples(samples: &[SynthSample], cfg: &NormalizationConfig) -> Result<Vec<LabeledMask>, DatasetError> {
    samples
        .par_iter()
        .map(|s| {
            let n = normalize(&s.mask, &s.wrist, cfg).map_err(|source| DatasetError::Mask {
                id: s.id.clone(),
                source,
            })?;
            Ok(LabeledMask {
                id: s.id.clone(),
                label: s.class_id.clone(),
                mask: n.mask,
            })
        })
        .collect()
}

/// Computes the requested features for every mask on the current pool.
pub fn prepare_bundles(
    masks: &[LabeledMask],
    cfg: &FeatureConfig,
    want: FeatureSet,
) -> Result<Vec<LabeledBundle>, DatasetError> {
    masks
        .par_iter()
        .map(|m| {
            let bundle = build_features(&m.mask, cfg, want).map_err(|source| DatasetError::Features {
                id: m.id.clone(),
                source,
            })?;
            Ok(LabeledBundle::new(m.id.clone(), m.label.clone(), bundle))
        })
        .collect()
}

/// [`prepare_bundles`] on a pool of `threads` workers.
pub fn prepare_bundles_with(
    masks: &[LabeledMask],
    cfg: &FeatureConfig,
    want: FeatureSet,
    threads: usize,
) -> Result<Vec<LabeledBundle>, DatasetError> {
    with_threads(threads, || prepare_bundles(masks, cfg, want))?
}
