//! Dataset loading shared by the training and inference commands.

use std::path::Path;

use anyhow::Result;
use ecn::sampler::{extract_all, load_dataset, ClassDictionary, PatchSet};
use ecn::{DType, Error, Scalar};

pub struct Loaded<T> {
    pub sets: Vec<PatchSet<T>>,
    pub classes: ClassDictionary,
    pub failures: usize,
}

pub fn read_classes(path: Option<&Path>) -> Result<Option<ClassDictionary>> {
    Ok(match path {
        Some(p) => Some(ClassDictionary::read(p)?),
        None => None,
    })
}

/// Loads an index and extracts every image's patches. Unreadable images are
/// skipped with a warning; an index with no readable image is an error.
pub fn load_sets<T: Scalar>(index: &Path, classes: Option<&ClassDictionary>) -> Result<Loaded<T>> {
    let ds = load_dataset(index, classes)?;
    for f in &ds.failures {
        log::warn!("skipping {}: {}", f.path.display(), f.message);
    }
    if ds.images.is_empty() {
        return Err(Error::Input(format!("no image of {} could be loaded", index.display())).into());
    }
    Ok(Loaded {
        sets: extract_all(&ds.images)?,
        classes: ds.classes,
        failures: ds.failures.len(),
    })
}

/// Errors unless the network's class count equals the dictionary's.
pub fn check_classes(checkpoint: &Path, net_k: usize, classes: &ClassDictionary) -> Result<()> {
    if net_k != classes.len() {
        return Err(Error::Config(format!(
            "class count mismatch: checkpoint {} has K={net_k}, dataset dictionary has K={}",
            checkpoint.display(),
            classes.len()
        ))
        .into());
    }
    Ok(())
}

pub fn precision_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "single",
        DType::F64 => "double",
    }
}
