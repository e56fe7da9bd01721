//! Dataset indexes and class dictionaries.
//!
//! An index is UTF-8 text with one `label<TAB>relative/path` record per
//! line, paths relative to the index file's directory. A class dictionary is
//! `index<TAB>label` lines with labels in lexicographic order.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::image::{load_image, preprocess, LineImage};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDictionary {
    labels: Vec<String>,
}

impl ClassDictionary {
    /// Sorted, de-duplicated dictionary over `labels`.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        ClassDictionary {
            labels: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn to_tsv(&self) -> String {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}\t{l}\n"))
            .collect()
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (idx, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(context, format!("line {}: expected index<TAB>label", n + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::format(context, format!("line {}: bad index '{idx}'", n + 1)))?;
            if idx != labels.len() {
                return Err(Error::format(
                    context,
                    format!("line {}: index {idx} out of sequence", n + 1),
                ));
            }
            labels.push(label.to_string());
        }
        let dict = ClassDictionary::from_labels(labels.clone());
        if dict.labels != labels {
            return Err(Error::format(context, "labels are not unique and sorted"));
        }
        Ok(dict)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub line: usize,
    pub label: String,
    pub path: String,
}

pub fn parse_index(text: &str, context: &str) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, path)) = line.split_once('\t') else {
            return Err(Error::format(
                context,
                format!("line {}: expected label<TAB>path", n + 1),
            ));
        };
        if label.is_empty() || path.is_empty() {
            return Err(Error::format(context, format!("line {}: empty field", n + 1)));
        }
        out.push(IndexEntry {
            line: n + 1,
            label: label.to_string(),
            path: path.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub images: Vec<LineImage>,
    pub classes: ClassDictionary,
    /// Entries whose image could not be read; loading continues past them.
    pub failures: Vec<LoadFailure>,
}

/// Loads and preprocesses every image of an index. When `classes` is given,
/// labels outside it are an error; otherwise the dictionary is built from the
/// index. Duplicate lines load twice.
pub fn load_dataset(index: &Path, classes: Option<&ClassDictionary>) -> Result<LoadedDataset> {
    let text = fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let ctx = index.display().to_string();
    let entries = parse_index(&text, &ctx)?;
    let classes = match classes {
        Some(c) => c.clone(),
        None => ClassDictionary::from_labels(entries.iter().map(|e| e.label.clone())),
    };
    let root = index.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(entries.len());
    let mut failures = Vec::new();
    for e in &entries {
        let label = classes.index_of(&e.label).ok_or_else(|| {
            Error::input(format!(
                "{ctx} line {}: label '{}' is not in the class dictionary",
                e.line, e.label
            ))
        })?;
        let path = root.join(&e.path);
        match load_image(&path).and_then(|raw| preprocess(&raw, label, e.path.clone())) {
            Ok(img) => images.push(img),
            Err(err) => failures.push(LoadFailure {
                path,
                message: err.to_string(),
            }),
        }
    }
    Ok(LoadedDataset {
        images,
        classes,
        failures,
    })
}
