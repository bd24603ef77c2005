//! Embedding datasets, the class schema, the label ledger and label export.
//!
//! A dataset is immutable once ingested. All labeling state lives in the
//! [`LabelLedger`], which is owned and mutated by the session layer.

mod export;
mod ingest;
mod ledger;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_accuracy, export_labels, write_export_csv, ExportRecord, Provenance};
pub use ingest::{ingest, read_labels_file, write_binary, write_csv, BINARY_MAGIC, BINARY_VERSION};
pub use ledger::{LabelCounts, LabelLedger, LabelState, LedgerError};

/// Dense class index in `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ClassId {
    fn from(value: usize) -> Self {
        ClassId(value as u32)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowLength {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("non-finite feature values in rows: {}", .ids.join(", "))]
    NonFinite { ids: Vec<String> },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("unknown class id {class} for instance {id:?}")]
    UnknownClass { id: String, class: i64 },
    #[error("labels file references unknown instance id {0:?}")]
    UnknownId(String),
    #[error("no label for instance {0:?}")]
    MissingLabel(String),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid class schema: {0}")]
    InvalidSchema(String),
    #[error("binary file: {0}")]
    Binary(String),
    #[error("dataset has no ground truth")]
    MissingGroundTruth,
    #[error("{count} unlabeled instances have no model prediction")]
    MissingPredictions { count: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Ordered class names; the position of a name is its [`ClassId`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSchema {
    names: Vec<String>,
}

impl ClassSchema {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(DatasetError::InvalidSchema(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(DatasetError::InvalidSchema("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    /// Builds a schema from explicit `(id, name)` pairs; ids must be `0..K`.
    pub fn from_pairs(mut pairs: Vec<(u32, String)>) -> Result<Self> {
        pairs.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in pairs.iter().enumerate() {
            if *id as usize != expected {
                return Err(DatasetError::InvalidSchema(format!(
                    "class ids must be contiguous from 0, found {id} at position {expected}"
                )));
            }
        }
        Self::new(pairs.into_iter().map(|(_, name)| name))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        class.index() < self.names.len()
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.names.get(class.index()).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len()).map(ClassId::from)
    }

    pub fn by_name(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(ClassId::from)
    }
}

/// Immutable feature matrix (row-major `f32`) plus instance metadata.
#[derive(Debug, Clone)]
pub struct EmbeddingDataset {
    n: usize,
    d: usize,
    features: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    ground_truth: Option<Vec<ClassId>>,
    image_refs: Option<Vec<Option<PathBuf>>>,
    schema: ClassSchema,
}

impl EmbeddingDataset {
    /// Validates and assembles a dataset. Non-finite rows are reported all at once.
    pub fn new(
        schema: ClassSchema,
        ids: Vec<String>,
        features: Vec<f32>,
        d: usize,
        ground_truth: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 || d == 0 {
            return Err(DatasetError::Empty);
        }
        if features.len() != n * d {
            return Err(DatasetError::LengthMismatch {
                expected: n * d,
                found: features.len(),
            });
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(id.clone()));
            }
        }
        let bad: Vec<String> = features
            .chunks_exact(d)
            .zip(&ids)
            .filter(|(row, _)| row.iter().any(|v| !v.is_finite()))
            .map(|(_, id)| id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(DatasetError::NonFinite { ids: bad });
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != n {
                return Err(DatasetError::LengthMismatch {
                    expected: n,
                    found: gt.len(),
                });
            }
            if let Some((i, c)) = gt.iter().enumerate().find(|(_, c)| !schema.contains(**c)) {
                return Err(DatasetError::UnknownClass {
                    id: ids[i].clone(),
                    class: i64::from(c.0),
                });
            }
        }
        Ok(Self {
            n,
            d,
            features,
            ids,
            index,
            ground_truth,
            image_refs: None,
            schema,
        })
    }

    /// Attaches image locators found in `dir`; a file whose stem equals an
    /// instance id becomes that instance's image.
    pub fn with_images(mut self, dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut refs = vec![None; self.n];
        for entry in entries {
            let entry = entry.map_err(|source| DatasetError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            let path = entry.path();
            if !path.is_file() {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if let Some(&i) = self.index.get(stem) {
                refs[i] = Some(PathBuf::from(entry.file_name()));
            }
        }
        self.image_refs = Some(refs);
        Ok(self)
    }

    /// Copies the given rows into a new dataset, keeping ids, labels and images.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let ids: Vec<String> = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            n: indices.len(),
            d: self.d,
            features,
            ids,
            index,
            ground_truth: self
                .ground_truth
                .as_ref()
                .map(|gt| indices.iter().map(|&i| gt[i]).collect()),
            image_refs: self
                .image_refs
                .as_ref()
                .map(|refs| indices.iter().map(|&i| refs[i].clone()).collect()),
            schema: self.schema.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &ClassSchema {
        &self.schema
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Ground-truth classes. Only simulation and evaluation code reads these.
    pub fn ground_truth(&self) -> Option<&[ClassId]> {
        self.ground_truth.as_deref()
    }

    pub fn image_ref(&self, i: usize) -> Option<&Path> {
        self.image_refs.as_ref()?.get(i)?.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ClassSchema {
        ClassSchema::new(["a", "b"]).unwrap()
    }

    #[test]
    fn schema_validation() {
        assert!(ClassSchema::new(["only"]).is_err());
        assert!(ClassSchema::new(["x", "x"]).is_err());
        assert!(ClassSchema::from_pairs(vec![(0, "a".into()), (2, "b".into())]).is_err());
        let s = ClassSchema::from_pairs(vec![(1, "b".into()), (0, "a".into())]).unwrap();
        assert_eq!(s.name(ClassId(1)), Some("b"));
        assert_eq!(s.by_name("a"), Some(ClassId(0)));
    }

    #[test]
    fn rejects_non_finite_rows_listing_all_ids() {
        let err = EmbeddingDataset::new(
            schema(),
            vec!["p".into(), "q".into(), "r".into()],
            vec![0.0, f32::NAN, 1.0, 2.0, f32::INFINITY, 0.0],
            2,
            None,
        )
        .unwrap_err();
        match err {
            DatasetError::NonFinite { ids } => assert_eq!(ids, vec!["p", "r"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_ground_truth() {
        let dup = EmbeddingDataset::new(schema(), vec!["a".into(), "a".into()], vec![0.0; 2], 1, None);
        assert!(matches!(dup, Err(DatasetError::DuplicateId(_))));
        let gt = EmbeddingDataset::new(
            schema(),
            vec!["a".into(), "b".into()],
            vec![0.0; 2],
            1,
            Some(vec![ClassId(0), ClassId(5)]),
        );
        assert!(matches!(gt, Err(DatasetError::UnknownClass { class: 5, .. })));
    }

    #[test]
    fn subset_keeps_rows_and_labels() {
        let ds = EmbeddingDataset::new(
            schema(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            2,
            Some(vec![ClassId(0), ClassId(1), ClassId(0)]),
        )
        .unwrap();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.row(0), &[4.0, 5.0]);
        assert_eq!(sub.id(1), "a");
        assert_eq!(sub.index_of("c"), Some(0));
        assert_eq!(sub.ground_truth().unwrap(), &[ClassId(0), ClassId(0)]);
    }
}
