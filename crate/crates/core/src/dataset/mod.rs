//! Labeled image manifests, subject-disjoint splits, input preprocessing,
//! and a procedural texture dataset for desk-scale runs.

mod manifest;
mod preprocess;
mod split;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestRecord};
pub use preprocess::{load_image_tensor, preprocess_image, resize_bilinear, Normalization};
pub use split::{
    greedy_split, read_split_file, split_by_subject, write_split_file, Split, SplitAssignment, SplitFractions,
};
pub use synthetic::{generate_synthetic, render_texture, SyntheticConfig, TISSUE_CLASSES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {detail}")]
    Row { row: u64, detail: String },
    #[error("row {row}: duplicate path {path:?}")]
    DuplicatePath { row: u64, path: String },
    #[error("row {row}: unknown class {class:?} (declared: {declared:?})")]
    UnknownClass {
        row: u64,
        class: String,
        declared: Vec<String>,
    },
    #[error("row {row}: missing field {field:?}")]
    MissingField { row: u64, field: &'static str },
    #[error("{subjects} subjects cannot fill {splits} splits")]
    TooFewSubjects { subjects: usize, splits: usize },
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("split file does not assign subject {0:?}")]
    UnassignedSubject(String),
    #[error("image {source_name}: {detail}")]
    Image { source_name: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
