use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::DatasetError;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// Path as written in the manifest.
    pub path: String,
    /// `path` resolved against the manifest directory.
    pub resolved: PathBuf,
    pub subject_id: String,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn class_name(&self, label: u16) -> &str {
        &self.class_names[label as usize]
    }

    /// Distinct subjects with their image counts, ordered by subject id.
    pub fn subject_counts(&self) -> Vec<(String, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.subject_id.as_str()).or_insert(0usize) += 1;
        }
        counts.into_iter().map(|(s, c)| (s.to_string(), c)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "subject_id", "class"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([r.path.as_str(), r.subject_id.as_str(), self.class_name(r.label)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[derive(Deserialize)]
struct Row {
    path: Option<String>,
    subject_id: Option<String>,
    class: Option<String>,
}

/// Reads a `path,subject_id,class` CSV. Relative paths resolve against the
/// manifest's directory. Without declared classes, the sorted distinct class
/// names become the label order.
pub fn load_manifest(path: &Path, classes: Option<&[String]>) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(DatasetError::io(path))?;
    let root = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, root, classes)
}

pub fn parse_manifest(text: &str, root: &Path, classes: Option<&[String]>) -> Result<DatasetManifest, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DatasetError::Row {
        row: 1,
        detail: e.to_string(),
    })?;
    for field in ["path", "subject_id", "class"] {
        if !headers.iter().any(|h| h == field) {
            return Err(DatasetError::MissingField { row: 1, field });
        }
    }
    let mut rows = Vec::new();
    for result in reader.deserialize::<Row>() {
        rows.push(result.map_err(|e| DatasetError::Row {
            row: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?);
    }
    let row_no = |i: usize| i as u64 + 2;
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let field = |v: Option<String>, field: &'static str| {
            v.filter(|s| !s.is_empty()).ok_or(DatasetError::MissingField { row: row_no(i), field })
        };
        parsed.push((field(r.path, "path")?, field(r.subject_id, "subject_id")?, field(r.class, "class")?));
    }
    let class_names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => parsed.iter().map(|(_, _, c)| c.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    if class_names.len() > u16::MAX as usize {
        return Err(DatasetError::Invalid("too many classes".into()));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(parsed.len());
    for (i, (path, subject_id, class)) in parsed.into_iter().enumerate() {
        let label = class_names
            .iter()
            .position(|c| *c == class)
            .ok_or_else(|| DatasetError::UnknownClass {
                row: row_no(i),
                class: class.clone(),
                declared: class_names.clone(),
            })?;
        if !seen.insert(path.clone()) {
            return Err(DatasetError::DuplicatePath { row: row_no(i), path });
        }
        records.push(ManifestRecord {
            resolved: root.join(&path),
            path,
            subject_id,
            label: label as u16,
        });
    }
    Ok(DatasetManifest { class_names, records })
}
