use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, ManifestRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Eval, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Target image fractions for (train, eval, test).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitFractions([f64; 3]);

impl SplitFractions {
    pub fn new(fractions: [f64; 3]) -> Result<Self, DatasetError> {
        if fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(DatasetError::Fractions(format!("{fractions:?} must all be positive")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Fractions(format!("{fractions:?} sum to {sum}, not 1")));
        }
        Ok(Self(fractions))
    }

    pub fn get(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self([0.83, 0.07, 0.10])
    }
}

impl TryFrom<[f64; 3]> for SplitFractions {
    type Error = DatasetError;
    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SplitFractions> for [f64; 3] {
    fn from(f: SplitFractions) -> Self {
        f.0
    }
}

/// Subject-to-split map; records inherit their subject's split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    subjects: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn new(subjects: BTreeMap<String, Split>) -> Self {
        Self { subjects }
    }

    pub fn subjects(&self) -> &BTreeMap<String, Split> {
        &self.subjects
    }

    pub fn split_of(&self, subject: &str) -> Option<Split> {
        self.subjects.get(subject).copied()
    }

    pub fn records<'m>(&self, manifest: &'m DatasetManifest, split: Split) -> Vec<&'m ManifestRecord> {
        manifest
            .records
            .iter()
            .filter(|r| self.split_of(&r.subject_id) == Some(split))
            .collect()
    }

    /// Image counts per split, indexed by [`Split::index`].
    pub fn counts(&self, manifest: &DatasetManifest) -> [usize; 3] {
        let mut c = [0; 3];
        for r in &manifest.records {
            if let Some(s) = self.split_of(&r.subject_id) {
                c[s.index()] += 1;
            }
        }
        c
    }

    pub fn achieved_fractions(&self, manifest: &DatasetManifest) -> [f64; 3] {
        let c = self.counts(manifest);
        let total = manifest.records.len().max(1) as f64;
        c.map(|n| n as f64 / total)
    }

    /// Fails if any manifest subject is unassigned.
    pub fn check_covers(&self, manifest: &DatasetManifest) -> Result<(), DatasetError> {
        for (s, _) in manifest.subject_counts() {
            if !self.subjects.contains_key(&s) {
                return Err(DatasetError::UnassignedSubject(s));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject_id", "split"]).expect("in-memory write");
        for (s, split) in &self.subjects {
            w.write_record([s.as_str(), split.as_str()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Greedy subject-level assignment.
///
/// Subjects are shuffled with `seed`, then stably sorted by descending image
/// count. Each goes to the split with the largest shortfall
/// `target * total - assigned` (lowest split index on ties). Once the
/// remaining subjects are only just enough to give every empty split one
/// subject, they are steered to the empty splits.
pub fn greedy_split(counts: &[(String, usize)], fractions: SplitFractions, seed: u64) -> Result<SplitAssignment, DatasetError> {
    if counts.len() < Split::ALL.len() {
        return Err(DatasetError::TooFewSubjects {
            subjects: counts.len(),
            splits: Split::ALL.len(),
        });
    }
    let mut order: Vec<&(String, usize)> = counts.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.cmp(&a.1));

    let total: usize = counts.iter().map(|(_, c)| c).sum();
    let targets = fractions.get().map(|f| f * total as f64);
    let mut assigned = [0usize; 3];
    let mut members = [0usize; 3];
    let mut subjects = BTreeMap::new();
    for (i, (subject, count)) in order.iter().enumerate() {
        let remaining = order.len() - i;
        let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
        let candidates: Vec<usize> = if remaining <= empty.len() { empty } else { (0..3).collect() };
        let mut best = candidates[0];
        for &s in &candidates[1..] {
            if targets[s] - assigned[s] as f64 > targets[best] - assigned[best] as f64 {
                best = s;
            }
        }
        assigned[best] += count;
        members[best] += 1;
        subjects.insert(subject.clone(), Split::ALL[best]);
    }
    Ok(SplitAssignment { subjects })
}

pub fn split_by_subject(manifest: &DatasetManifest, fractions: SplitFractions, seed: u64) -> Result<SplitAssignment, DatasetError> {
    greedy_split(&manifest.subject_counts(), fractions, seed)
}

/// Reads a `subject_id,split` CSV.
pub fn read_split_file(path: &Path) -> Result<SplitAssignment, DatasetError> {
    let text = fs::read_to_string(path).map_err(DatasetError::io(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DatasetError::Row {
        row: 1,
        detail: e.to_string(),
    })?;
    for field in ["subject_id", "split"] {
        if !headers.iter().any(|h| h == field) {
            return Err(DatasetError::MissingField { row: 1, field });
        }
    }
    #[derive(Deserialize)]
    struct Row {
        subject_id: String,
        split: String,
    }
    let mut subjects = BTreeMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row_no = i as u64 + 2;
        let row = row.map_err(|e| DatasetError::Row {
            row: row_no,
            detail: e.to_string(),
        })?;
        let split = row.split.parse().map_err(|e: DatasetError| DatasetError::Row {
            row: row_no,
            detail: e.to_string(),
        })?;
        if subjects.insert(row.subject_id.clone(), split).is_some() {
            return Err(DatasetError::Row {
                row: row_no,
                detail: format!("subject {:?} listed twice", row.subject_id),
            });
        }
    }
    Ok(SplitAssignment { subjects })
}

pub fn write_split_file(path: &Path, split: &SplitAssignment) -> Result<(), DatasetError> {
    fs::write(path, split.to_csv()).map_err(DatasetError::io(path))
}
