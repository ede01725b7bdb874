//! `CPFC` feature cache.
//!
//! ```text
//! "CPFC" | version u32
//! header: model str16 | cut_point str16 | vector_len u32 | record_count u32
//! per record: image_id str16 | subject_id str16 | label u16 | f32 * vector_len
//! crc32 u32 over all preceding bytes
//! ```
//! `str16` is a `u16` byte length followed by UTF-8. Little-endian throughout.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::FeatureRecord;
use crate::codec::{FormatError, Reader, Writer};

pub const CACHE_MAGIC: &[u8; 4] = b"CPFC";
pub const CACHE_VERSION: u32 = 1;

/// All feature vectors of one (model, cut-point) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub model: String,
    pub cut_point: String,
    pub vector_len: usize,
    pub records: Vec<FeatureRecord>,
}

impl FeatureSet {
    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::new(CACHE_MAGIC, CACHE_VERSION);
        w.str16(&self.model)?;
        w.str16(&self.cut_point)?;
        let len = u32::try_from(self.vector_len).map_err(|_| FormatError::Invalid("vector length exceeds u32".into()))?;
        let count = u32::try_from(self.records.len()).map_err(|_| FormatError::Invalid("record count exceeds u32".into()))?;
        w.u32(len);
        w.u32(count);
        for r in &self.records {
            if r.vector.len() != self.vector_len {
                return Err(FormatError::Invalid(format!(
                    "record {:?} has {} values, header says {}",
                    r.image_id,
                    r.vector.len(),
                    self.vector_len
                )));
            }
            w.str16(&r.image_id)?;
            w.str16(&r.subject_id)?;
            w.u16(r.label);
            w.f32s(&r.vector);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(bytes, CACHE_MAGIC, CACHE_VERSION)?;
        let model = r.str16("model name")?;
        let cut_point = r.str16("cut-point label")?;
        let vector_len = r.u32("vector length")? as usize;
        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let image_id = r.str16("image id")?;
            let subject_id = r.str16("subject id")?;
            let label = r.u16("label")?;
            let vector = r.f32s(vector_len, "feature values")?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::Invalid(format!("record {image_id:?} has non-finite values")));
            }
            records.push(FeatureRecord {
                image_id,
                subject_id,
                label,
                vector,
            });
        }
        r.finish()?;
        Ok(Self {
            model,
            cut_point,
            vector_len,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("cpfc.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Hex SHA-256 over length-prefixed parts; used to name cache files.
pub fn cache_key<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}
