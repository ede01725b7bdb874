//! Named tensor storage and the `CPWT` container.
//!
//! ```text
//! "CPWT" | version u32 | count u32
//! per tensor: name_len u16 | name utf8 | rank u8 | extents u32 * rank | f32 * numel
//! crc32 u32 over all preceding bytes
//! ```
//! All integers and floats are little-endian. Tensors are written in name order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GraphError, Layer, ModelGraph};
use crate::codec::{FormatError, Reader, Writer};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"CPWT";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Every weight slot of `graph` resolves with the declared shape.
    pub fn validate(&self, graph: &ModelGraph) -> Result<(), GraphError> {
        for (node, slot) in graph.weight_slots() {
            let t = self.get(&slot.key).ok_or_else(|| GraphError::MissingWeight {
                key: slot.key.clone(),
                node: node.id().to_string(),
            })?;
            if t.shape() != slot.shape.as_slice() {
                return Err(GraphError::WeightShape {
                    key: slot.key.clone(),
                    expected: slot.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Zero tensors for every slot of `graph`.
    pub fn zeros_for(graph: &ModelGraph) -> Self {
        let mut store = Self::new();
        for (_, slot) in graph.weight_slots() {
            store.insert(slot.key.clone(), Tensor::zeros(slot.shape.clone()));
        }
        store
    }

    /// Seeded random initialization: He-uniform conv kernels, Glorot-uniform
    /// linear weights, zero biases, and identity batch-norm statistics.
    pub fn random_for(graph: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for node in graph.nodes() {
            for (i, slot) in node.weights.iter().enumerate() {
                let n: usize = slot.shape.iter().product();
                let data: Vec<f32> = match (node.layer, i) {
                    (Layer::Conv { .. }, 0) => {
                        let fan_in: usize = slot.shape[1..].iter().product();
                        let a = (6.0 / fan_in as f64).sqrt() as f32;
                        (0..n).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    (Layer::Linear { .. }, 0) => {
                        let a = (6.0 / (slot.shape[0] + slot.shape[1]) as f64).sqrt() as f32;
                        (0..n).map(|_| rng.gen_range(-a..a)).collect()
                    }
                    // gamma and running_var
                    (Layer::BatchNorm { .. }, 0 | 3) => vec![1.0; n],
                    _ => vec![0.0; n],
                };
                store.insert(slot.key.clone(), Tensor::new(slot.shape.clone(), data).expect("slot shape"));
            }
        }
        store
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::new(WEIGHT_MAGIC, WEIGHT_VERSION);
        let count = u32::try_from(self.tensors.len()).map_err(|_| FormatError::Invalid("too many tensors".into()))?;
        w.u32(count);
        for (name, t) in &self.tensors {
            w.str16(name)?;
            let rank = u8::try_from(t.rank()).map_err(|_| FormatError::Invalid(format!("{name}: rank too large")))?;
            w.u8(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| FormatError::Invalid(format!("{name}: extent too large")))?;
                w.u32(d);
            }
            w.f32s(t.data());
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(bytes, WEIGHT_MAGIC, WEIGHT_VERSION)?;
        let count = r.u32("tensor count")?;
        let mut store = Self::new();
        for _ in 0..count {
            let name = r.str16("tensor name")?;
            let rank = r.u8("tensor rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("tensor extents").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| FormatError::Invalid(format!("{name}: extents overflow")))?;
            let data = r.f32s(numel, "tensor data")?;
            let t = Tensor::new(shape, data).map_err(|e| FormatError::Invalid(format!("{name}: {e}")))?;
            if store.insert(name.clone(), t).is_some() {
                return Err(FormatError::Invalid(format!("duplicate tensor name {name:?}")));
            }
        }
        r.finish()?;
        Ok(store)
    }
}

/// Parses a container and checks it against `graph`.
pub fn load_weights(container: &[u8], graph: &ModelGraph) -> Result<WeightStore, GraphError> {
    let store = WeightStore::from_bytes(container)?;
    store.validate(graph)?;
    Ok(store)
}
