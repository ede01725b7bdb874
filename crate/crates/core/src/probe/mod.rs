//! Softmax linear probe trained on frozen feature vectors.
//!
//! There is deliberately no weight decay or augmentation: the update rule
//! uses only the cross-entropy gradient and a momentum buffer.

mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureRecord;
use crate::graph::WeightStore;
use crate::tensor::Tensor;

pub use train::{train_probe, EpochStats, TrainTrace};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("a probe needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("feature length must be positive")]
    NoFeatures,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("feature length mismatch: expected {expected}, found {found}")]
    FeatureLength { expected: usize, found: usize },
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("probe container: {0}")]
    Container(String),
}

/// Row-major feature matrix with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    n_features: usize,
    data: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(n_features: usize, data: Vec<f32>, labels: Vec<usize>) -> Result<Self, ProbeError> {
        if n_features == 0 {
            return Err(ProbeError::NoFeatures);
        }
        if data.len() != n_features * labels.len() {
            return Err(ProbeError::FeatureLength {
                expected: n_features * labels.len(),
                found: data.len(),
            });
        }
        Ok(Self {
            n_features,
            data,
            labels,
        })
    }

    pub fn from_records<'a>(n_features: usize, records: impl IntoIterator<Item = &'a FeatureRecord>) -> Result<Self, ProbeError> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for r in records {
            if r.vector.len() != n_features {
                return Err(ProbeError::FeatureLength {
                    expected: n_features,
                    found: r.vector.len(),
                });
            }
            data.extend_from_slice(&r.vector);
            labels.push(r.label as usize);
        }
        Self::new(n_features, data, labels)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f32], usize)> {
        self.data.chunks(self.n_features).zip(self.labels.iter().copied())
    }
}

/// Per-dimension affine map `(x - mean) / std` fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(features: &LabeledFeatures) -> Self {
        let n = features.n_features();
        let count = features.len().max(1) as f64;
        let mut mean = vec![0.0f64; n];
        for (row, _) in features.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0f64; n];
        for (row, _) in features.rows() {
            for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
                *v += (x as f64 - m).powi(2);
            }
        }
        // Constant dimensions keep unit scale.
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s > 1e-12 {
                    s as f32
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, features: &LabeledFeatures) -> LabeledFeatures {
        let mut out = features.clone();
        for row in out.data.chunks_mut(features.n_features) {
            self.apply_row(row);
        }
        out
    }

    fn apply_row(&self, row: &mut [f32]) {
        for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }
}

/// Weights `(K, N)`, bias `(K)`, and an optional input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Tensor,
    pub bias: Tensor,
    pub standardizer: Option<Standardizer>,
}

impl ProbeModel {
    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Logits accumulated in `f64` with a fixed summation order.
    pub fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        let n = self.n_features();
        for ((o, row), &b) in out.iter_mut().zip(self.weights.data().chunks(n)).zip(self.bias.data()) {
            *o = dot_f64(row, x) + b as f64;
        }
    }

    /// Predicted class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut logits = vec![0.0; self.num_classes()];
        match &self.standardizer {
            Some(st) => {
                let mut row = x.to_vec();
                st.apply_row(&mut row);
                self.logits_into(&row, &mut logits);
            }
            None => self.logits_into(x, &mut logits),
        }
        argmax(&logits)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        store.insert("probe.W", self.weights.clone());
        store.insert("probe.b", self.bias.clone());
        if let Some(st) = &self.standardizer {
            store.insert("probe.mean", Tensor::from_vec(st.mean.clone()));
            store.insert("probe.std", Tensor::from_vec(st.std.clone()));
        }
        store
    }

    pub fn from_store(store: &WeightStore) -> Result<Self, ProbeError> {
        let get = |k: &str| store.get(k).cloned().ok_or_else(|| ProbeError::Container(format!("missing tensor {k:?}")));
        let weights = get("probe.W")?;
        let bias = get("probe.b")?;
        let [k, n] = weights.shape() else {
            return Err(ProbeError::Container(format!("probe.W has shape {:?}", weights.shape())));
        };
        if bias.shape() != [*k] {
            return Err(ProbeError::Container(format!("probe.b has shape {:?}", bias.shape())));
        }
        let standardizer = match (store.get("probe.mean"), store.get("probe.std")) {
            (Some(m), Some(s)) if m.shape() == [*n] && s.shape() == [*n] => Some(Standardizer {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            }),
            (None, None) => None,
            _ => return Err(ProbeError::Container("incomplete standardizer".into())),
        };
        Ok(Self {
            weights,
            bias,
            standardizer,
        })
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Hyperparameters for probe training. No regularization term exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub momentum: f32,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 50,
            seed: 0,
            momentum: 0.9,
            standardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::Config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ProbeError::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ProbeError::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// `W ~ U(-a, a)` with `a = sqrt(6 / (K + N))`, zero bias.
pub fn init_probe(classes: usize, n_features: usize, seed: u64) -> Result<ProbeModel, ProbeError> {
    init_with(classes, n_features, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn init_with(classes: usize, n_features: usize, rng: &mut impl Rng) -> Result<ProbeModel, ProbeError> {
    if classes < 2 {
        return Err(ProbeError::TooFewClasses(classes));
    }
    if n_features == 0 {
        return Err(ProbeError::NoFeatures);
    }
    let a = (6.0 / (classes + n_features) as f64).sqrt() as f32;
    let data = (0..classes * n_features).map(|_| rng.gen_range(-a..a)).collect();
    Ok(ProbeModel {
        weights: Tensor::new(vec![classes, n_features], data).expect("shape"),
        bias: Tensor::zeros(vec![classes]),
        standardizer: None,
    })
}

/// Mean cross-entropy and its exact gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Softmax cross-entropy over a `(B, N)` batch: loss is
/// `-(1/B) sum log softmax(W x_i + b)[y_i]`, gradients are the averaged
/// `(p - onehot(y)) x^T` and `p - onehot(y)`.
pub fn cross_entropy_grad(model: &ProbeModel, batch: &Tensor, labels: &[usize]) -> Result<Gradient, ProbeError> {
    let n = model.n_features();
    let &[b, bn] = batch.shape() else {
        return Err(ProbeError::FeatureLength {
            expected: n,
            found: batch.len(),
        });
    };
    if bn != n {
        return Err(ProbeError::FeatureLength { expected: n, found: bn });
    }
    if labels.len() != b {
        return Err(ProbeError::Config(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut gw = vec![0.0f32; model.weights.len()];
    let mut gb = vec![0.0f32; model.num_classes()];
    let rows = batch.data().chunks(n).zip(labels.iter().copied());
    let loss = accumulate_grad(model, rows, b, &mut gw, &mut gb)?;
    Ok(Gradient {
        loss,
        weights: Tensor::new(model.weights.shape().to_vec(), gw).expect("shape"),
        bias: Tensor::from_vec(gb),
    })
}

/// Adds the batch-mean gradient into `gw`/`gb` (which must start zeroed) and returns the mean loss.
pub(crate) fn accumulate_grad<'a>(
    model: &ProbeModel,
    rows: impl Iterator<Item = (&'a [f32], usize)>,
    batch_len: usize,
    gw: &mut [f32],
    gb: &mut [f32],
) -> Result<f64, ProbeError> {
    let k = model.num_classes();
    let n = model.n_features();
    let scale = 1.0 / batch_len as f64;
    let mut logits = vec![0.0f64; k];
    let mut loss = 0.0f64;
    for (x, y) in rows {
        if y >= k {
            return Err(ProbeError::LabelOutOfRange { label: y, classes: k });
        }
        model.logits_into(x, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[y];
        for (c, (grow, gbc)) in gw.chunks_mut(n).zip(gb.iter_mut()).enumerate() {
            let p = (logits[c] - lse).exp();
            let coeff = ((p - if c == y { 1.0 } else { 0.0 }) * scale) as f32;
            *gbc += coeff;
            for (g, &xv) in grow.iter_mut().zip(x) {
                *g += coeff * xv;
            }
        }
    }
    Ok(loss * scale)
}

/// `f64` dot product over eight interleaved partial sums, combined in lane order.
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] as f64 * y[l] as f64;
        }
    }
    for (l, (&x, &y)) in ta.iter().zip(tb).enumerate() {
        lanes[l] += x as f64 * y as f64;
    }
    lanes.iter().sum()
}

/// Accuracy and a `K x K` confusion matrix (rows: true class, columns: predicted).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(model: &ProbeModel, features: &LabeledFeatures) -> Result<Evaluation, ProbeError> {
    if features.is_empty() {
        return Err(ProbeError::Empty("evaluation"));
    }
    if features.n_features() != model.n_features() {
        return Err(ProbeError::FeatureLength {
            expected: model.n_features(),
            found: features.n_features(),
        });
    }
    let k = model.num_classes();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut correct = 0;
    for (x, y) in features.rows() {
        if y >= k {
            return Err(ProbeError::LabelOutOfRange { label: y, classes: k });
        }
        let pred = model.predict(x);
        confusion[y][pred] += 1;
        correct += usize::from(pred == y);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / features.len() as f64,
        correct,
        total: features.len(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = init_probe(3, 10, 5).unwrap();
        assert_eq!(a, init_probe(3, 10, 5).unwrap());
        assert_ne!(a, init_probe(3, 10, 6).unwrap());
        assert!(a.bias.data().iter().all(|&b| b == 0.0));
        let bound = (6.0f32 / 13.0).sqrt();
        assert!(a.weights.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_rejects_single_class() {
        assert!(matches!(init_probe(1, 4, 0), Err(ProbeError::TooFewClasses(1))));
    }

    #[test]
    fn uniform_prediction_loss_is_ln2() {
        let model = ProbeModel {
            weights: Tensor::zeros(vec![2, 3]),
            bias: Tensor::zeros(vec![2]),
            standardizer: None,
        };
        let batch = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let g = cross_entropy_grad(&model, &batch, &[0, 0]).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.bias.data(), [-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range() {
        let model = init_probe(2, 2, 0).unwrap();
        let batch = Tensor::zeros(vec![1, 2]);
        assert!(matches!(
            cross_entropy_grad(&model, &batch, &[2]),
            Err(ProbeError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn perfect_model_scores_one() {
        // Class c is the coordinate with the largest value.
        let model = ProbeModel {
            weights: Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(vec![3]),
            standardizer: None,
        };
        let f = LabeledFeatures::new(3, vec![5.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 9.0], vec![0, 1, 2]).unwrap();
        let ev = evaluate(&model, &f).unwrap();
        assert_eq!(ev.accuracy, 1.0);
        assert_eq!(ev.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        let model = init_probe(2, 2, 0).unwrap();
        let f = LabeledFeatures::new(2, vec![], vec![]).unwrap();
        assert!(matches!(evaluate(&model, &f), Err(ProbeError::Empty(_))));
    }

    #[test]
    fn store_round_trip() {
        let mut m = init_probe(3, 4, 9).unwrap();
        m.standardizer = Some(Standardizer {
            mean: vec![0.0, 1.0, 2.0, 3.0],
            std: vec![1.0, 2.0, 3.0, 4.0],
        });
        let bytes = m.to_store().to_bytes().unwrap();
        let back = ProbeModel::from_store(&WeightStore::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
