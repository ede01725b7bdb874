//! Cut-point activations to fixed-budget feature vectors.
//!
//! Spatial activations `(C, H, W)` are adaptively max-pooled to a square
//! `s x s` grid, where `s` is the largest side keeping `C * s * s` within the
//! budget, then flattened. Flat activations (fully connected cut-points)
//! are used as they are.

mod cache;

use thiserror::Error;

use crate::graph::{forward, GraphError, ModelGraph, WeightStore};
use crate::par::*;
use crate::tensor::{Tensor, TensorError};

pub use cache::{cache_key, FeatureSet, CACHE_MAGIC, CACHE_VERSION};

pub const DEFAULT_BUDGET: usize = 8000;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("image {image_id:?}: {source}")]
    Forward {
        image_id: String,
        #[source]
        source: GraphError,
    },
    #[error("adaptive pool side {side} out of range 1..={max} for input {shape:?}")]
    PoolSide { side: usize, max: usize, shape: Vec<usize> },
    #[error("cut-point activation has unsupported shape {0:?}")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("feature budget must be at least 1")]
    ZeroBudget,
    #[error("loading image {image_id:?}: {detail}")]
    Load { image_id: String, detail: String },
    #[error("image {image_id:?}: non-finite feature values")]
    NonFinite { image_id: String },
    #[error("feature cache: {0}")]
    Cache(#[from] crate::codec::FormatError),
}

/// Upper bound on the number of values per feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureBudget(usize);

impl FeatureBudget {
    pub fn new(max_values: usize) -> Result<Self, FeatureError> {
        if max_values == 0 {
            return Err(FeatureError::ZeroBudget);
        }
        Ok(Self(max_values))
    }

    pub fn max_values(self) -> usize {
        self.0
    }
}

impl Default for FeatureBudget {
    fn default() -> Self {
        Self(DEFAULT_BUDGET)
    }
}

/// Largest square side `s` with `C * s * s <= budget`, at least 1, at most `min(H, W)`.
///
/// When `C` alone exceeds the budget the result is 1 and the vector will be
/// over budget; a warning is logged.
pub fn compute_pool_geometry((c, h, w): (usize, usize, usize), budget: FeatureBudget) -> usize {
    let per_channel = budget.max_values() / c.max(1);
    let mut s = (per_channel as f64).sqrt() as usize;
    while s > 0 && c * s * s > budget.max_values() {
        s -= 1;
    }
    while c * (s + 1) * (s + 1) <= budget.max_values() {
        s += 1;
    }
    if s == 0 {
        log::warn!(
            "{c} channels exceed the feature budget of {}; pooling to 1x1 gives {c} values",
            budget.max_values()
        );
    }
    s.max(1).min(h.min(w))
}

/// Bin `[floor(i*n/s), ceil((i+1)*n/s))` along an axis of length `n`.
#[inline]
pub fn adaptive_bin(i: usize, n: usize, s: usize) -> (usize, usize) {
    (i * n / s, ((i + 1) * n).div_ceil(s))
}

/// Max over each cell of an `s x s` partition of the spatial plane.
pub fn adaptive_maxpool(input: &Tensor, side: usize) -> Result<Tensor, FeatureError> {
    let (c, h, w) = input.chw("adaptive_maxpool")?;
    if side == 0 || side > h.min(w) {
        return Err(FeatureError::PoolSide {
            side,
            max: h.min(w),
            shape: input.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(c * side * side);
    for plane in input.data().chunks(h * w) {
        for i in 0..side {
            let (r0, r1) = adaptive_bin(i, h, side);
            for j in 0..side {
                let (c0, c1) = adaptive_bin(j, w, side);
                let mut m = f32::NEG_INFINITY;
                for y in r0..r1 {
                    for &v in &plane[y * w + c0..y * w + c1] {
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Ok(Tensor::new(vec![c, side, side], out)?)
}

/// A preprocessed network input with its dataset metadata.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image_id: String,
    pub subject_id: String,
    pub label: u16,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub subject_id: String,
    pub label: u16,
    pub vector: Vec<f32>,
}

/// A network truncated at one cut-point, plus its pooling plan.
pub struct FeatureExtractor<'w> {
    graph: ModelGraph,
    weights: &'w WeightStore,
    cut_point: String,
    pool_side: Option<usize>,
    feature_len: usize,
}

impl<'w> FeatureExtractor<'w> {
    pub fn new(graph: &ModelGraph, weights: &'w WeightStore, cut_point: &str, budget: FeatureBudget) -> Result<Self, FeatureError> {
        let graph = graph.truncate_at(cut_point)?;
        weights.validate(&graph)?;
        let (pool_side, feature_len) = plan_for_shape(&graph.output().output_shape, budget)?;
        Ok(Self {
            graph,
            weights,
            cut_point: cut_point.to_string(),
            pool_side,
            feature_len,
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn cut_point(&self) -> &str {
        &self.cut_point
    }

    /// Side of the square pooling grid; `None` for flat cut-points.
    pub fn pool_side(&self) -> Option<usize> {
        self.pool_side
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn features(&self, image: &Tensor) -> Result<Vec<f32>, FeatureError> {
        let act = forward(&self.graph, self.weights, image)?;
        Ok(match self.pool_side {
            Some(s) => adaptive_maxpool(&act, s)?.into_data(),
            None => act.into_data(),
        })
    }

    fn record(&self, img: &LabeledImage) -> Result<FeatureRecord, FeatureError> {
        let vector = self.features(&img.tensor).map_err(|e| match e {
            FeatureError::Graph(source) => FeatureError::Forward {
                image_id: img.image_id.clone(),
                source,
            },
            other => other,
        })?;
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::NonFinite {
                image_id: img.image_id.clone(),
            });
        }
        Ok(FeatureRecord {
            image_id: img.image_id.clone(),
            subject_id: img.subject_id.clone(),
            label: img.label,
            vector,
        })
    }
}

/// Pool side and resulting vector length for a cut-point activation shape.
pub fn plan_for_shape(shape: &[usize], budget: FeatureBudget) -> Result<(Option<usize>, usize), FeatureError> {
    match *shape {
        [c, h, w] => {
            let s = compute_pool_geometry((c, h, w), budget);
            Ok((Some(s), c * s * s))
        }
        [n] => Ok((None, n)),
        _ => Err(FeatureError::Shape(shape.to_vec())),
    }
}

/// Extracts features for every image; results come back in input order.
pub fn extract_features(extractor: &FeatureExtractor<'_>, images: &[LabeledImage]) -> Result<Vec<FeatureRecord>, FeatureError> {
    images.par_iter().map(|img| extractor.record(img)).collect()
}

/// As [`extract_features`], loading each item lazily in `chunk`-sized batches
/// so only one batch of decoded inputs is held in memory.
pub fn extract_features_with<T, F>(
    extractor: &FeatureExtractor<'_>,
    items: &[T],
    chunk: usize,
    load: F,
) -> Result<Vec<FeatureRecord>, FeatureError>
where
    T: Sync,
    F: Fn(&T) -> Result<LabeledImage, FeatureError> + Sync,
{
    let mut out = Vec::with_capacity(items.len());
    for batch in items.chunks(chunk.max(1)) {
        let recs: Result<Vec<_>, _> = batch
            .par_iter()
            .map(|item| load(item).and_then(|img| extractor.record(&img)))
            .collect();
        out.extend(recs?);
    }
    Ok(out)
}
