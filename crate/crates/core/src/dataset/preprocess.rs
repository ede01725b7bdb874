use std::path::Path;

use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::tensor::Tensor;

/// Per-channel `(x - mean) / std` applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping (no antialiasing).
pub fn resize_bilinear(plane: &[f32], (h, w): (usize, usize), (th, tw): (usize, usize)) -> Vec<f32> {
    if (h, w) == (th, tw) {
        return plane.to_vec();
    }
    let axis = |out: usize, len_in: usize, len_out: usize| {
        let scale = len_in as f64 / len_out as f64;
        let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len_in - 1);
        (lo, hi, (src - lo as f64) as f32)
    };
    let cols: Vec<_> = (0..tw).map(|x| axis(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = axis(y, h, th);
        for &(x0, x1, fx) in &cols {
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Decodes an 8-bit grayscale or RGB image into a normalized `(C, H, W)` tensor.
///
/// Grayscale is replicated across three target channels. A single-channel
/// target accepts grayscale only.
pub fn preprocess_image(bytes: &[u8], target: [usize; 3], norm: &Normalization) -> Result<Tensor, DatasetError> {
    preprocess_named(bytes, target, norm, "<memory>")
}

pub fn load_image_tensor(path: &Path, target: [usize; 3], norm: &Normalization) -> Result<Tensor, DatasetError> {
    let bytes = std::fs::read(path).map_err(DatasetError::io(path))?;
    preprocess_named(&bytes, target, norm, &path.display().to_string())
}

fn preprocess_named(bytes: &[u8], [c, th, tw]: [usize; 3], norm: &Normalization, name: &str) -> Result<Tensor, DatasetError> {
    let err = |detail: String| DatasetError::Image {
        source_name: name.to_string(),
        detail,
    };
    let img = image::load_from_memory(bytes).map_err(|e| err(format!("cannot decode: {e}")))?;
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let planes: Vec<Vec<f32>> = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            vec![img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0).collect()]
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            (0..3)
                .map(|ch| rgb.pixels().map(|p| p.0[ch] as f32 / 255.0).collect())
                .collect()
        }
        other => return Err(err(format!("unsupported pixel format {:?}; expected 8-bit gray or RGB", other.color()))),
    };
    let planes = match (c, planes.len()) {
        (3, 1) => vec![planes[0].clone(), planes[0].clone(), planes[0].clone()],
        (3, 3) | (1, 1) => planes,
        (c, n) => return Err(err(format!("cannot map a {n}-channel image to {c} channels"))),
    };
    let mut data = Vec::with_capacity(c * th * tw);
    for (ch, plane) in planes.iter().enumerate() {
        let (m, s) = (norm.mean[ch], norm.std[ch]);
        data.extend(resize_bilinear(plane, (h, w), (th, tw)).into_iter().map(|v| (v - m) / s));
    }
    Tensor::new(vec![c, th, tw], data).map_err(|e| err(e.to_string()))
}
