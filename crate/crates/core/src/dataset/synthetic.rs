//! Procedural three-class texture dataset.
//!
//! Families: cell mosaic (jittered bright blobs on a dark ground), oriented
//! filaments (thin ridges from superposed oriented cosines), and a granular
//! smoothed-noise field. Each subject draws its own brightness, contrast,
//! orientation bias and blob density so images cluster by subject.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_manifest, DatasetError, DatasetManifest};
use crate::par::*;

pub const TISSUE_CLASSES: [&str; 3] = ["epithelium", "snp", "stroma"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub subjects: usize,
    pub images_per_subject: usize,
    /// Overrides `images_per_subject`, spreading this many images as evenly as possible.
    pub total_images: Option<usize>,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            subjects: 11,
            images_per_subject: 100,
            total_images: None,
            size: 64,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn per_subject_counts(&self) -> Vec<usize> {
        match self.total_images {
            Some(total) => {
                let base = total / self.subjects.max(1);
                let extra = total % self.subjects.max(1);
                (0..self.subjects).map(|i| base + usize::from(i < extra)).collect()
            }
            None => vec![self.images_per_subject; self.subjects],
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.classes == 0 || self.classes > TISSUE_CLASSES.len() {
            return Err(DatasetError::Invalid(format!("classes must be in 1..=3, got {}", self.classes)));
        }
        if self.subjects == 0 || self.size < 8 {
            return Err(DatasetError::Invalid("need at least one subject and size >= 8".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct SubjectStyle {
    brightness: f32,
    contrast: f32,
    orientation: f32,
    density: f32,
}

impl SubjectStyle {
    fn draw(seed: u64, subject: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(subject as u64);
        Self {
            brightness: rng.gen_range(-0.06..0.06),
            contrast: rng.gen_range(0.85..1.15),
            orientation: rng.gen_range(0.0..PI),
            density: rng.gen_range(0.8..1.25),
        }
    }
}

fn mosaic(size: usize, style: &SubjectStyle, rng: &mut impl Rng) -> Vec<f32> {
    let spacing = 7.0 / style.density;
    let sigma = spacing * 0.22;
    let (ox, oy) = (rng.gen_range(0.0..spacing), rng.gen_range(0.0..spacing));
    let n = (size as f32 / spacing).ceil() as i32 + 2;
    let mut centers = Vec::new();
    for gy in -1..n {
        for gx in -1..n {
            let jitter = spacing * 0.25;
            centers.push((
                gx as f32 * spacing + ox + rng.gen_range(-jitter..jitter),
                gy as f32 * spacing + oy + rng.gen_range(-jitter..jitter),
                rng.gen_range(0.55..0.8f32),
            ));
        }
    }
    let cutoff = (3.0 * sigma).powi(2);
    let mut out = vec![0.08f32; size * size];
    for (i, v) in out.iter_mut().enumerate() {
        let (x, y) = ((i % size) as f32, (i / size) as f32);
        for &(cx, cy, amp) in &centers {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            if d2 < cutoff {
                *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    out
}

fn filaments(size: usize, style: &SubjectStyle, rng: &mut impl Rng) -> Vec<f32> {
    let lines: Vec<(f32, f32, f32, f32, f32, f32)> = (0..rng.gen_range(3..6))
        .map(|_| {
            let theta = style.orientation + rng.gen_range(-0.3..0.3);
            (
                theta,
                rng.gen_range(1.0 / 9.0..1.0 / 5.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.4..0.6),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(1.0..2.5),
            )
        })
        .collect();
    let mut out = vec![0.15f32; size * size];
    for (i, v) in out.iter_mut().enumerate() {
        let (x, y) = ((i % size) as f32, (i / size) as f32);
        for &(theta, freq, phase, amp, wphase, wamp) in &lines {
            let (s, c) = theta.sin_cos();
            let along = -x * s + y * c;
            let across = x * c + y * s + wamp * (0.12 * along + wphase).sin();
            *v += amp * (2.0 * PI * freq * across + phase).cos().max(0.0).powi(6);
        }
    }
    out
}

fn granular(size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut field: Vec<f32> = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    for _ in 0..2 {
        let src = field.clone();
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (xx, yy) = (x as i32 + dx, y as i32 + dy);
                        if xx >= 0 && yy >= 0 && (xx as usize) < size && (yy as usize) < size {
                            acc += src[yy as usize * size + xx as usize];
                            n += 1.0;
                        }
                    }
                }
                field[y * size + x] = acc / n;
            }
        }
    }
    field.iter().map(|&v| 0.42 + (v - 0.5) * 1.6).collect()
}

/// Renders one 8-bit grayscale texture of the given class for a subject.
pub fn render_texture(class: usize, subject: usize, index: usize, size: usize, seed: u64) -> Vec<u8> {
    let style = SubjectStyle::draw(seed, subject);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64 + 1) << 32) | index as u64);
    let raw = match class {
        0 => mosaic(size, &style, &mut rng),
        1 => filaments(size, &style, &mut rng),
        _ => granular(size, &mut rng),
    };
    raw.into_iter()
        .map(|v| {
            let noise = (rng.gen_range(0.0..1.0f32) + rng.gen_range(0.0..1.0f32) + rng.gen_range(0.0..1.0f32) - 1.5) * 0.05;
            let v = (v - 0.3) * style.contrast + 0.3 + style.brightness + noise;
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

/// Writes PNG images under `out_dir/images/` and `out_dir/manifest.csv`.
///
/// Image `i` of a subject has class `i % classes`. Output is byte-identical
/// for a given configuration.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    config.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(DatasetError::io(&images_dir))?;
    let mut jobs = Vec::new();
    for (subject, &count) in config.per_subject_counts().iter().enumerate() {
        for index in 0..count {
            jobs.push((subject, index, index % config.classes));
        }
    }
    let rows: Result<Vec<String>, DatasetError> = jobs
        .par_iter()
        .map(|&(subject, index, class)| {
            let pixels = render_texture(class, subject, index, config.size, config.seed);
            let rel = format!("images/s{:02}_{:05}_{}.png", subject + 1, index, TISSUE_CLASSES[class]);
            let img = GrayImage::from_raw(config.size as u32, config.size as u32, pixels).expect("size matches");
            let path = out_dir.join(&rel);
            img.save_with_format(&path, ImageFormat::Png).map_err(|e| DatasetError::Image {
                source_name: path.display().to_string(),
                detail: e.to_string(),
            })?;
            Ok(format!("{rel},subject{:02},{}\n", subject + 1, TISSUE_CLASSES[class]))
        })
        .collect();
    let mut csv = String::from("path,subject_id,class\n");
    rows?.iter().for_each(|r| csv.push_str(r));
    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, &csv).map_err(DatasetError::io(&manifest_path))?;
    let classes: Vec<String> = TISSUE_CLASSES[..config.classes].iter().map(|s| s.to_string()).collect();
    parse_manifest(&csv, out_dir, Some(&classes))
}
