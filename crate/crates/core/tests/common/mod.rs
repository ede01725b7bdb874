//! Reference implementations shared by the integration tests, written from
//! the textbook definitions with plain nested loops in `f64`. The suites
//! below run the crate's kernels against them.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cutprobe::dataset::{greedy_split, Split, SplitFractions};
use cutprobe::ops::{
    avgpool2d, batchnorm_infer, conv2d, linear, maxpool2d, BatchNormParams, ConvParams, PoolGeometry,
};
use cutprobe::probe::{cross_entropy_grad, ProbeModel};
use cutprobe::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, a: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

pub fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn max_abs(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    got.iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max)
}

pub fn out_extent(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

pub fn conv_oracle(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    wt: &[f32],
    (oc, kh, kw): (usize, usize, usize),
    bias: Option<&[f32]>,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> Vec<f64> {
    let ho = out_extent(h, kh, sh, ph);
    let wo = out_extent(w, kw, sw, pw);
    let mut out = vec![0.0; oc * ho * wo];
    for o in 0..oc {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for ci in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let y = (i * sh + a) as isize - ph as isize;
                            let xx = (j * sw + b) as isize - pw as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let v = x[(ci * h + y as usize) * w + xx as usize] as f64;
                            acc += v * wt[((o * c + ci) * kh + a) * kw + b] as f64;
                        }
                    }
                }
                out[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    out
}

/// Max or average over the real (unpadded) elements of each window.
pub fn pool_oracle(x: &[f32], (c, h, w): (usize, usize, usize), k: (usize, usize), s: (usize, usize), p: (usize, usize), max: bool) -> Vec<f64> {
    let ho = out_extent(h, k.0, s.0, p.0);
    let wo = out_extent(w, k.1, s.1, p.1);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut vals = Vec::new();
                for a in 0..k.0 {
                    for b in 0..k.1 {
                        let y = (i * s.0 + a) as isize - p.0 as isize;
                        let xx = (j * s.1 + b) as isize - p.1 as isize;
                        if y >= 0 && xx >= 0 && y < h as isize && xx < w as isize {
                            vals.push(x[(ci * h + y as usize) * w + xx as usize] as f64);
                        }
                    }
                }
                out.push(if max {
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                });
            }
        }
    }
    out
}

pub fn bn_oracle(x: &[f32], c: usize, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Vec<f64> {
    let per = x.len() / c;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i / per;
            gamma[ch] as f64 * (v as f64 - mean[ch] as f64) / (var[ch] as f64 + eps as f64).sqrt() + beta[ch] as f64
        })
        .collect()
}

pub fn linear_oracle(x: &[f32], wt: &[f32], bias: Option<&[f32]>, m: usize) -> Vec<f64> {
    let n = x.len();
    (0..m)
        .map(|r| (0..n).map(|i| wt[r * n + i] as f64 * x[i] as f64).sum::<f64>() + bias.map_or(0.0, |b| b[r] as f64))
        .collect()
}

/// Worst max-abs deviation per kernel over `cases` random cases each.
#[derive(Debug, Default)]
pub struct KernelSuite {
    pub cases: usize,
    pub worst: BTreeMap<&'static str, f64>,
}

impl KernelSuite {
    fn record(&mut self, name: &'static str, err: f64) {
        self.cases += 1;
        let e = self.worst.entry(name).or_insert(0.0);
        *e = e.max(err);
    }

    pub fn max_error(&self) -> f64 {
        self.worst.values().copied().fold(0.0, f64::max)
    }
}

pub fn kernel_suite(cases_per_kernel: usize, seed: u64) -> KernelSuite {
    let mut r = rng(seed);
    let mut suite = KernelSuite::default();
    for _ in 0..cases_per_kernel {
        // conv2d
        let c = r.gen_range(1..=4);
        let oc = r.gen_range(1..=5);
        let kh: usize = r.gen_range(1..=4);
        let kw: usize = r.gen_range(1..=4);
        let sh = r.gen_range(1..=3);
        let sw = r.gen_range(1..=3);
        let ph = r.gen_range(0..=2);
        let pw = r.gen_range(0..=2);
        let h = r.gen_range(kh.saturating_sub(2 * ph).max(1)..=9);
        let w = r.gen_range(kw.saturating_sub(2 * pw).max(1)..=9);
        let x = uniform(&mut r, c * h * w, 1.0);
        let wt = uniform(&mut r, oc * c * kh * kw, 1.0);
        let bias = r.gen_bool(0.5).then(|| uniform(&mut r, oc, 1.0));
        let want = conv_oracle(&x, (c, h, w), &wt, (oc, kh, kw), bias.as_deref(), (sh, sw), (ph, pw));
        let (xt, wtt) = (tensor(&[c, h, w], x), tensor(&[oc, c, kh, kw], wt));
        let bt = bias.map(|b| tensor(&[oc], b));
        let got = conv2d(
            &xt,
            &ConvParams {
                weights: &wtt,
                bias: bt.as_ref(),
                stride: (sh, sw),
                padding: (ph, pw),
            },
        )
        .unwrap();
        suite.record("conv2d", max_abs(got.data(), &want));

        // pools: padding < kernel, window fits
        for max in [true, false] {
            let c = r.gen_range(1..=4);
            let k: (usize, usize) = (r.gen_range(1..=4), r.gen_range(1..=4));
            let s = (r.gen_range(1..=3), r.gen_range(1..=3));
            let p = (r.gen_range(0..k.0), r.gen_range(0..k.1));
            let h = r.gen_range((k.0.saturating_sub(2 * p.0)).max(1)..=10);
            let w = r.gen_range((k.1.saturating_sub(2 * p.1)).max(1)..=10);
            let x = uniform(&mut r, c * h * w, 2.0);
            let want = pool_oracle(&x, (c, h, w), k, s, p, max);
            let xt = tensor(&[c, h, w], x);
            let geom = PoolGeometry {
                kernel: k,
                stride: s,
                padding: p,
            };
            let got = if max { maxpool2d(&xt, geom) } else { avgpool2d(&xt, geom) }.unwrap();
            suite.record(if max { "maxpool2d" } else { "avgpool2d" }, max_abs(got.data(), &want));
        }

        // batchnorm
        let c = r.gen_range(1..=6);
        let hw = r.gen_range(1..=20);
        let x = uniform(&mut r, c * hw, 3.0);
        let gamma = uniform(&mut r, c, 2.0);
        let beta = uniform(&mut r, c, 1.0);
        let mean = uniform(&mut r, c, 1.0);
        let var: Vec<f32> = (0..c).map(|_| r.gen_range(0.05..4.0)).collect();
        let eps = [1e-5, 1e-3][r.gen_range(0..2)];
        let want = bn_oracle(&x, c, &gamma, &beta, &mean, &var, eps);
        let [g, b, m, v] = [&gamma, &beta, &mean, &var].map(|d| tensor(&[c], d.clone()));
        let got = batchnorm_infer(
            &tensor(&[c, hw, 1], x),
            &BatchNormParams {
                gamma: &g,
                beta: &b,
                running_mean: &m,
                running_var: &v,
                epsilon: eps,
            },
        )
        .unwrap();
        suite.record("batchnorm_infer", max_abs(got.data(), &want));

        // linear
        let n = r.gen_range(1..=40);
        let m = r.gen_range(1..=12);
        let x = uniform(&mut r, n, 1.0);
        let wt = uniform(&mut r, m * n, 1.0);
        let bias = r.gen_bool(0.5).then(|| uniform(&mut r, m, 1.0));
        let want = linear_oracle(&x, &wt, bias.as_deref(), m);
        let bt = bias.map(|b| tensor(&[m], b));
        let got = linear(&tensor(&[n], x), &tensor(&[m, n], wt), bt.as_ref()).unwrap();
        suite.record("linear", max_abs(got.data(), &want));
    }
    suite
}

/// Mean softmax cross-entropy in `f64` for weights `w (K x N)` and bias `b`.
pub fn ce_loss(w: &[f64], b: &[f64], k: usize, xs: &[Vec<f32>], ys: &[usize]) -> f64 {
    let n = w.len() / k;
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> = (0..k).map(|c| (0..n).map(|i| w[c * n + i] * x[i] as f64).sum::<f64>() + b[c]).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / xs.len() as f64
}

/// `|a - n| / max(|a|, |n|, floor)`: relative, except for gradients that are
/// essentially zero, where it degrades to absolute error scaled by `floor`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Worst relative error between analytic and central-difference gradients
/// over `cases` random (model, batch) pairs, sampling coordinates per case.
pub fn gradient_check(cases: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for _ in 0..cases {
        let k = r.gen_range(2..=5);
        let n = r.gen_range(1..=12);
        let bsz = r.gen_range(1..=8);
        let w = uniform(&mut r, k * n, 1.0);
        let b = uniform(&mut r, k, 0.5);
        let xs: Vec<Vec<f32>> = (0..bsz).map(|_| uniform(&mut r, n, 2.0)).collect();
        let ys: Vec<usize> = (0..bsz).map(|_| r.gen_range(0..k)).collect();
        let model = ProbeModel {
            weights: tensor(&[k, n], w.clone()),
            bias: tensor(&[k], b.clone()),
            standardizer: None,
        };
        let batch = tensor(&[bsz, n], xs.concat());
        let g = cross_entropy_grad(&model, &batch, &ys).unwrap();
        let w64: Vec<f64> = w.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let loss = ce_loss(&w64, &b64, k, &xs, &ys);
        assert!((g.loss - loss).abs() < 1e-5 * loss.max(1.0), "loss {} vs oracle {loss}", g.loss);

        for _ in 0..20 {
            let i = r.gen_range(0..k * n);
            let (mut plus, mut minus) = (w64.clone(), w64.clone());
            plus[i] += h;
            minus[i] -= h;
            let numeric = (ce_loss(&plus, &b64, k, &xs, &ys) - ce_loss(&minus, &b64, k, &xs, &ys)) / (2.0 * h);
            worst = worst.max(rel_err(g.weights.data()[i] as f64, numeric));
            coords += 1;
        }
        for c in 0..k {
            let (mut plus, mut minus) = (b64.clone(), b64.clone());
            plus[c] += h;
            minus[c] -= h;
            let numeric = (ce_loss(&w64, &plus, k, &xs, &ys) - ce_loss(&w64, &minus, k, &xs, &ys)) / (2.0 * h);
            worst = worst.max(rel_err(g.bias.data()[c] as f64, numeric));
            coords += 1;
        }
    }
    (worst, coords)
}

/// Outcome of greedy splits over random manifests.
#[derive(Debug, Default)]
pub struct SplitSuite {
    pub manifests: usize,
    pub disjoint_failures: usize,
    pub balanced_checked: usize,
    /// Largest |achieved - target| over balanced manifests with >= 11 subjects.
    pub balanced_worst: f64,
}

pub fn split_suite(manifests: usize, seed: u64) -> SplitSuite {
    let mut r = rng(seed);
    let fractions = SplitFractions::default();
    let target = fractions.get();
    let mut suite = SplitSuite::default();
    for m in 0..manifests {
        let subjects = r.gen_range(3..=50);
        let balanced = m % 2 == 0;
        let per = r.gen_range(5..=120);
        let counts: Vec<(String, usize)> = (0..subjects)
            .map(|s| (format!("subj{s:03}"), if balanced { per } else { r.gen_range(1..=200) }))
            .collect();
        let split = greedy_split(&counts, fractions, r.gen()).unwrap();
        suite.manifests += 1;

        // Each subject in exactly one split, and the union is everything.
        let mut seen = BTreeSet::new();
        let mut per_split: [BTreeSet<&str>; 3] = Default::default();
        for (name, s) in split.subjects() {
            per_split[s.index()].insert(name.as_str());
            seen.insert(name.as_str());
        }
        let all: BTreeSet<&str> = counts.iter().map(|(n, _)| n.as_str()).collect();
        let pairwise_disjoint = Split::ALL.iter().all(|a| {
            Split::ALL
                .iter()
                .filter(|b| b != &a)
                .all(|b| per_split[a.index()].is_disjoint(&per_split[b.index()]))
        });
        let sizes: usize = per_split.iter().map(BTreeSet::len).sum();
        if !(pairwise_disjoint && seen == all && sizes == subjects) {
            suite.disjoint_failures += 1;
        }

        if balanced && subjects >= 11 {
            let total: usize = counts.iter().map(|(_, c)| c).sum();
            let mut got = [0usize; 3];
            for (name, c) in &counts {
                got[split.split_of(name).unwrap().index()] += c;
            }
            for i in 0..3 {
                suite.balanced_worst = suite.balanced_worst.max((got[i] as f64 / total as f64 - target[i]).abs());
            }
            suite.balanced_checked += 1;
        }
    }
    suite
}

type Walk = (BTreeMap<String, Vec<usize>>, BTreeMap<String, (u64, u64)>);

/// Per-node output shapes and (learned, running-stat) parameter counts,
/// walked over the raw graph JSON with the per-layer formulas.
pub fn shape_walk(json: &str) -> Walk {
    let v: Value = serde_json::from_str(json).unwrap();
    let input: Vec<usize> = v["input_shape"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
    let nodes = v["nodes"].as_array().unwrap();
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut per_node: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let pair = |a: &Value, default: usize| -> (usize, usize) {
        a.as_array()
            .map(|p| (p[0].as_u64().unwrap() as usize, p[1].as_u64().unwrap() as usize))
            .unwrap_or((default, default))
    };
    for node in nodes {
        let id = node["id"].as_str().unwrap().to_string();
        let op = node["op"].as_str().unwrap();
        let attrs = &node["attrs"];
        let ins: Vec<Vec<usize>> = node["inputs"]
            .as_array()
            .map(|a| a.iter().map(|i| shapes[i.as_str().unwrap()].clone()).collect())
            .unwrap_or_default();
        let bias = attrs["bias"].as_bool().unwrap_or(true);
        let (shape, params) = match op {
            "input" => (input.clone(), (0, 0)),
            "conv" => {
                let [c, h, w] = ins[0][..] else { panic!() };
                let oc = attrs["out_channels"].as_u64().unwrap() as usize;
                let k = pair(&attrs["kernel"], 1);
                let s = pair(&attrs["stride"], 1);
                let p = pair(&attrs["padding"], 0);
                let learned = (oc * c * k.0 * k.1 + if bias { oc } else { 0 }) as u64;
                (vec![oc, out_extent(h, k.0, s.0, p.0), out_extent(w, k.1, s.1, p.1)], (learned, 0))
            }
            "maxpool" | "avgpool" => {
                let [c, h, w] = ins[0][..] else { panic!() };
                let k = pair(&attrs["kernel"], 1);
                let s = if attrs["stride"].is_null() { k } else { pair(&attrs["stride"], 1) };
                let p = pair(&attrs["padding"], 0);
                (vec![c, out_extent(h, k.0, s.0, p.0), out_extent(w, k.1, s.1, p.1)], (0, 0))
            }
            "batchnorm" => (ins[0].clone(), (2 * ins[0][0] as u64, 2 * ins[0][0] as u64)),
            "relu" => (ins[0].clone(), (0, 0)),
            "concat" => {
                let mut s = ins[0].clone();
                s[0] = ins.iter().map(|i| i[0]).sum();
                (s, (0, 0))
            }
            "flatten" => (vec![ins[0].iter().product()], (0, 0)),
            "linear" => {
                let n = ins[0][0];
                let m = attrs["out_features"].as_u64().unwrap() as usize;
                (vec![m], ((m * n + if bias { m } else { 0 }) as u64, 0))
            }
            other => panic!("unknown op {other}"),
        };
        shapes.insert(id.clone(), shape);
        per_node.insert(id, params);
    }
    (shapes, per_node)
}

/// Parameter totals for the whole graph, or for the ancestors of a cut-point.
pub fn param_formula(json: &str, upto: Option<&str>) -> (u64, u64) {
    let v: Value = serde_json::from_str(json).unwrap();
    let nodes = v["nodes"].as_array().unwrap();
    let (_, per_node) = shape_walk(json);
    // Keep only ancestors of the cut node, if any.
    let keep: BTreeSet<String> = match upto {
        None => per_node.keys().cloned().collect(),
        Some(label) => {
            let target = v["cut_points"][label].as_str().unwrap().to_string();
            let inputs: BTreeMap<&str, Vec<&str>> = nodes
                .iter()
                .map(|n| {
                    let ins = n["inputs"]
                        .as_array()
                        .map(|a| a.iter().map(|i| i.as_str().unwrap()).collect())
                        .unwrap_or_default();
                    (n["id"].as_str().unwrap(), ins)
                })
                .collect();
            let mut keep = BTreeSet::new();
            let mut stack = vec![target.as_str()];
            while let Some(id) = stack.pop() {
                if keep.insert(id.to_string()) {
                    stack.extend(inputs[id].iter().copied());
                }
            }
            keep
        }
    };
    per_node
        .iter()
        .filter(|(id, _)| keep.contains(*id))
        .fold((0, 0), |(a, b), (_, (l, r))| (a + l, b + r))
}

/// Cut-point activation shape from [`shape_walk`].
pub fn cut_shape(json: &str, label: &str) -> Vec<usize> {
    let v: Value = serde_json::from_str(json).unwrap();
    let target = v["cut_points"][label].as_str().unwrap();
    shape_walk(json).0[target].clone()
}

/// Nearest-centroid accuracy on per-image (pixel mean, pixel std), fit on
/// the train split and scored on the test split.
pub fn pixel_stats_accuracy(manifest: &cutprobe::dataset::DatasetManifest, split: &cutprobe::dataset::SplitAssignment) -> f64 {
    let stats = |r: &cutprobe::dataset::ManifestRecord| {
        let img = image::open(&r.resolved).unwrap().to_luma8();
        let px: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        let m = px.iter().sum::<f64>() / px.len() as f64;
        let v = px.iter().map(|x| (x - m).powi(2)).sum::<f64>() / px.len() as f64;
        (m, v.sqrt())
    };
    let k = manifest.class_names.len();
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for r in split.records(manifest, Split::Train) {
        let (m, s) = stats(r);
        let e = &mut sums[r.label as usize];
        *e = (e.0 + m, e.1 + s, e.2 + 1);
    }
    let centroids: Vec<(f64, f64)> = sums.iter().map(|&(m, s, n)| (m / n.max(1) as f64, s / n.max(1) as f64)).collect();
    let test = split.records(manifest, Split::Test);
    let correct = test
        .iter()
        .filter(|r| {
            let (m, s) = stats(r);
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    let d = |c: (f64, f64)| (c.0 - m).powi(2) + (c.1 - s).powi(2);
                    d(centroids[a]).total_cmp(&d(centroids[b]))
                })
                .unwrap();
            nearest == r.label as usize
        })
        .count();
    correct as f64 / test.len() as f64
}
