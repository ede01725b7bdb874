//! Bundled architectures.
//!
//! The JSON files under `models/` are generated from the builders below;
//! run the test suite with `CUTPROBE_BLESS=1` to rewrite them.

use indexmap::IndexMap;

use super::{load_graph, GraphDescription, GraphError, ModelGraph, NodeAttrs, NodeSpec, OpKind};

pub const VGG19_JSON: &str = include_str!("../../models/vgg19.graph.json");
pub const INCEPTION_V3_JSON: &str = include_str!("../../models/inception_v3.graph.json");
pub const PROBE_SMALL_JSON: &str = include_str!("../../models/probe_small.graph.json");

/// Names accepted by [`bundled`] (and `bundled:<name>` paths in the CLI).
pub const BUNDLED: [&str; 3] = ["vgg19", "inception_v3", "probe_small"];

pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "vgg19" => Some(VGG19_JSON),
        "inception_v3" => Some(INCEPTION_V3_JSON),
        "probe_small" => Some(PROBE_SMALL_JSON),
        _ => None,
    }
}

pub fn load_bundled(name: &str) -> Result<ModelGraph, GraphError> {
    let json = bundled(name).ok_or_else(|| GraphError::Attr {
        node: String::new(),
        detail: format!("no bundled graph named {name:?}; available: {BUNDLED:?}"),
    })?;
    load_graph(json.as_bytes())
}

pub fn vgg19() -> ModelGraph {
    load_bundled("vgg19").expect("bundled vgg19 is valid")
}

pub fn inception_v3() -> ModelGraph {
    load_bundled("inception_v3").expect("bundled inception_v3 is valid")
}

pub fn probe_small() -> ModelGraph {
    load_bundled("probe_small").expect("bundled probe_small is valid")
}

struct Builder {
    nodes: Vec<NodeSpec>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: vec![NodeSpec {
                id: "input".into(),
                op: OpKind::Input,
                inputs: vec![],
                attrs: NodeAttrs::default(),
                weight_keys: vec![],
            }],
        }
    }

    fn push(&mut self, id: &str, op: OpKind, inputs: &[&str], attrs: NodeAttrs, weight_keys: Vec<String>) -> String {
        self.nodes.push(NodeSpec {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            attrs,
            weight_keys,
        });
        id.into()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, id: &str, input: &str, out: usize, kernel: [usize; 2], stride: usize, padding: [usize; 2], bias: bool) -> String {
        let mut keys = vec![format!("{id}.weight")];
        if bias {
            keys.push(format!("{id}.bias"));
        }
        let attrs = NodeAttrs {
            out_channels: Some(out),
            kernel: Some(kernel),
            stride: (stride != 1).then_some([stride, stride]),
            padding: (padding != [0, 0]).then_some(padding),
            bias: (!bias).then_some(false),
            ..Default::default()
        };
        self.push(id, OpKind::Conv, &[input], attrs, keys)
    }

    fn relu(&mut self, id: &str, input: &str) -> String {
        self.push(id, OpKind::Relu, &[input], NodeAttrs::default(), vec![])
    }

    fn pool(&mut self, id: &str, op: OpKind, input: &str, kernel: usize, stride: usize, padding: usize) -> String {
        let attrs = NodeAttrs {
            kernel: Some([kernel, kernel]),
            stride: (stride != kernel).then_some([stride, stride]),
            padding: (padding != 0).then_some([padding, padding]),
            ..Default::default()
        };
        self.push(id, op, &[input], attrs, vec![])
    }

    fn concat(&mut self, id: &str, inputs: &[&str]) -> String {
        self.push(id, OpKind::Concat, inputs, NodeAttrs::default(), vec![])
    }

    fn flatten(&mut self, id: &str, input: &str) -> String {
        self.push(id, OpKind::Flatten, &[input], NodeAttrs::default(), vec![])
    }

    fn linear(&mut self, id: &str, input: &str, out: usize) -> String {
        let attrs = NodeAttrs {
            out_features: Some(out),
            ..Default::default()
        };
        self.push(id, OpKind::Linear, &[input], attrs, vec![format!("{id}.weight"), format!("{id}.bias")])
    }

    /// conv (no bias) -> batchnorm(eps 1e-3) -> relu; returns the relu id.
    fn basic(&mut self, id: &str, input: &str, out: usize, kernel: [usize; 2], stride: usize, padding: [usize; 2]) -> String {
        let conv = self.conv(&format!("{id}.conv"), input, out, kernel, stride, padding, false);
        let bn_id = format!("{id}.bn");
        let keys = ["weight", "bias", "running_mean", "running_var"]
            .iter()
            .map(|k| format!("{bn_id}.{k}"))
            .collect();
        let attrs = NodeAttrs {
            eps: Some(1e-3),
            ..Default::default()
        };
        let bn = self.push(&bn_id, OpKind::BatchNorm, &[&conv], attrs, keys);
        self.relu(&format!("{id}.relu"), &bn)
    }

    fn finish(self, name: &str, input_shape: [usize; 3], cut_points: &[(&str, &str)]) -> GraphDescription {
        GraphDescription {
            name: name.into(),
            input_shape,
            nodes: self.nodes,
            cut_points: cut_points.iter().map(|(l, n)| (l.to_string(), n.to_string())).collect::<IndexMap<_, _>>(),
        }
    }
}

/// VGG-19 at 3x224x224. Conv cut-points sit on the ReLU before each block's max-pool.
pub fn vgg19_description() -> GraphDescription {
    let mut b = Builder::new();
    let mut x = "input".to_string();
    let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];
    for (bi, &(ch, reps)) in blocks.iter().enumerate() {
        let blk = bi + 1;
        for r in 1..=reps {
            let c = b.conv(&format!("conv{blk}_{r}"), &x, ch, [3, 3], 1, [1, 1], true);
            x = b.relu(&format!("relu{blk}_{r}"), &c);
        }
        x = b.pool(&format!("pool{blk}"), OpKind::MaxPool, &x, 2, 2, 0);
    }
    let f = b.flatten("flatten", &x);
    let fc6 = b.linear("fc6", &f, 4096);
    let r6 = b.relu("relu6", &fc6);
    let fc7 = b.linear("fc7", &r6, 4096);
    let r7 = b.relu("relu7", &fc7);
    b.linear("fc8", &r7, 1000);
    b.finish(
        "vgg19",
        [3, 224, 224],
        &[
            ("A_V", "relu2_2"),
            ("B_V", "relu3_4"),
            ("C_V", "relu4_4"),
            ("D_V", "relu5_4"),
            ("E_V", "relu6"),
        ],
    )
}

fn inception_a(b: &mut Builder, name: &str, x: &str, pool_features: usize) -> String {
    let p = |s: &str| format!("{name}.{s}");
    let b1 = b.basic(&p("branch1x1"), x, 64, [1, 1], 1, [0, 0]);
    let b5 = b.basic(&p("branch5x5_1"), x, 48, [1, 1], 1, [0, 0]);
    let b5 = b.basic(&p("branch5x5_2"), &b5, 64, [5, 5], 1, [2, 2]);
    let b3 = b.basic(&p("branch3x3dbl_1"), x, 64, [1, 1], 1, [0, 0]);
    let b3 = b.basic(&p("branch3x3dbl_2"), &b3, 96, [3, 3], 1, [1, 1]);
    let b3 = b.basic(&p("branch3x3dbl_3"), &b3, 96, [3, 3], 1, [1, 1]);
    let bp = b.pool(&p("branch_pool.avg"), OpKind::AvgPool, x, 3, 1, 1);
    let bp = b.basic(&p("branch_pool"), &bp, pool_features, [1, 1], 1, [0, 0]);
    b.concat(name, &[&b1, &b5, &b3, &bp])
}

fn inception_b(b: &mut Builder, name: &str, x: &str) -> String {
    let p = |s: &str| format!("{name}.{s}");
    let b3 = b.basic(&p("branch3x3"), x, 384, [3, 3], 2, [0, 0]);
    let bd = b.basic(&p("branch3x3dbl_1"), x, 64, [1, 1], 1, [0, 0]);
    let bd = b.basic(&p("branch3x3dbl_2"), &bd, 96, [3, 3], 1, [1, 1]);
    let bd = b.basic(&p("branch3x3dbl_3"), &bd, 96, [3, 3], 2, [0, 0]);
    let bp = b.pool(&p("branch_pool"), OpKind::MaxPool, x, 3, 2, 0);
    b.concat(name, &[&b3, &bd, &bp])
}

fn inception_c(b: &mut Builder, name: &str, x: &str, c7: usize) -> String {
    let p = |s: &str| format!("{name}.{s}");
    let (row, col) = ([1, 7], [7, 1]);
    let (row_pad, col_pad) = ([0, 3], [3, 0]);
    let b1 = b.basic(&p("branch1x1"), x, 192, [1, 1], 1, [0, 0]);
    let b7 = b.basic(&p("branch7x7_1"), x, c7, [1, 1], 1, [0, 0]);
    let b7 = b.basic(&p("branch7x7_2"), &b7, c7, row, 1, row_pad);
    let b7 = b.basic(&p("branch7x7_3"), &b7, 192, col, 1, col_pad);
    let bd = b.basic(&p("branch7x7dbl_1"), x, c7, [1, 1], 1, [0, 0]);
    let bd = b.basic(&p("branch7x7dbl_2"), &bd, c7, col, 1, col_pad);
    let bd = b.basic(&p("branch7x7dbl_3"), &bd, c7, row, 1, row_pad);
    let bd = b.basic(&p("branch7x7dbl_4"), &bd, c7, col, 1, col_pad);
    let bd = b.basic(&p("branch7x7dbl_5"), &bd, 192, row, 1, row_pad);
    let bp = b.pool(&p("branch_pool.avg"), OpKind::AvgPool, x, 3, 1, 1);
    let bp = b.basic(&p("branch_pool"), &bp, 192, [1, 1], 1, [0, 0]);
    b.concat(name, &[&b1, &b7, &bd, &bp])
}

fn inception_d(b: &mut Builder, name: &str, x: &str) -> String {
    let p = |s: &str| format!("{name}.{s}");
    let b3 = b.basic(&p("branch3x3_1"), x, 192, [1, 1], 1, [0, 0]);
    let b3 = b.basic(&p("branch3x3_2"), &b3, 320, [3, 3], 2, [0, 0]);
    let b7 = b.basic(&p("branch7x7x3_1"), x, 192, [1, 1], 1, [0, 0]);
    let b7 = b.basic(&p("branch7x7x3_2"), &b7, 192, [1, 7], 1, [0, 3]);
    let b7 = b.basic(&p("branch7x7x3_3"), &b7, 192, [7, 1], 1, [3, 0]);
    let b7 = b.basic(&p("branch7x7x3_4"), &b7, 192, [3, 3], 2, [0, 0]);
    let bp = b.pool(&p("branch_pool"), OpKind::MaxPool, x, 3, 2, 0);
    b.concat(name, &[&b3, &b7, &bp])
}

fn inception_e(b: &mut Builder, name: &str, x: &str) -> String {
    let p = |s: &str| format!("{name}.{s}");
    let b1 = b.basic(&p("branch1x1"), x, 320, [1, 1], 1, [0, 0]);
    let b3 = b.basic(&p("branch3x3_1"), x, 384, [1, 1], 1, [0, 0]);
    let b3a = b.basic(&p("branch3x3_2a"), &b3, 384, [1, 3], 1, [0, 1]);
    let b3b = b.basic(&p("branch3x3_2b"), &b3, 384, [3, 1], 1, [1, 0]);
    let b3 = b.concat(&p("branch3x3"), &[&b3a, &b3b]);
    let bd = b.basic(&p("branch3x3dbl_1"), x, 448, [1, 1], 1, [0, 0]);
    let bd = b.basic(&p("branch3x3dbl_2"), &bd, 384, [3, 3], 1, [1, 1]);
    let bda = b.basic(&p("branch3x3dbl_3a"), &bd, 384, [1, 3], 1, [0, 1]);
    let bdb = b.basic(&p("branch3x3dbl_3b"), &bd, 384, [3, 1], 1, [1, 0]);
    let bd = b.concat(&p("branch3x3dbl"), &[&bda, &bdb]);
    let bp = b.pool(&p("branch_pool.avg"), OpKind::AvgPool, x, 3, 1, 1);
    let bp = b.basic(&p("branch_pool"), &bp, 192, [1, 1], 1, [0, 0]);
    b.concat(name, &[&b1, &b3, &bd, &bp])
}

/// Inception-v3 at 3x299x299 without the auxiliary classifier.
pub fn inception_v3_description() -> GraphDescription {
    let mut b = Builder::new();
    let x = b.basic("Conv2d_1a_3x3", "input", 32, [3, 3], 2, [0, 0]);
    let x = b.basic("Conv2d_2a_3x3", &x, 32, [3, 3], 1, [0, 0]);
    let x = b.basic("Conv2d_2b_3x3", &x, 64, [3, 3], 1, [1, 1]);
    let x = b.pool("maxpool1", OpKind::MaxPool, &x, 3, 2, 0);
    let x = b.basic("Conv2d_3b_1x1", &x, 80, [1, 1], 1, [0, 0]);
    let x = b.basic("Conv2d_4a_3x3", &x, 192, [3, 3], 1, [0, 0]);
    let x = b.pool("maxpool2", OpKind::MaxPool, &x, 3, 2, 0);
    let x = inception_a(&mut b, "Mixed_5b", &x, 32);
    let x = inception_a(&mut b, "Mixed_5c", &x, 64);
    let x = inception_a(&mut b, "Mixed_5d", &x, 64);
    let x = inception_b(&mut b, "Mixed_6a", &x);
    let x = inception_c(&mut b, "Mixed_6b", &x, 128);
    let x = inception_c(&mut b, "Mixed_6c", &x, 160);
    let x = inception_c(&mut b, "Mixed_6d", &x, 160);
    let x = inception_c(&mut b, "Mixed_6e", &x, 192);
    let x = inception_d(&mut b, "Mixed_7a", &x);
    let x = inception_e(&mut b, "Mixed_7b", &x);
    let x = inception_e(&mut b, "Mixed_7c", &x);
    let x = b.pool("avgpool", OpKind::AvgPool, &x, 8, 8, 0);
    let x = b.flatten("flatten", &x);
    b.linear("fc", &x, 1000);
    b.finish(
        "inception_v3",
        [3, 299, 299],
        &[
            ("A_I", "Conv2d_4a_3x3.relu"),
            ("B_I", "Mixed_5d"),
            ("C_I", "Mixed_6e"),
            ("D_I", "Mixed_7c"),
        ],
    )
}

/// Six-layer desk-scale network at 3x64x64 (three conv + three max-pool).
pub fn probe_small_description() -> GraphDescription {
    let mut b = Builder::new();
    let mut x = "input".to_string();
    for (i, ch) in [16usize, 32, 64].into_iter().enumerate() {
        let n = i + 1;
        let c = b.conv(&format!("conv{n}"), &x, ch, [3, 3], 1, [1, 1], true);
        let r = b.relu(&format!("relu{n}"), &c);
        x = b.pool(&format!("pool{n}"), OpKind::MaxPool, &r, 2, 2, 0);
    }
    b.finish(
        "probe_small",
        [3, 64, 64],
        &[("L1", "relu1"), ("L2", "relu2"), ("L3", "relu3")],
    )
}
