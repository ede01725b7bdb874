//! Layer graphs with named cut-points.
//!
//! A graph is loaded from a JSON description listing nodes in topological
//! order. Validation runs at load time: every reference resolves, attributes
//! match the node kind, and output shapes are propagated from the declared
//! input shape and cached per node.

mod forward;
mod weights;
pub mod zoo;

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::FormatError;
use crate::ops::{window_extent, PoolGeometry};
use crate::tensor::TensorError;

pub use forward::{forward, forward_all};
pub use weights::{load_weights, WeightStore, WEIGHT_MAGIC, WEIGHT_VERSION};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph description parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {node:?} references undeclared input {input:?}")]
    DanglingInput { node: String, input: String },
    #[error("graph must contain exactly one input node, found {0}")]
    InputNodeCount(usize),
    #[error("node {node:?}: {detail}")]
    Attr { node: String, detail: String },
    #[error("shape propagation failed at node {node:?}: {detail}")]
    Shape { node: String, detail: String },
    #[error("cut-point {label:?} refers to unknown node {node:?}")]
    CutPointNode { label: String, node: String },
    #[error("unknown cut-point {label:?}; valid labels: {valid:?}")]
    UnknownLabel { label: String, valid: Vec<String> },
    #[error("missing weight tensor {key:?} (node {node:?})")]
    MissingWeight { key: String, node: String },
    #[error("weight tensor {key:?}: expected shape {expected:?}, found {found:?}")]
    WeightShape {
        key: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("input shape {found:?} does not match graph input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("node {node:?}: {source}")]
    Op {
        node: String,
        #[source]
        source: TensorError,
    },
    #[error("weight container: {0}")]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Input,
    Conv,
    MaxPool,
    AvgPool,
    BatchNorm,
    Relu,
    Concat,
    Linear,
    Flatten,
}

/// Layer attributes as written in the description; which ones apply depends on the op.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f32>,
}

impl NodeAttrs {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn set_fields(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let fields: [(&'static str, bool); 7] = [
            ("out_channels", self.out_channels.is_some()),
            ("out_features", self.out_features.is_some()),
            ("kernel", self.kernel.is_some()),
            ("stride", self.stride.is_some()),
            ("padding", self.padding.is_some()),
            ("bias", self.bias.is_some()),
            ("eps", self.eps.is_some()),
        ];
        for (name, set) in fields {
            if set {
                v.push(name);
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "NodeAttrs::is_empty")]
    pub attrs: NodeAttrs,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_keys: Vec<String>,
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDescription {
    pub name: String,
    pub input_shape: [usize; 3],
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub cut_points: IndexMap<String, String>,
}

/// Validated layer with defaults applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layer {
    Input,
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        bias: bool,
    },
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
    BatchNorm { eps: f32 },
    Relu,
    Concat,
    Linear { out_features: usize, bias: bool },
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Learned,
    RunningStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSlot {
    pub key: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl WeightSlot {
    pub fn numel(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub spec: NodeSpec,
    pub layer: Layer,
    pub(crate) input_idx: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub weights: Vec<WeightSlot>,
}

impl Node {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn kind(&self) -> OpKind {
        self.spec.op
    }
}

/// Parameter totals: learned weights and batch-norm running statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub learned: u64,
    pub running_stats: u64,
}

impl std::ops::Add for ParamCount {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            learned: self.learned + rhs.learned,
            running_stats: self.running_stats + rhs.running_stats,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<Node>,
    cut_points: IndexMap<String, String>,
    index: HashMap<String, usize>,
}

/// Parses and validates a JSON graph description.
pub fn load_graph(description: &[u8]) -> Result<ModelGraph, GraphError> {
    let desc: GraphDescription = serde_json::from_slice(description)?;
    ModelGraph::from_description(desc)
}

impl ModelGraph {
    pub fn from_description(desc: GraphDescription) -> Result<Self, GraphError> {
        let inputs = desc.nodes.iter().filter(|n| n.op == OpKind::Input).count();
        if inputs != 1 {
            return Err(GraphError::InputNodeCount(inputs));
        }
        let mut index = HashMap::with_capacity(desc.nodes.len());
        let mut nodes: Vec<Node> = Vec::with_capacity(desc.nodes.len());
        for spec in desc.nodes {
            if index.contains_key(&spec.id) {
                return Err(GraphError::DuplicateId(spec.id));
            }
            let input_idx: Vec<usize> = spec
                .inputs
                .iter()
                .map(|i| {
                    index.get(i).copied().ok_or_else(|| GraphError::DanglingInput {
                        node: spec.id.clone(),
                        input: i.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let in_shapes: Vec<&[usize]> = input_idx.iter().map(|&i: &usize| nodes[i].output_shape.as_slice()).collect();
            let layer = validate_layer(&spec)?;
            let output_shape = propagate(&spec, &layer, &in_shapes, &desc.input_shape)?;
            let weights = weight_slots(&spec, &layer, &in_shapes, &output_shape)?;
            index.insert(spec.id.clone(), nodes.len());
            nodes.push(Node {
                spec,
                layer,
                input_idx,
                output_shape,
                weights,
            });
        }
        for (label, node) in &desc.cut_points {
            if !index.contains_key(node) {
                return Err(GraphError::CutPointNode {
                    label: label.clone(),
                    node: node.clone(),
                });
            }
        }
        Ok(Self {
            name: desc.name,
            input_shape: desc.input_shape,
            nodes,
            cut_points: desc.cut_points,
            index,
        })
    }

    pub fn to_description(&self) -> GraphDescription {
        GraphDescription {
            name: self.name.clone(),
            input_shape: self.input_shape,
            nodes: self.nodes.iter().map(|n| n.spec.clone()).collect(),
            cut_points: self.cut_points.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_description()).expect("description serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// The last node in topological order; the sole output of a truncated graph.
    pub fn output(&self) -> &Node {
        self.nodes.last().expect("graph has an input node")
    }

    pub fn cut_points(&self) -> &IndexMap<String, String> {
        &self.cut_points
    }

    pub fn cut_labels(&self) -> Vec<String> {
        self.cut_points.keys().cloned().collect()
    }

    pub fn cut_node(&self, label: &str) -> Result<&Node, GraphError> {
        let id = self.cut_points.get(label).ok_or_else(|| GraphError::UnknownLabel {
            label: label.to_string(),
            valid: self.cut_labels(),
        })?;
        Ok(&self.nodes[self.index[id]])
    }

    /// Keeps the ancestor closure of the cut-point node; that node becomes the output.
    pub fn truncate_at(&self, label: &str) -> Result<ModelGraph, GraphError> {
        let target = self.index[&self.cut_node(label)?.spec.id];
        let mut keep = vec![false; self.nodes.len()];
        keep[target] = true;
        for i in (0..=target).rev() {
            if keep[i] {
                for &j in &self.nodes[i].input_idx {
                    keep[j] = true;
                }
            }
        }
        let retained: HashSet<&str> = self
            .nodes
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.id())
            .collect();
        let desc = GraphDescription {
            name: self.name.clone(),
            input_shape: self.input_shape,
            nodes: self
                .nodes
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(n, _)| n.spec.clone())
                .collect(),
            cut_points: self
                .cut_points
                .iter()
                .filter(|(_, id)| retained.contains(id.as_str()))
                .map(|(l, id)| (l.clone(), id.clone()))
                .collect(),
        };
        Self::from_description(desc)
    }

    /// Every weight slot the graph consumes, in node order.
    pub fn weight_slots(&self) -> impl Iterator<Item = (&Node, &WeightSlot)> {
        self.nodes.iter().flat_map(|n| n.weights.iter().map(move |w| (n, w)))
    }
}

pub fn node_params(node: &Node) -> ParamCount {
    let mut c = ParamCount::default();
    for w in &node.weights {
        match w.role {
            ParamRole::Learned => c.learned += w.numel(),
            ParamRole::RunningStat => c.running_stats += w.numel(),
        }
    }
    c
}

/// Learned parameters plus batch-norm running statistics, reported separately.
pub fn count_params(graph: &ModelGraph) -> ParamCount {
    graph.nodes().iter().map(node_params).fold(ParamCount::default(), |a, b| a + b)
}

fn attr_err(spec: &NodeSpec, detail: impl Into<String>) -> GraphError {
    GraphError::Attr {
        node: spec.id.clone(),
        detail: detail.into(),
    }
}

fn pair(v: [usize; 2]) -> (usize, usize) {
    (v[0], v[1])
}

fn validate_layer(spec: &NodeSpec) -> Result<Layer, GraphError> {
    let a = &spec.attrs;
    let allowed: &[&str] = match spec.op {
        OpKind::Input | OpKind::Relu | OpKind::Concat | OpKind::Flatten => &[],
        OpKind::Conv => &["out_channels", "kernel", "stride", "padding", "bias"],
        OpKind::MaxPool | OpKind::AvgPool => &["kernel", "stride", "padding"],
        OpKind::BatchNorm => &["eps"],
        OpKind::Linear => &["out_features", "bias"],
    };
    if let Some(extra) = a.set_fields().into_iter().find(|f| !allowed.contains(f)) {
        return Err(attr_err(spec, format!("attribute {extra:?} is not valid for {:?}", spec.op)));
    }
    let positive = |name: &str, v: [usize; 2]| {
        if v.contains(&0) {
            Err(attr_err(spec, format!("{name} must be positive, got {v:?}")))
        } else {
            Ok(pair(v))
        }
    };
    let need = |name: &str, v: Option<[usize; 2]>| v.ok_or_else(|| attr_err(spec, format!("missing attribute {name:?}")));
    let n_inputs = spec.inputs.len();
    let arity_ok = match spec.op {
        OpKind::Input => n_inputs == 0,
        OpKind::Concat => n_inputs >= 1,
        _ => n_inputs == 1,
    };
    if !arity_ok {
        return Err(attr_err(spec, format!("{:?} cannot take {n_inputs} inputs", spec.op)));
    }
    let layer = match spec.op {
        OpKind::Input => Layer::Input,
        OpKind::Relu => Layer::Relu,
        OpKind::Concat => Layer::Concat,
        OpKind::Flatten => Layer::Flatten,
        OpKind::Conv => {
            let out_channels = a
                .out_channels
                .filter(|&c| c > 0)
                .ok_or_else(|| attr_err(spec, "conv requires positive out_channels"))?;
            Layer::Conv {
                out_channels,
                kernel: positive("kernel", need("kernel", a.kernel)?)?,
                stride: positive("stride", a.stride.unwrap_or([1, 1]))?,
                padding: pair(a.padding.unwrap_or([0, 0])),
                bias: a.bias.unwrap_or(true),
            }
        }
        OpKind::MaxPool | OpKind::AvgPool => {
            let kernel = need("kernel", a.kernel)?;
            let geom = PoolGeometry {
                kernel: positive("kernel", kernel)?,
                stride: positive("stride", a.stride.unwrap_or(kernel))?,
                padding: pair(a.padding.unwrap_or([0, 0])),
            };
            if spec.op == OpKind::MaxPool {
                Layer::MaxPool(geom)
            } else {
                Layer::AvgPool(geom)
            }
        }
        OpKind::BatchNorm => {
            let eps = a.eps.unwrap_or(1e-5);
            if !(eps >= 0.0) {
                return Err(attr_err(spec, format!("eps must be non-negative, got {eps}")));
            }
            Layer::BatchNorm { eps }
        }
        OpKind::Linear => Layer::Linear {
            out_features: a
                .out_features
                .filter(|&c| c > 0)
                .ok_or_else(|| attr_err(spec, "linear requires positive out_features"))?,
            bias: a.bias.unwrap_or(true),
        },
    };
    Ok(layer)
}

fn propagate(spec: &NodeSpec, layer: &Layer, inputs: &[&[usize]], graph_input: &[usize; 3]) -> Result<Vec<usize>, GraphError> {
    let fail = |detail: String| GraphError::Shape {
        node: spec.id.clone(),
        detail,
    };
    let chw = |s: &[usize]| match *s {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(fail(format!("expected a (C,H,W) input, got {s:?}"))),
    };
    Ok(match *layer {
        Layer::Input => {
            if graph_input.contains(&0) {
                return Err(fail(format!("input shape {graph_input:?} has a zero extent")));
            }
            graph_input.to_vec()
        }
        Layer::Relu => inputs[0].to_vec(),
        Layer::Flatten => vec![inputs[0].iter().product()],
        Layer::BatchNorm { .. } => {
            chw(inputs[0])?;
            inputs[0].to_vec()
        }
        Layer::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = chw(inputs[0])?;
            let hout = window_extent(h, kernel.0, stride.0, padding.0);
            let wout = window_extent(w, kernel.1, stride.1, padding.1);
            match (hout, wout) {
                (Some(ho), Some(wo)) => vec![out_channels, ho, wo],
                _ => {
                    return Err(fail(format!(
                        "kernel {kernel:?} stride {stride:?} padding {padding:?} does not fit {h}x{w}"
                    )))
                }
            }
        }
        Layer::MaxPool(g) | Layer::AvgPool(g) => {
            let (c, h, w) = chw(inputs[0])?;
            let (ho, wo) = g.output_extent("pool", h, w).map_err(|e| fail(e.to_string()))?;
            vec![c, ho, wo]
        }
        Layer::Concat => {
            let (_, h, w) = chw(inputs[0])?;
            let mut c = 0;
            for s in inputs {
                let (ci, hi, wi) = chw(s)?;
                if (hi, wi) != (h, w) {
                    return Err(fail(format!("concat inputs disagree spatially: {inputs:?}")));
                }
                c += ci;
            }
            vec![c, h, w]
        }
        Layer::Linear { out_features, .. } => {
            if inputs[0].len() != 1 {
                return Err(fail(format!("linear expects a flat input, got {:?}", inputs[0])));
            }
            vec![out_features]
        }
    })
}

fn weight_slots(spec: &NodeSpec, layer: &Layer, inputs: &[&[usize]], output: &[usize]) -> Result<Vec<WeightSlot>, GraphError> {
    use ParamRole::*;
    let expected: Vec<(Vec<usize>, ParamRole)> = match *layer {
        Layer::Conv {
            out_channels,
            kernel,
            bias,
            ..
        } => {
            let mut v = vec![(vec![out_channels, inputs[0][0], kernel.0, kernel.1], Learned)];
            if bias {
                v.push((vec![out_channels], Learned));
            }
            v
        }
        Layer::BatchNorm { .. } => {
            let c = output[0];
            vec![(vec![c], Learned), (vec![c], Learned), (vec![c], RunningStat), (vec![c], RunningStat)]
        }
        Layer::Linear { out_features, bias } => {
            let mut v = vec![(vec![out_features, inputs[0][0]], Learned)];
            if bias {
                v.push((vec![out_features], Learned));
            }
            v
        }
        _ => Vec::new(),
    };
    if spec.weight_keys.len() != expected.len() {
        return Err(attr_err(
            spec,
            format!(
                "{:?} node needs {} weight keys, found {}",
                spec.op,
                expected.len(),
                spec.weight_keys.len()
            ),
        ));
    }
    Ok(spec
        .weight_keys
        .iter()
        .zip(expected)
        .map(|(key, (shape, role))| WeightSlot {
            key: key.clone(),
            shape,
            role,
        })
        .collect())
}
