use indexmap::IndexMap;

use super::{GraphError, Layer, ModelGraph, Node, WeightStore};
use crate::ops::{self, BatchNormParams, ConvParams};
use crate::tensor::Tensor;

/// Runs the graph and returns the output of its last node.
///
/// Intermediate activations are released after their last consumer runs.
pub fn forward(graph: &ModelGraph, weights: &WeightStore, input: &Tensor) -> Result<Tensor, GraphError> {
    let mut slots = run(graph, weights, input, false)?;
    Ok(slots.pop().flatten().expect("output retained"))
}

/// Runs the graph and returns every node's activation, keyed by node id.
pub fn forward_all(graph: &ModelGraph, weights: &WeightStore, input: &Tensor) -> Result<IndexMap<String, Tensor>, GraphError> {
    let slots = run(graph, weights, input, true)?;
    Ok(graph
        .nodes()
        .iter()
        .zip(slots)
        .map(|(n, t)| (n.id().to_string(), t.expect("all retained")))
        .collect())
}

fn run(graph: &ModelGraph, weights: &WeightStore, input: &Tensor, keep_all: bool) -> Result<Vec<Option<Tensor>>, GraphError> {
    let expected = graph.input_shape();
    if input.shape() != expected {
        return Err(GraphError::InputShape {
            expected: expected.to_vec(),
            found: input.shape().to_vec(),
        });
    }
    weights.validate(graph)?;

    let nodes = graph.nodes();
    let mut last_use: Vec<usize> = (0..nodes.len()).collect();
    for (i, n) in nodes.iter().enumerate() {
        for &j in &n.input_idx {
            last_use[j] = i;
        }
    }
    let output = nodes.len() - 1;
    let mut slots: Vec<Option<Tensor>> = vec![None; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        // Single-input nodes may consume their input buffer when nothing else needs it.
        let owned = match node.input_idx[..] {
            [j] if !keep_all && last_use[j] == i && j != output => slots[j].take(),
            _ => None,
        };
        let out = eval_node(node, weights, input, &slots, owned)?;
        debug_assert_eq!(out.shape(), node.output_shape.as_slice());
        slots[i] = Some(out);
        if !keep_all {
            for &j in &node.input_idx {
                if last_use[j] == i && j != output {
                    slots[j] = None;
                }
            }
        }
    }
    Ok(slots)
}

fn eval_node(
    node: &Node,
    weights: &WeightStore,
    input: &Tensor,
    slots: &[Option<Tensor>],
    owned: Option<Tensor>,
) -> Result<Tensor, GraphError> {
    let arg = |k: usize| slots[node.input_idx[k]].as_ref().expect("input evaluated");
    let w = |k: usize| weights.get(&node.weights[k].key).expect("validated");
    let op_err = |source| GraphError::Op {
        node: node.id().to_string(),
        source,
    };
    let x = || owned.as_ref().unwrap_or_else(|| arg(0));
    let out = match node.layer {
        Layer::Input => input.clone(),
        Layer::Relu => match owned {
            Some(mut t) => {
                ops::relu_in_place(&mut t);
                t
            }
            None => ops::relu(arg(0)),
        },
        Layer::Flatten => match owned {
            Some(t) => {
                let n = t.len();
                t.reshape(vec![n]).map_err(op_err)?
            }
            None => ops::flatten(arg(0)),
        },
        Layer::Conv {
            stride, padding, bias, ..
        } => {
            let params = ConvParams {
                weights: w(0),
                bias: bias.then(|| w(1)),
                stride,
                padding,
            };
            ops::conv2d(x(), &params).map_err(op_err)?
        }
        Layer::MaxPool(g) => ops::maxpool2d(x(), g).map_err(op_err)?,
        Layer::AvgPool(g) => ops::avgpool2d(x(), g).map_err(op_err)?,
        Layer::BatchNorm { eps } => {
            let params = BatchNormParams {
                gamma: w(0),
                beta: w(1),
                running_mean: w(2),
                running_var: w(3),
                epsilon: eps,
            };
            ops::batchnorm_infer(x(), &params).map_err(op_err)?
        }
        Layer::Concat => {
            let parts: Vec<&Tensor> = (0..node.input_idx.len()).map(arg).collect();
            ops::concat_channels(&parts).map_err(op_err)?
        }
        Layer::Linear { bias, .. } => ops::linear(x(), w(0), bias.then(|| w(1))).map_err(op_err)?,
    };
    Ok(out)
}
