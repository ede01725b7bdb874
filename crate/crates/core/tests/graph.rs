mod common;

use common::*;
use cutprobe::codec::FormatError;
use cutprobe::graph::{
    count_params, forward, forward_all, load_graph, load_weights, node_params, zoo, GraphError, ModelGraph, ParamCount,
    WeightStore,
};
use cutprobe::Tensor;
use serde_json::json;

fn random_input(graph: &ModelGraph, seed: u64) -> Tensor {
    let shape = graph.input_shape();
    let n = shape.iter().product();
    tensor(&shape, uniform(&mut rng(seed), n, 1.5))
}

#[test]
fn truncated_forward_equals_full_intermediate() {
    let g = zoo::probe_small();
    let w = WeightStore::random_for(&g, 8);
    let x = random_input(&g, 1);
    let all = forward_all(&g, &w, &x).unwrap();
    for label in g.cut_labels() {
        let t = g.truncate_at(&label).unwrap();
        let node = g.cut_points()[&label].clone();
        assert_eq!(t.output().id(), node);
        assert_eq!(forward(&t, &w, &x).unwrap(), all[&node], "{label}");
    }
    assert_eq!(forward(&g, &w, &x).unwrap(), all[g.output().id()]);
}

#[test]
fn probe_small_matches_composed_oracles() {
    let g = zoo::probe_small();
    let w = WeightStore::random_for(&g, 2);
    let x = random_input(&g, 3);
    let all = forward_all(&g, &w, &x).unwrap();
    let (mut cur, mut shape) = (x.data().to_vec(), (3usize, 64usize, 64usize));
    for (n, oc) in [(1, 16usize), (2, 32), (3, 64)] {
        let wt = w.get(&format!("conv{n}.weight")).unwrap().data();
        let b = w.get(&format!("conv{n}.bias")).unwrap().data();
        let conv = conv_oracle(&cur, shape, wt, (oc, 3, 3), Some(b), (1, 1), (1, 1));
        let relu: Vec<f32> = conv.iter().map(|&v| v.max(0.0) as f32).collect();
        let got = all[format!("relu{n}").as_str()].data();
        let err = got.iter().zip(&relu).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-4, "relu{n}: {err}");
        shape = (oc, shape.1, shape.2);
        let pooled = pool_oracle(&relu, shape, (2, 2), (2, 2), (0, 0), true);
        cur = pooled.iter().map(|&v| v as f32).collect();
        shape = (oc, shape.1 / 2, shape.2 / 2);
    }
    assert_eq!(all["pool3"].shape(), [64, 8, 8]);
}

/// Branching graph with batch-norm, average pooling, concat and a linear head.
fn mixed_graph() -> String {
    json!({
        "name": "mixed",
        "input_shape": [2, 7, 7],
        "nodes": [
            {"id": "input", "op": "input"},
            {"id": "a", "op": "conv", "inputs": ["input"], "attrs": {"out_channels": 3, "kernel": [3, 3], "padding": [1, 1], "bias": false}, "weight_keys": ["a.w"]},
            {"id": "a_bn", "op": "batchnorm", "inputs": ["a"], "attrs": {"eps": 0.001}, "weight_keys": ["bn.g", "bn.b", "bn.m", "bn.v"]},
            {"id": "a_relu", "op": "relu", "inputs": ["a_bn"]},
            {"id": "b", "op": "avgpool", "inputs": ["input"], "attrs": {"kernel": [3, 3], "stride": [1, 1], "padding": [1, 1]}},
            {"id": "cat", "op": "concat", "inputs": ["a_relu", "b"]},
            {"id": "mp", "op": "maxpool", "inputs": ["cat"], "attrs": {"kernel": [3, 3], "stride": [2, 2]}},
            {"id": "flat", "op": "flatten", "inputs": ["mp"]},
            {"id": "fc", "op": "linear", "inputs": ["flat"], "attrs": {"out_features": 4}, "weight_keys": ["fc.w", "fc.b"]}
        ],
        "cut_points": {"X": "cat", "Y": "fc"}
    })
    .to_string()
}

#[test]
fn branching_graph_matches_composed_oracles() {
    let json = mixed_graph();
    let g = load_graph(json.as_bytes()).unwrap();
    let mut r = rng(5);
    let mut w = WeightStore::new();
    w.insert("a.w", tensor(&[3, 2, 3, 3], uniform(&mut r, 54, 0.5)));
    w.insert("bn.g", tensor(&[3], uniform(&mut r, 3, 2.0)));
    w.insert("bn.b", tensor(&[3], uniform(&mut r, 3, 1.0)));
    w.insert("bn.m", tensor(&[3], uniform(&mut r, 3, 0.3)));
    w.insert("bn.v", tensor(&[3], vec![0.5, 1.0, 2.0]));
    w.insert("fc.w", tensor(&[4, 45], uniform(&mut r, 180, 0.3)));
    w.insert("fc.b", tensor(&[4], uniform(&mut r, 4, 0.3)));
    let x = tensor(&[2, 7, 7], uniform(&mut r, 98, 1.0));

    let d = |k: &str| w.get(k).unwrap().data();
    let a = conv_oracle(x.data(), (2, 7, 7), d("a.w"), (3, 3, 3), None, (1, 1), (1, 1));
    let a32: Vec<f32> = a.iter().map(|&v| v as f32).collect();
    let bn = bn_oracle(&a32, 3, d("bn.g"), d("bn.b"), d("bn.m"), d("bn.v"), 1e-3);
    let mut cat: Vec<f32> = bn.iter().map(|&v| v.max(0.0) as f32).collect();
    cat.extend(pool_oracle(x.data(), (2, 7, 7), (3, 3), (1, 1), (1, 1), false).iter().map(|&v| v as f32));
    let mp: Vec<f32> = pool_oracle(&cat, (5, 7, 7), (3, 3), (2, 2), (0, 0), true).iter().map(|&v| v as f32).collect();
    let fc = linear_oracle(&mp, d("fc.w"), Some(d("fc.b")), 4);

    let all = forward_all(&g, &w, &x).unwrap();
    let close = |got: &[f32], want: &[f32]| got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(close(all["cat"].data(), &cat) < 1e-5);
    let fc32: Vec<f32> = fc.iter().map(|&v| v as f32).collect();
    assert!(close(all["fc"].data(), &fc32) < 1e-5);
    assert_eq!(g.truncate_at("X").unwrap().nodes().len(), 6);

    let (learned, running) = param_formula(&json, None);
    assert_eq!(count_params(&g), ParamCount { learned, running_stats: running });
    assert_eq!(learned, 54 + 6 + 180 + 4);
}

#[test]
fn param_counts_match_per_layer_formula() {
    for (name, json) in [("vgg19", zoo::VGG19_JSON), ("inception_v3", zoo::INCEPTION_V3_JSON), ("probe_small", zoo::PROBE_SMALL_JSON)] {
        let g = zoo::load_bundled(name).unwrap();
        let (l, r) = param_formula(json, None);
        assert_eq!(count_params(&g), ParamCount { learned: l, running_stats: r }, "{name}");
        for label in g.cut_labels() {
            let (l, r) = param_formula(json, Some(&label));
            let t = g.truncate_at(&label).unwrap();
            assert_eq!(count_params(&t), ParamCount { learned: l, running_stats: r }, "{name} {label}");
        }
    }
}

#[test]
fn param_counts_match_reference_implementation() {
    // Totals of the reference implementations of these architectures
    // (classifier heads included, auxiliary classifier excluded).
    assert_eq!(count_params(&zoo::vgg19()).learned, 143_667_240);
    let inc = zoo::inception_v3();
    assert_eq!(count_params(&inc), ParamCount { learned: 23_834_568, running_stats: 34_432 });
    assert_eq!(count_params(&inc.truncate_at("A_I").unwrap()).learned, 172_672);
    assert_eq!(count_params(&inc.truncate_at("B_I").unwrap()).learned, 991_200);
    assert_eq!(count_params(&inc.truncate_at("C_I").unwrap()).learned, 8_965_856);
}

#[test]
fn count_params_is_additive_over_nodes() {
    for g in [zoo::vgg19(), zoo::inception_v3(), zoo::probe_small()] {
        let full = count_params(&g);
        for label in g.cut_labels() {
            let t = g.truncate_at(&label).unwrap();
            let rest = g
                .nodes()
                .iter()
                .filter(|n| t.node(n.id()).is_none())
                .map(node_params)
                .fold(ParamCount::default(), |a, b| a + b);
            assert_eq!(count_params(&t) + rest, full, "{} {label}", g.name());
        }
    }
}

#[test]
fn bundled_cut_shapes_agree_with_json_walk() {
    for (name, json) in [("vgg19", zoo::VGG19_JSON), ("inception_v3", zoo::INCEPTION_V3_JSON), ("probe_small", zoo::PROBE_SMALL_JSON)] {
        let g = zoo::load_bundled(name).unwrap();
        for label in g.cut_labels() {
            assert_eq!(g.cut_node(&label).unwrap().output_shape, cut_shape(json, &label), "{name} {label}");
        }
    }
}

#[test]
fn truncated_inception_runs_to_first_cut() {
    let g = zoo::inception_v3().truncate_at("A_I").unwrap();
    let w = WeightStore::random_for(&zoo::inception_v3(), 1);
    let out = forward(&g, &w, &random_input(&g, 2)).unwrap();
    assert_eq!(out.shape(), [192, 71, 71]);
    assert!(out.is_finite());
}

#[test]
fn weight_container_round_trips_bit_exactly() {
    let g = zoo::probe_small();
    let mut store = WeightStore::random_for(&g, 4);
    let special = vec![-0.0, f32::MIN_POSITIVE / 4.0, f32::MAX, -1.5e-45, 1.0, f32::EPSILON];
    store.insert("extra.tensor_ü", tensor(&[2, 3], special));
    let bytes = store.to_bytes().unwrap();
    let back = WeightStore::from_bytes(&bytes).unwrap();
    assert_eq!(back.len(), store.len());
    for (name, t) in store.iter() {
        let u = back.get(name).unwrap();
        assert_eq!(t.shape(), u.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t), bits(u), "{name}");
    }
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn weight_container_rejects_corruption() {
    let bytes = WeightStore::random_for(&zoo::probe_small(), 4).to_bytes().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(WeightStore::from_bytes(&bad_magic), Err(FormatError::BadMagic { .. })));
    let mut r = rng(9);
    for _ in 0..50 {
        let mut flipped = bytes.clone();
        let i = rand::Rng::gen_range(&mut r, 4..bytes.len());
        flipped[i] ^= 0x10;
        assert!(WeightStore::from_bytes(&flipped).is_err(), "flip at {i} accepted");
    }
    assert!(matches!(WeightStore::from_bytes(&bytes[..bytes.len() - 1]), Err(FormatError::Checksum { .. } | FormatError::Truncated { .. })));
    assert!(matches!(load_weights(b"CPWT", &zoo::probe_small()), Err(GraphError::Format(_))));
}

#[test]
fn malformed_descriptions_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&mixed_graph()).unwrap();
    v["nodes"][3]["inputs"] = json!(["nope"]);
    assert!(matches!(load_graph(v.to_string().as_bytes()), Err(GraphError::DanglingInput { .. })));

    let mut v: serde_json::Value = serde_json::from_str(&mixed_graph()).unwrap();
    v["nodes"][4]["id"] = json!("a");
    assert!(matches!(load_graph(v.to_string().as_bytes()), Err(GraphError::DuplicateId(_))));

    let mut v: serde_json::Value = serde_json::from_str(&mixed_graph()).unwrap();
    v["nodes"][5]["inputs"] = json!(["a_relu", "fc"]);
    assert!(load_graph(v.to_string().as_bytes()).is_err());

    assert!(matches!(load_graph(b"{\"name\": 3"), Err(GraphError::Parse(_))));

    let g = load_graph(mixed_graph().as_bytes()).unwrap();
    match g.truncate_at("Z") {
        Err(GraphError::UnknownLabel { valid, .. }) => assert_eq!(valid, ["X", "Y"]),
        other => panic!("unexpected {other:?}"),
    }
}
