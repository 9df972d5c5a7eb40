use super::*;
use crate::graph::DimSpec;

fn fixed(d: &[u64]) -> Vec<DimSpec> {
    d.iter().map(|&v| DimSpec::Fixed(v)).collect()
}

fn inputs(pairs: &[(&str, Tensor)]) -> TensorMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[3]));
    g.add_node(Node::new(OpKind::Relu, &["x"], &["y"]));
    g.add_output("y");
    let (out, _) = execute(&g, &inputs(&[("x", Tensor::from_f32(vec![3], vec![-1.0, 0.0, 2.0]))]), None).unwrap();
    assert_eq!(out["y"].as_f32().unwrap(), &[0.0, 0.0, 2.0]);
}

#[test]
fn depth_to_space_matches_index_formula() {
    let (c, r, h, w) = (3usize, 2usize, 8usize, 8usize);
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[1, (c * r * r) as u64, h as u64, w as u64]));
    g.add_node(Node::new(OpKind::DepthToSpace, &["x"], &["y"]).with_attr("blocksize", r as i64));
    g.add_output("y");
    let n = c * r * r * h * w;
    let x = Tensor::from_f32(vec![1, c * r * r, h, w], (0..n).map(|i| i as f32).collect());
    let (out, _) = execute(&g, &inputs(&[("x", x.clone())]), None).unwrap();
    let y = &out["y"];
    assert_eq!(y.dims(), &[1, c, h * r, w * r]);
    let (xs, ys) = (x.as_f32().unwrap(), y.as_f32().unwrap());
    // Inverse map: every output element comes from exactly one input element.
    let mut seen = vec![false; n];
    for ch in 0..c {
        for oy in 0..h * r {
            for ox in 0..w * r {
                let (i, j) = (oy % r, ox % r);
                let src = (((i * r + j) * c + ch) * h + oy / r) * w + ox / r;
                let v = ys[(ch * h * r + oy) * w * r + ox];
                assert_eq!(v, xs[src]);
                seen[v as usize] = true;
            }
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn conv_with_padding() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[1, 1, 3, 3]));
    g.add_initializer("w", Tensor::from_f32(vec![1, 1, 3, 3], vec![1.0; 9]));
    g.add_initializer("b", Tensor::from_f32(vec![1], vec![0.5]));
    g.add_node(Node::new(OpKind::Conv, &["x", "w", "b"], &["y"]).with_attr("pads", vec![1; 4]));
    g.add_output("y");
    let x = Tensor::from_f32(vec![1, 1, 3, 3], vec![1.0; 9]);
    let (out, _) = execute(&g, &inputs(&[("x", x)]), None).unwrap();
    assert_eq!(out["y"].as_f32().unwrap(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
}

fn three_paths() -> Graph {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[2]));
    g.add_input("k", DType::I64, vec![]);
    g.add_initializer("two", Tensor::from_f32(vec![1], vec![2.0]));
    g.add_node(Node::new(OpKind::Switch, &["x", "k"], &["p0", "p1", "p2"]))
        .add_node(Node::new(OpKind::Relu, &["p0"], &["a"]))
        .add_node(Node::new(OpKind::Mul, &["p1", "two"], &["b"]))
        .add_node(Node::new(OpKind::Sigmoid, &["p2"], &["c"]))
        .add_node(Node::new(OpKind::Combine, &["a", "b", "c"], &["y"]));
    g.add_output("y");
    g
}

#[test]
fn switch_runs_only_the_selected_path() {
    let g = three_paths();
    let x = Tensor::from_f32(vec![2], vec![-1.0, 3.0]);
    let (out, trace) = execute(&g, &inputs(&[("x", x), ("k", Tensor::scalar_i64(1))]), None).unwrap();
    assert_eq!(out["y"].as_f32().unwrap(), &[-2.0, 6.0]);
    let ops: Vec<OpKind> = trace.steps.iter().map(|s| s.op).collect();
    assert_eq!(ops, vec![OpKind::Switch, OpKind::Mul, OpKind::Combine]);
    assert_eq!(
        trace.decisions,
        vec![Decision::Switch {
            node: "g/node 0 (Switch)".into(),
            selector: 1
        }]
    );
    // Only the Mul output is ever allocated.
    assert_eq!(trace.allocations, 1);
    assert_eq!(trace.peak_bytes, 8);
    assert!(!trace.observed.contains_key("a"));

    let x = Tensor::from_f32(vec![2], vec![-1.0, 3.0]);
    let err = execute(&g, &inputs(&[("x", x), ("k", Tensor::scalar_i64(3))]), None).unwrap_err();
    assert_eq!(err.node, "g/node 0 (Switch)");
    assert!(err.message.contains("out of range"), "{err}");
}

#[test]
fn chain_peak_counts_producer_and_consumer() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[2]));
    g.add_node(Node::new(OpKind::Relu, &["x"], &["a"]))
        .add_node(Node::new(OpKind::Relu, &["a"], &["b"]))
        .add_node(Node::new(OpKind::Relu, &["b"], &["c"]));
    g.add_output("c");
    let x = Tensor::from_f32(vec![2], vec![1.0, 2.0]);
    let (_, trace) = execute(&g, &inputs(&[("x", x)]), None).unwrap();
    assert_eq!(trace.peak_bytes, 16);
    assert_eq!(trace.allocations, 3);
    let freed: usize = trace.steps.iter().map(|s| s.freed).sum();
    assert_eq!(freed, 16);
}

#[test]
fn plan_order_must_be_topological() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[2]));
    g.add_node(Node::new(OpKind::Relu, &["x"], &["a"]))
        .add_node(Node::new(OpKind::Relu, &["a"], &["b"]));
    g.add_output("b");
    let x = inputs(&[("x", Tensor::from_f32(vec![2], vec![1.0, 2.0]))]);
    assert!(execute(&g, &x, Some(&[1, 0])).is_err());
    assert!(execute(&g, &x, Some(&[0])).is_err());
    assert!(execute(&g, &x, Some(&[0, 1])).is_ok());
}

#[test]
fn loop_appends_rows() {
    let mut body = Graph::new("body");
    body.add_input("i", DType::I64, vec![]);
    body.add_input("acc", DType::F32, vec![DimSpec::Sym("R".into()), DimSpec::Fixed(2)]);
    body.add_node(Node::new(OpKind::Concat, &["acc", "row"], &["acc2"]).with_attr("axis", 0));
    body.add_output("acc2");
    let mut g = Graph::new("g");
    g.add_input("trip", DType::I64, vec![]);
    g.add_initializer("row", Tensor::from_f32(vec![1, 2], vec![7.0, 8.0]));
    g.add_input("init", DType::F32, fixed(&[1, 2]));
    g.add_node(Node::new(OpKind::Loop, &["trip", "init"], &["out"]).with_subgraph("body", body));
    g.add_output("out");
    let init = Tensor::from_f32(vec![1, 2], vec![0.0, 1.0]);
    let (out, trace) = execute(&g, &inputs(&[("trip", Tensor::scalar_i64(3)), ("init", init.clone())]), None).unwrap();
    assert_eq!(out["out"].dims(), &[4, 2]);
    assert_eq!(out["out"].as_f32().unwrap(), &[0.0, 1.0, 7.0, 8.0, 7.0, 8.0, 7.0, 8.0]);
    assert_eq!(trace.observed["acc2"], vec![vec![2, 2], vec![3, 2], vec![4, 2]]);
    assert_eq!(trace.values["i"], vec![vec![0], vec![1], vec![2]]);
    // Only the final accumulator survives.
    assert_eq!(trace.peak_bytes, (3 + 4) * 2 * 4);

    let (out, _) = execute(&g, &inputs(&[("trip", Tensor::scalar_i64(0)), ("init", init.clone())]), None).unwrap();
    assert_eq!(out["out"], init);

    let bad = Tensor::from_f32(vec![], vec![2.0]);
    let mut g2 = g.clone();
    g2.inputs[0].dtype = DType::F32;
    let err = execute(&g2, &inputs(&[("trip", bad), ("init", init)]), None).unwrap_err();
    assert!(err.message.contains("trip count"), "{err}");
}

#[test]
fn if_runs_one_branch() {
    let mut then_g = Graph::new("then");
    then_g.add_node(Node::new(OpKind::Relu, &["x"], &["t"]));
    then_g.add_output("t");
    let mut else_g = Graph::new("else");
    else_g.add_node(Node::new(OpKind::Sigmoid, &["x"], &["e"]));
    else_g.add_output("e");
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[2]));
    g.add_input("c", DType::Bool, vec![]);
    g.add_node(
        Node::new(OpKind::If, &["c"], &["y"])
            .with_subgraph("then_branch", then_g)
            .with_subgraph("else_branch", else_g),
    );
    g.add_output("y");
    let x = Tensor::from_f32(vec![2], vec![-1.0, 0.0]);
    let (out, trace) = execute(&g, &inputs(&[("x", x), ("c", Tensor::from_bool(vec![], vec![false]))]), None).unwrap();
    assert_eq!(out["y"].as_f32().unwrap(), &[1.0 / (1.0 + 1f32.exp()), 0.5]);
    assert_eq!(trace.steps.iter().map(|s| s.graph.as_str()).collect::<Vec<_>>(), vec!["else", "g"]);
    assert!(!trace.observed.contains_key("t"));
}

#[test]
fn fused_region_matches_unfused_bit_for_bit() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, fixed(&[1, 2, 5, 5]));
    let w: Vec<f32> = (0..36).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.13).collect();
    g.add_initializer("w", Tensor::from_f32(vec![2, 2, 3, 3], w));
    g.add_initializer("s", Tensor::from_f32(vec![1, 2, 1, 1], vec![0.5, -1.5]));
    g.add_node(Node::new(OpKind::Conv, &["x", "w"], &["c"]).with_attr("pads", vec![1; 4]))
        .add_node(Node::new(OpKind::Mul, &["c", "s"], &["m"]))
        .add_node(Node::new(OpKind::Relu, &["m"], &["r"]))
        .add_node(Node::new(OpKind::Add, &["r", "x"], &["y"]));
    g.add_output("y");

    let mut body = Graph::new("region");
    body.nodes = g.nodes.clone();
    body.add_output("y");
    let mut fg = Graph::new("g");
    fg.inputs = g.inputs.clone();
    fg.initializers = g.initializers.clone();
    fg.add_node(Node::new(OpKind::FusedRegion, &["x"], &["y"]).with_subgraph("body", body));
    fg.add_output("y");

    let x = Tensor::from_f32(vec![1, 2, 5, 5], (0..50).map(|i| (i as f32 * 0.37).sin()).collect());
    let xs = inputs(&[("x", x)]);
    let (a, ta) = execute(&g, &xs, None).unwrap();
    let (b, tb) = execute(&fg, &xs, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(tb.allocations, 1);
    assert!(tb.peak_bytes < ta.peak_bytes);
    assert_eq!(tb.observed["m"], vec![vec![1, 2, 5, 5]]);
}
