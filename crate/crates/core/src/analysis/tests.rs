use super::*;
use crate::graph::{DimSpec, Node};
use crate::tensor::Tensor;

use DimLattice::{Known, Nac};

fn dims(spec: &[&str]) -> Vec<DimSpec> {
    spec.iter()
        .map(|s| match s.parse::<u64>() {
            Ok(v) => DimSpec::Fixed(v),
            Err(_) => DimSpec::Sym(s.to_string()),
        })
        .collect()
}

fn conv(x: &str, w: &str, y: &str, pads: i64, stride: i64) -> Node {
    Node::new(OpKind::Conv, &[x, w], &[y])
        .with_attr("pads", vec![pads; 4])
        .with_attr("strides", vec![stride; 2])
}

fn weight(g: &mut Graph, id: &str, o: usize, i: usize, k: usize) {
    g.add_initializer(id, Tensor::zeros(DType::F32, vec![o, i, k, k]));
}

#[test]
fn static_chain_is_known_after_one_sweep() {
    let mut g = Graph::new("chain");
    g.add_input("x", DType::F32, dims(&["1", "3", "64", "64"]));
    weight(&mut g, "w1", 8, 3, 3);
    weight(&mut g, "w2", 4, 8, 3);
    g.add_node(conv("x", "w1", "a", 1, 1))
        .add_node(Node::new(OpKind::Relu, &["a"], &["b"]))
        .add_node(conv("b", "w2", "c", 0, 2));
    g.add_output("c");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("a"), &ShapeInfo::known(&[1, 8, 64, 64]));
    assert_eq!(r.shape_of("b"), &ShapeInfo::known(&[1, 8, 64, 64]));
    assert_eq!(r.shape_of("c"), &ShapeInfo::known(&[1, 4, 31, 31]));
    assert_eq!(r.iterations, 1);
    assert_eq!(r.sweeps, 2);
    assert!(r.diagnostics.is_empty());
}

#[test]
fn same_padding_conv_keeps_symbols() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["1", "3", "H", "W"]));
    weight(&mut g, "w", 16, 3, 3);
    weight(&mut g, "w2", 16, 16, 3);
    g.add_node(conv("x", "w", "y", 1, 1)).add_node(conv("y", "w2", "z", 1, 2));
    g.add_output("z");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_text("y"), "[1, 16, H, W]");
    assert_eq!(r.shape_text("z"), "[1, 16, (floordiv(H+1, 2)), (floordiv(W+1, 2))]");
}

#[test]
fn bindings_make_dims_known() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["1", "3", "H", "W"]));
    weight(&mut g, "w", 16, 3, 3);
    g.add_node(conv("x", "w", "y", 0, 2));
    g.add_output("y");
    let b: Bindings = [("H".to_string(), 7), ("W".to_string(), 9)].into();
    let r = run_to_fixpoint(&g, Some(&b));
    assert_eq!(r.shape_of("y"), &ShapeInfo::known(&[1, 16, 3, 4]));
}

#[test]
fn shape_exposes_symbolic_dims_as_values() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["1", "3", "H", "W"]));
    g.add_node(Node::new(OpKind::Shape, &["x"], &["s"]));
    g.add_output("s");
    let r = run_to_fixpoint(&g, None);
    let h = r.symbol_by_name("H").unwrap();
    let w = r.symbol_by_name("W").unwrap();
    assert_eq!(r.shape_of("s"), &ShapeInfo::known(&[4]));
    assert_eq!(
        r.value_of("s"),
        &ValueInfo::Elems(vec![Known(1), Known(3), DimLattice::Sym(h), DimLattice::Sym(w)])
    );
}

#[test]
fn reshape_infers_minus_one() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["2", "3", "4"]));
    g.add_initializer("t", Tensor::from_i64(vec![2], vec![1, -1]));
    g.add_node(Node::new(OpKind::Reshape, &["x", "t"], &["y"]));
    g.add_output("y");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("y"), &ShapeInfo::known(&[1, 24]));
}

#[test]
fn flatten_through_shape_gather_concat() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["N", "3", "H", "W"]));
    g.add_initializer("zero", Tensor::from_i64(vec![1], vec![0]));
    g.add_initializer("minus1", Tensor::from_i64(vec![1], vec![-1]));
    g.add_node(Node::new(OpKind::Shape, &["x"], &["s"]))
        .add_node(Node::new(OpKind::Gather, &["s", "zero"], &["n"]))
        .add_node(Node::new(OpKind::Concat, &["n", "minus1"], &["t"]).with_attr("axis", 0))
        .add_node(Node::new(OpKind::Reshape, &["x", "t"], &["y"]));
    g.add_output("y");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_text("y"), "[N, (3*H*W)]");
}

#[test]
fn nonzero_has_runtime_extent() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["5", "5"]));
    g.add_node(Node::new(OpKind::Nonzero, &["x"], &["nz"]))
        .add_node(Node::new(OpKind::Shape, &["nz"], &["s"]));
    g.add_output("s");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("nz"), &ShapeInfo::Ranked(vec![Known(2), Nac]));
    // The unknown extent becomes a run-time symbol once read by Shape.
    let s0 = r.symbol_by_name("s0").unwrap();
    assert_eq!(r.value_of("s"), &ValueInfo::Elems(vec![Known(2), DimLattice::Sym(s0)]));
    assert_eq!(
        r.symbols[s0.0 as usize].origin,
        SymbolOrigin::Runtime {
            tensor: "nz".into(),
            axis: 1
        }
    );
}

#[test]
fn switch_combine_joins_paths() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["1", "3", "64", "64"]));
    g.add_input("route", DType::I64, vec![]);
    g.add_initializer("up", Tensor::from_f32(vec![4], vec![1.0, 1.0, 2.0, 2.0]));
    g.add_node(Node::new(OpKind::Switch, &["x", "route"], &["p0", "p1"]))
        .add_node(Node::new(OpKind::Relu, &["p0"], &["a"]))
        .add_node(Node::new(OpKind::Upsample, &["p1", "up"], &["b"]))
        .add_node(Node::new(OpKind::Combine, &["a", "b"], &["y"]));
    g.add_output("y");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("b"), &ShapeInfo::known(&[1, 3, 128, 128]));
    assert_eq!(r.shape_of("y"), &ShapeInfo::Ranked(vec![Known(1), Known(3), Nac, Nac]));

    // A constant selector leaves the other path unreached.
    g.initializers.push(crate::graph::TensorDef::initializer("k", Tensor::from_i64(vec![], vec![1])));
    g.nodes[0].inputs[1] = "k".into();
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("a"), &ShapeInfo::Undef);
    assert_eq!(r.shape_of("y"), &ShapeInfo::known(&[1, 3, 128, 128]));
}

#[test]
fn if_merges_branches() {
    let mut then_g = Graph::new("then");
    then_g.add_node(Node::new(OpKind::Relu, &["x"], &["t"]));
    then_g.add_output("t");
    let mut else_g = Graph::new("else");
    else_g.add_initializer("t2", Tensor::from_i64(vec![2], vec![3, 4]));
    else_g.add_node(Node::new(OpKind::Reshape, &["x", "t2"], &["e"]));
    else_g.add_output("e");
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["2", "6"]));
    g.add_input("c", DType::Bool, vec![]);
    g.add_node(
        Node::new(OpKind::If, &["c"], &["y"])
            .with_subgraph("then_branch", then_g)
            .with_subgraph("else_branch", else_g),
    );
    g.add_output("y");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("t"), &ShapeInfo::known(&[2, 6]));
    assert_eq!(r.shape_of("e"), &ShapeInfo::known(&[3, 4]));
    assert_eq!(r.shape_of("y"), &ShapeInfo::Ranked(vec![Nac, Nac]));
}

/// Loop whose body appends a row to the carried tensor each iteration.
fn growing_loop() -> Graph {
    let mut body = Graph::new("body");
    body.add_input("i", DType::I64, vec![]);
    body.add_input("acc", DType::F32, dims(&["R", "4"]));
    body.add_node(Node::new(OpKind::Concat, &["acc", "row"], &["acc2"]).with_attr("axis", 0));
    body.add_output("acc2");
    let mut g = Graph::new("g");
    g.add_initializer("trip", Tensor::from_i64(vec![], vec![3]));
    g.add_initializer("row", Tensor::zeros(DType::F32, vec![1, 4]));
    g.add_input("init", DType::F32, dims(&["1", "4"]));
    g.add_node(Node::new(OpKind::Loop, &["trip", "init"], &["out"]).with_subgraph("body", body));
    g.add_output("out");
    g
}

#[test]
fn loop_widens_growing_axis() {
    let g = growing_loop();
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("out"), &ShapeInfo::Ranked(vec![Nac, Known(4)]));
    assert_eq!(r.shape_of("acc2"), &ShapeInfo::Ranked(vec![Nac, Known(4)]));
    assert!(r.sweeps <= sweep_bound(&g));
}

#[test]
fn contradictions_become_diagnostics() {
    let mut g = Graph::new("g");
    g.add_input("a", DType::F32, dims(&["2", "3"]));
    g.add_input("b", DType::F32, dims(&["4", "5"]));
    g.add_node(Node::new(OpKind::MatMul, &["a", "b"], &["c"]))
        .add_node(Node::new(OpKind::Relu, &["c"], &["d"]));
    g.add_output("d");
    let r = run_to_fixpoint(&g, None);
    assert_eq!(r.shape_of("c"), &ShapeInfo::Nac);
    assert_eq!(r.shape_of("d"), &ShapeInfo::Nac);
    assert_eq!(r.diagnostics.len(), 1);
    assert_eq!(r.diagnostics[0].node, "g/node 0 (MatMul)");
}

#[test]
fn monotone_and_deterministic() {
    let g = growing_loop();
    let mut prev: Option<BTreeMap<String, TensorInfo>> = None;
    let r = run_with_hook(&g, None, &mut |state| {
        if let Some(p) = &prev {
            for (id, info) in state {
                assert!(info.is_below(&p[id]), "{id} moved up");
            }
        }
        prev = Some(state.clone());
    });
    assert_eq!(r, run_to_fixpoint(&g, None));
}

#[test]
fn report_round_trips() {
    let mut g = Graph::new("g");
    g.add_input("x", DType::F32, dims(&["1", "3", "H", "W"]));
    weight(&mut g, "w", 4, 3, 3);
    g.add_node(conv("x", "w", "y", 2, 2))
        .add_node(Node::new(OpKind::Shape, &["y"], &["s"]))
        .add_node(Node::new(OpKind::Nonzero, &["y"], &["nz"]))
        .add_node(Node::new(OpKind::Shape, &["nz"], &["s2"]));
    g.add_output("s").add_output("s2");
    let r = run_to_fixpoint(&g, None);
    let text = write_report(&r);
    assert!(text.contains("\"(floordiv(H+1, 2)+1)\""), "{text}");
    assert_eq!(parse_report(&text).unwrap(), r);
}
