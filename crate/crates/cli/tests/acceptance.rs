//! Acceptance checks. Each criterion prints one PASS/FAIL line with its
//! measurement and runtime; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::strategy::{Just, Strategy};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dyshape::analysis::{
    consistency_violations, join_dim, run_to_fixpoint, sweep_bound, Bindings, DimLattice, ShapeInfo, SymExpr, SymbolId,
};
use dyshape::demo::{compare_sizes, max_rel_diff};
use dyshape::fusion::{apply_fusion, find_fusion_groups};
use dyshape::graph::{DimSpec, Graph, Node};
use dyshape::interp::{execute, TensorMap};
use dyshape::ops::{classify, DynClass, OpKind};
use dyshape::patch::{self, synth, PathSpec, SplitConfig};
use dyshape::planner::{allocate, max_live, order_peak, overlap_violations, plan, tensor_sizes, Lifetime, Sizes};
use dyshape::randgraph::{random_fusible_graph, random_graph, random_static_graph};
use dyshape::tensor::{DType, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    use DynClass::*;
    let table: &[(&str, DynClass)] = &[
        ("Shape", ShapeDeterminesOutput),
        ("ConstantOfShape", ShapeDeterminesOutput),
        ("Eyelike", ShapeDeterminesOutput),
        ("Add", ShapeDeterminesShape),
        ("Mul", ShapeDeterminesShape),
        ("AveragePool", ShapeDeterminesShape),
        ("Cast", ShapeDeterminesShape),
        ("Concat", ShapeDeterminesShape),
        ("Conv", ShapeDeterminesShape),
        ("Gather", ShapeDeterminesShape),
        ("MatMul", ShapeDeterminesShape),
        ("MaxPool", ShapeDeterminesShape),
        ("ReduceSum", ShapeDeterminesShape),
        ("Relu", ShapeDeterminesShape),
        ("Round", ShapeDeterminesShape),
        ("Sigmoid", ShapeDeterminesShape),
        ("Softmax", ShapeDeterminesShape),
        ("DepthToSpace", ShapeDeterminesShape),
        ("Expand", ShapeValueDetermineShape),
        ("Range", ShapeValueDetermineShape),
        ("Reshape", ShapeValueDetermineShape),
        ("Resize", ShapeValueDetermineShape),
        ("Slice", ShapeValueDetermineShape),
        ("Upsample", ShapeValueDetermineShape),
        ("If", ExecDetermined),
        ("Loop", ExecDetermined),
        ("Nonzero", ExecDetermined),
        ("Switch", ExecDetermined),
        ("Combine", ExecDetermined),
    ];
    let wrong: Vec<&str> = table.iter().filter(|(op, c)| classify(op).ok() != Some(*c)).map(|(op, _)| *op).collect();
    let unsupported = ["NMS", "TopK", "OneHot", "GroupNormalization", "MaxUnpool", "", "conv"];
    let accepted: Vec<&str> = unsupported.iter().copied().filter(|op| classify(op).is_ok()).collect();
    check(
        wrong.is_empty() && accepted.is_empty(),
        format!("{} operators, mismatches {wrong:?}, wrongly accepted {accepted:?}", table.len()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut first = None;
    for i in 0..200 {
        let s = random_graph(&mut rng, 20);
        let a = run_to_fixpoint(&s.graph, None);
        let (_, trace) = execute(&s.graph, &s.inputs, None).map_err(|e| format!("graph {i}: {e}"))?;
        let v = consistency_violations(&s.graph, &a, &s.inputs, &trace);
        violations += v.len();
        if first.is_none() && !v.is_empty() {
            first = Some(format!("graph {i}: {}", v[0]));
        }
    }
    check(violations == 0, format!("200 graphs, {violations} violations {}", first.unwrap_or_default()))
}

fn arb_dim() -> impl Strategy<Value = DimLattice> {
    proptest::prop_oneof![
        Just(DimLattice::Undef),
        Just(DimLattice::Nac),
        (0i64..4).prop_map(DimLattice::Known),
        (0u32..3).prop_map(|i| DimLattice::Sym(SymbolId(i))),
        (0u32..2, 1i64..3)
            .prop_map(|(i, k)| DimLattice::from_expr(SymExpr::sym(SymbolId(i)).add(&SymExpr::lit(k)).unwrap())),
    ]
}

fn growing_loop() -> Graph {
    let mut body = Graph::new("body");
    body.add_input("i", DType::I64, vec![]);
    body.add_input("acc", DType::F32, vec![DimSpec::Sym("R".into()), DimSpec::Fixed(4)]);
    body.add_node(Node::new(OpKind::Concat, &["acc", "row"], &["acc2"]).with_attr("axis", 0));
    body.add_output("acc2");
    let mut g = Graph::new("g");
    g.add_input("trip", DType::I64, vec![]);
    g.add_initializer("row", Tensor::zeros(DType::F32, vec![1, 4]));
    g.add_input("init", DType::F32, vec![DimSpec::Fixed(1), DimSpec::Fixed(4)]);
    g.add_node(Node::new(OpKind::Loop, &["trip", "init"], &["out"]).with_subgraph("body", body));
    g.add_output("out");
    g
}

fn criterion_3() -> Outcome {
    const CASES: u32 = 10_000;
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let laws = [
        runner.run(&arb_dim(), |a| {
            proptest::prop_assert_eq!(join_dim(&a, &a), a);
            Ok(())
        })
        .map_err(|e| e.to_string()),
        runner.run(&(arb_dim(), arb_dim()), |(a, b)| {
            proptest::prop_assert_eq!(join_dim(&a, &b), join_dim(&b, &a));
            Ok(())
        })
        .map_err(|e| e.to_string()),
        runner.run(&(arb_dim(), arb_dim(), arb_dim()), |(a, b, c)| {
            proptest::prop_assert_eq!(join_dim(&join_dim(&a, &b), &c), join_dim(&a, &join_dim(&b, &c)));
            Ok(())
        })
        .map_err(|e| e.to_string()),
        runner.run(
            &(proptest::collection::vec(arb_dim(), 0..4), proptest::collection::vec(arb_dim(), 0..4)),
            |(a, b)| {
                let (sa, sb) = (ShapeInfo::Ranked(a), ShapeInfo::Ranked(b));
                proptest::prop_assert_eq!(sa.join(&sb), sb.join(&sa));
                proptest::prop_assert_eq!(sa.join(&sa), sa.clone());
                Ok(())
            },
        )
        .map_err(|e| e.to_string()),
    ];
    let failed: Vec<String> = laws.iter().filter_map(|r| r.clone().err()).collect();

    let mut graphs: Vec<Graph> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    graphs.extend((0..200).map(|_| random_graph(&mut rng, 20).graph));
    graphs.push(growing_loop());
    graphs.push(patch::build_routing_graph(&SplitConfig::default(), &[PathSpec::default(); 3], 0));
    let over: Vec<usize> = graphs
        .iter()
        .enumerate()
        .filter(|(_, g)| run_to_fixpoint(g, None).sweeps > sweep_bound(g))
        .map(|(i, _)| i)
        .collect();
    check(
        failed.is_empty() && over.is_empty(),
        format!("4 laws x {CASES} cases, failures {failed:?}; {} graphs, over sweep bound {over:?}", graphs.len()),
    )
}

/// Minimum peak over every topological order.
fn brute_force(g: &Graph, sizes: &Sizes) -> usize {
    fn go(g: &Graph, s: &Sizes, preds: &[Vec<usize>], order: &mut Vec<usize>, best: &mut usize) {
        if order.len() == g.nodes.len() {
            *best = (*best).min(order_peak(g, order, s));
            return;
        }
        for v in 0..g.nodes.len() {
            if !order.contains(&v) && preds[v].iter().all(|p| order.contains(p)) {
                order.push(v);
                go(g, s, preds, order, best);
                order.pop();
            }
        }
    }
    let producers = g.producers();
    let preds: Vec<Vec<usize>> = g
        .nodes
        .iter()
        .map(|n| n.dependencies().iter().filter_map(|id| producers.get(id.as_str()).copied()).collect())
        .collect();
    let mut best = usize::MAX;
    go(g, sizes, &preds, &mut Vec::new(), &mut best);
    best
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut matched = 0;
    let mut misses = Vec::new();
    for i in 0..100 {
        let g = random_static_graph(&mut rng, 8).graph;
        let a = run_to_fixpoint(&g, None);
        let sizes = tensor_sizes(&g, &a, &Bindings::new())?;
        if sizes.values().any(Option::is_none) {
            return Err(format!("graph {i} is not fully static"));
        }
        let p = plan(&g, &a, &Bindings::new(), 8)?;
        let best = brute_force(&g, &sizes);
        if p.peak_bytes == best {
            matched += 1;
        } else {
            misses.push((i, p.peak_bytes, best));
        }
    }
    check(matched == 100, format!("{matched}/100 optimal {misses:?}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut overlaps, mut out_of_bounds) = (0, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=40);
        let lts: Vec<Lifetime> = (0..n)
            .map(|i| {
                let first = rng.gen_range(0..30);
                Lifetime {
                    tensor: format!("t{i}"),
                    first,
                    last: first + rng.gen_range(0..8),
                    size: Some(rng.gen_range(1..4096)),
                }
            })
            .collect();
        let m = allocate(&lts);
        overlaps += overlap_violations(&lts, &m).len();
        let total: usize = lts.iter().filter_map(|l| l.size).sum();
        if m.arena_bytes < max_live(&lts) || m.arena_bytes > total {
            out_of_bounds += 1;
        }
    }
    check(
        overlaps == 0 && out_of_bounds == 0,
        format!("1000 instances, {overlaps} overlaps, {out_of_bounds} arenas out of bounds"),
    )
}

fn benchmark_graph() -> Graph {
    patch::build_routing_graph(&SplitConfig::default(), &[PathSpec::default(); 3], 0)
}

fn criterion_6() -> Outcome {
    let g = benchmark_graph();
    let a = run_to_fixpoint(&g, None);
    let fused = apply_fusion(&g, &find_fusion_groups(&g, &a));
    let mut worst = 0f64;
    let mut bad = Vec::new();
    let frame = synth::synth_frames(6, 1, 64, 64).remove(0);
    for route in 0..3 {
        let inputs = TensorMap::from([
            (patch::ROUTING_INPUT.to_string(), frame.crop(0, 0, 32, 32).to_tensor()),
            (patch::ROUTING_SELECTOR.to_string(), Tensor::scalar_i64(route)),
        ]);
        let (x, tx) = execute(&g, &inputs, None).map_err(|e| e.to_string())?;
        let (y, ty) = execute(&fused, &inputs, None).map_err(|e| e.to_string())?;
        worst = worst.max(max_rel_diff(&x[patch::ROUTING_OUTPUT], &y[patch::ROUTING_OUTPUT]));
        if ty.peak_bytes > tx.peak_bytes {
            bad.push(format!("route {route}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut groups = 0;
    for i in 0..50 {
        let s = random_fusible_graph(&mut rng, 12);
        let a = run_to_fixpoint(&s.graph, None);
        let found = find_fusion_groups(&s.graph, &a);
        groups += found.len();
        let f = apply_fusion(&s.graph, &found);
        let (x, tx) = execute(&s.graph, &s.inputs, None).map_err(|e| format!("graph {i}: {e}"))?;
        let (y, ty) = execute(&f, &s.inputs, None).map_err(|e| format!("fused graph {i}: {e}"))?;
        for (id, t) in &x {
            worst = worst.max(y.get(id).map_or(f64::INFINITY, |u| max_rel_diff(t, u)));
        }
        if ty.peak_bytes > tx.peak_bytes {
            bad.push(format!("graph {i}"));
        }
    }
    check(
        worst <= 1e-5 && bad.is_empty(),
        format!("benchmark + 50 graphs ({groups} groups), max rel diff {worst:e}, peak regressions {bad:?}"),
    )
}

fn criterion_7() -> Outcome {
    let g = benchmark_graph();
    let a = run_to_fixpoint(&g, None);
    let fused = apply_fusion(&g, &find_fusion_groups(&g, &a));
    let frame = synth::synth_frames(7, 1, 128, 128).remove(0);
    let mut lines = Vec::new();
    let mut pass = true;
    for (route, size) in [128, 64, 32].into_iter().enumerate() {
        let (c, _) = compare_sizes(&g, &fused, &frame, size, route, 10).map_err(|e| e.to_string())?;
        pass &= c.peak_reduction >= 1.2 && c.allocation_reduction >= 1.3 && c.max_rel_diff <= 1e-5;
        lines.push(format!(
            "{size}: peak {:.2}x ({} -> {}), allocations {:.2}x ({} -> {})",
            c.peak_reduction,
            c.naive.peak_bytes,
            c.planned.peak_bytes,
            c.allocation_reduction,
            c.naive.allocations,
            c.planned.allocations
        ));
    }
    check(pass, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let frames = synth::synth_frames(7, 10, 512, 512);
    let cfg = SplitConfig::default();
    let min_flat = frames.iter().map(synth::flat_fraction).fold(1.0, f64::min);
    let entries = patch::split_frames(&frames, &cfg).map_err(|e| e.to_string())?;
    let mut partition_errors = 0;
    for (i, _) in frames.iter().enumerate() {
        let mut hits = vec![0u8; 512 * 512];
        for e in entries.iter().filter(|e| e.frame == i) {
            for y in e.y..e.y + e.h {
                for x in e.x..e.x + e.w {
                    hits[y * 512 + x] += 1;
                }
            }
        }
        partition_errors += hits.iter().filter(|&&h| h != 1).count();
    }
    let lowered = [vec![35.0, 30.0], vec![40.0, 25.0], vec![30.0, 20.0], vec![20.0, 10.0]];
    let mut monotone = true;
    for f in &frames {
        let base = patch::split_frame(0, f, &cfg).map_err(|e| e.to_string())?.len();
        for t in &lowered {
            let lo = SplitConfig {
                thresholds: t.clone(),
                ..cfg.clone()
            };
            monotone &= patch::split_frame(0, f, &lo).map_err(|e| e.to_string())?.len() <= base;
        }
    }
    let r = patch::report(&entries, 32, 4);
    let ratio = r.patches as f64 / r.baseline_patches as f64;
    check(
        min_flat >= 0.5
            && ratio <= 0.5
            && partition_errors == 0
            && monotone
            && r.model_loads == 1
            && r.baseline_model_loads == 4,
        format!(
            "min flat {min_flat:.2}, {} vs {} grid patches ({ratio:.3}x), partition errors {partition_errors}, monotone {monotone}, model loads {} vs {}",
            r.patches, r.baseline_patches, r.model_loads, r.baseline_model_loads
        ),
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = Command::new(env!("CARGO_BIN_EXE_dyshape"))
            .args(["demo", "--seed", "7", "--out-dir"])
            .arg(tmp.path().join(name))
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        runs.push((out.stdout, files(&tmp.path().join(name))));
    }
    let same = runs[0] == runs[1];
    check(same && runs[0].1.contains_key("summary.json"), format!("{} files, identical {same}", runs[0].1.len()))
}

#[test]
fn acceptance() {
    let criteria: [(fn() -> Outcome, u64); 9] = [
        (criterion_1, 1),
        (criterion_2, 60),
        (criterion_3, 30),
        (criterion_4, 60),
        (criterion_5, 30),
        (criterion_6, 60),
        (criterion_7, 30),
        (criterion_8, 60),
        (criterion_9, 120),
    ];
    let mut failed = Vec::new();
    for (i, (f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        // Written to the raw handle so the lines survive output capture.
        writeln!(
            std::io::stderr(),
            "criterion {}: {} ({detail}; {:.2}s of {limit}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        )
        .unwrap();
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
