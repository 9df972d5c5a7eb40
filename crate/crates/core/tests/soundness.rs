use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dyshape::analysis::{consistency_violations, run_to_fixpoint, sweep_bound};
use dyshape::interp::execute;
use dyshape::ops::OpKind;
use dyshape::randgraph::random_graph;

#[test]
fn analysis_admits_every_observed_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ops = BTreeSet::new();
    let (mut precise, mut total) = (0, 0);
    for i in 0..200 {
        let s = random_graph(&mut rng, 20);
        assert!(s.graph.nodes.len() <= 20);
        ops.extend(s.graph.nodes.iter().map(|n| n.op));
        let a = run_to_fixpoint(&s.graph, None);
        assert!(a.sweeps <= sweep_bound(&s.graph), "graph {i}");
        let (_, trace) = execute(&s.graph, &s.inputs, None).unwrap();
        let v = consistency_violations(&s.graph, &a, &s.inputs, &trace);
        assert!(v.is_empty(), "graph {i}: {v:#?}");
        for id in trace.observed.keys() {
            total += 1;
            precise += a.shape_of(id).is_fully_constant() as usize;
        }
    }
    for op in [OpKind::Shape, OpKind::Reshape, OpKind::Switch, OpKind::Combine, OpKind::Nonzero, OpKind::Conv] {
        assert!(ops.contains(&op), "{op:?} never generated");
    }
    // Soundness alone is trivial with `nac` everywhere.
    assert!(precise * 10 >= total * 9, "{precise}/{total} shapes fully constant");
}
