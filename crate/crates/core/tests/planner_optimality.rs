use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dyshape::analysis::{run_to_fixpoint, Bindings};
use dyshape::graph::Graph;
use dyshape::interp::execute;
use dyshape::planner::{order_peak, plan, tensor_sizes, Sizes};
use dyshape::randgraph::random_static_graph;

/// Minimum peak over every topological order of the top-level graph.
fn brute_force(g: &Graph, sizes: &Sizes) -> usize {
    let producers = g.producers();
    let preds: Vec<Vec<usize>> = g
        .nodes
        .iter()
        .map(|n| n.dependencies().iter().filter_map(|id| producers.get(id.as_str()).copied()).collect())
        .collect();
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
    let mut best = usize::MAX;
    go(g, sizes, &preds, &mut Vec::new(), &mut best);
    best
}

#[test]
fn planned_peak_is_the_brute_force_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let s = random_static_graph(&mut rng, 8);
        let g = &s.graph;
        let a = run_to_fixpoint(g, None);
        let sizes = tensor_sizes(g, &a, &Bindings::new()).unwrap();
        assert!(sizes.values().all(Option::is_some), "graph {i} is not static");
        let p = plan(g, &a, &Bindings::new(), 8).unwrap();
        assert_eq!(p.peak_bytes, brute_force(g, &sizes), "graph {i}");
        // The interpreter agrees with the planner's liveness model.
        let (_, trace) = execute(g, &s.inputs, Some(&p.order)).unwrap();
        assert_eq!(trace.peak_bytes, p.peak_bytes, "graph {i}");
    }
}
