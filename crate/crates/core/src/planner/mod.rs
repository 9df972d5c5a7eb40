//! Static execution planning.
//!
//! The graph is cut at tensors whose byte size cannot be resolved before run
//! time. Each resulting sub-graph is ordered for minimum peak activation
//! memory and the whole order gets static buffer offsets.

mod alloc;
mod order;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

pub use alloc::{allocate, max_live, overlap_violations, Lifetime, MemoryPlan, Placement};
pub use order::{plan_exhaustive, plan_heuristic, plan_order, OrderProblem, PlanMode, MAX_EXHAUSTIVE};

use crate::analysis::{AnalysisResult, Bindings};
use crate::graph::{infer_dtypes, toposort_dfs, Graph};
use crate::ops::OpKind;

/// Byte size of every tensor produced by a top-level node; `None` when it
/// depends on values only known at run time.
pub type Sizes = BTreeMap<String, Option<usize>>;

/// Switch and Combine hand their operand through; their outputs occupy no
/// memory of their own and always separate sub-graphs.
fn is_view(op: OpKind) -> bool {
    matches!(op, OpKind::Switch | OpKind::Combine)
}

/// Bytes of every graph input and node output, `None` where unresolved.
pub fn tensor_sizes(g: &Graph, a: &AnalysisResult, bindings: &Bindings) -> Result<Sizes, String> {
    let dtypes = infer_dtypes(g)?;
    let lookup = a.lookup(bindings);
    let bytes = |id: &str| {
        a.shape_of(id).eval(&lookup).and_then(|d| {
            d.iter()
                .try_fold(1usize, |acc, &x| usize::try_from(x).ok().and_then(|x| acc.checked_mul(x)))
                .and_then(|e| e.checked_mul(dtypes[id].byte_size()))
        })
    };
    let mut out = Sizes::new();
    for def in &g.inputs {
        out.insert(def.id.clone(), bytes(&def.id));
    }
    for n in &g.nodes {
        for id in &n.outputs {
            let size = if is_view(n.op) {
                Some(0)
            } else {
                bytes(id)
            };
            out.insert(id.clone(), size);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGraph {
    /// Top-level node indices, ascending.
    pub nodes: Vec<usize>,
    /// Tensors read from outside the sub-graph (graph inputs included,
    /// initializers excluded).
    pub inputs: Vec<String>,
    /// Tensors produced here and read elsewhere or returned by the graph.
    pub outputs: Vec<String>,
    /// Every tensor produced here has a resolved size.
    pub all_static: bool,
}

/// Splits the top-level graph into maximal connected regions joined only
/// by tensors of resolved size, graph inputs included.
pub fn partition(g: &Graph, sizes: &Sizes) -> Vec<SubGraph> {
    let producers = g.producers();
    let consumers = g.consumers();
    let mut uf = UnionFind::<usize>::new(g.nodes.len());
    for (p, n) in g.nodes.iter().enumerate() {
        if is_view(n.op) {
            continue;
        }
        for id in &n.outputs {
            if sizes.get(id).copied().flatten().is_none() {
                continue;
            }
            for &c in consumers.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                if !is_view(g.nodes[c].op) {
                    uf.union(p, c);
                }
            }
        }
    }
    // Readers of one resolved graph input share a region too.
    for def in &g.inputs {
        if sizes.get(&def.id).copied().flatten().is_none() {
            continue;
        }
        let readers: Vec<usize> = consumers
            .get(&def.id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(|&c| !is_view(g.nodes[c].op))
            .collect();
        for w in readers.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    // A fully static graph without routing nodes is scheduled as a whole,
    // so regions that share no tensor are still ordered jointly.
    let whole = g.nodes.iter().all(|n| {
        !is_view(n.op) && n.outputs.iter().all(|id| sizes.get(id).copied().flatten().is_some())
    });
    if whole {
        for i in 1..g.nodes.len() {
            uf.union(0, i);
        }
    }
    let topo = toposort_dfs(g).unwrap_or_else(|_| (0..g.nodes.len()).collect());
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut first_seen: Vec<usize> = Vec::new();
    for &i in &topo {
        let r = uf.find(i);
        if !by_root.contains_key(&r) {
            first_seen.push(r);
        }
        by_root.entry(r).or_default().push(i);
    }
    let graph_outputs: BTreeSet<&str> = g.outputs.iter().map(String::as_str).collect();
    first_seen
        .into_iter()
        .map(|r| {
            let mut nodes = by_root.remove(&r).unwrap();
            nodes.sort_unstable();
            let inside: BTreeSet<usize> = nodes.iter().copied().collect();
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            let mut all_static = true;
            for &i in &nodes {
                for id in g.nodes[i].dependencies() {
                    let external = producers.get(id.as_str()).is_none_or(|p| !inside.contains(p));
                    if external && g.initializer(&id).is_none() && !inputs.contains(&id) {
                        inputs.push(id);
                    }
                }
                for id in &g.nodes[i].outputs {
                    all_static &= sizes.get(id).copied().flatten().is_some();
                    let used_outside = consumers.get(id).is_some_and(|cs| cs.iter().any(|c| !inside.contains(c)));
                    if used_outside || graph_outputs.contains(id.as_str()) {
                        outputs.push(id.clone());
                    }
                }
            }
            SubGraph {
                nodes,
                inputs,
                outputs,
                all_static,
            }
        })
        .collect()
}

/// Scheduling problem over `nodes` (top-level indices). Tensors read after
/// the scheduled nodes, or returned by the graph, are pinned. Unresolved
/// sizes count as zero; they live in the run-time pool.
pub fn order_problem(g: &Graph, nodes: &[usize], sizes: &Sizes) -> OrderProblem {
    let inside: BTreeSet<usize> = nodes.iter().copied().collect();
    let consumers = g.consumers();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut p = OrderProblem::default();
    let mut intern = |id: &str, p: &mut OrderProblem| -> usize {
        if let Some(&i) = index.get(id) {
            return i;
        }
        let i = p.sizes.len();
        index.insert(id.to_string(), i);
        // Graph inputs are owned by the caller.
        let counted = g.input(id).is_none();
        p.sizes.push(if counted { sizes.get(id).copied().flatten().unwrap_or(0) } else { 0 });
        let outside = consumers.get(id).is_some_and(|cs| cs.iter().any(|c| !inside.contains(c)));
        p.pinned.push(outside || g.outputs.iter().any(|o| o == id));
        i
    };
    for &n in nodes {
        let node = &g.nodes[n];
        let outs: Vec<usize> = node.outputs.iter().map(|id| intern(id, &mut p)).collect();
        let ins: Vec<usize> = node.dependencies().iter().map(|id| intern(id, &mut p)).collect();
        p.produces.push(outs);
        p.consumes.push(ins);
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubPlan {
    /// Top-level node indices in execution order.
    pub order: Vec<usize>,
    pub mode: PlanMode,
    pub peak_bytes: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecPlan {
    pub graph: String,
    pub bindings: Bindings,
    pub max_exhaustive: usize,
    /// Global node order, a topological order of the top-level graph.
    pub order: Vec<usize>,
    pub subgraphs: Vec<SubPlan>,
    pub lifetimes: Vec<Lifetime>,
    /// Peak live activation bytes over the global order.
    pub peak_bytes: usize,
    pub memory: MemoryPlan,
}

pub fn plan(g: &Graph, a: &AnalysisResult, bindings: &Bindings, max_exhaustive: usize) -> Result<ExecPlan, String> {
    let sizes = tensor_sizes(g, a, bindings)?;
    let subs = partition(g, &sizes);
    let mut plans = Vec::with_capacity(subs.len());
    for sub in &subs {
        let any_static = sub
            .nodes
            .iter()
            .flat_map(|&i| &g.nodes[i].outputs)
            .any(|id| sizes.get(id).copied().flatten().is_some_and(|s| s > 0));
        let problem = order_problem(g, &sub.nodes, &sizes);
        let (local, peak, mode) = if !sub.all_static && !any_static {
            let o: Vec<usize> = (0..sub.nodes.len()).collect();
            let topo = topo_within(&problem, o);
            let peak = problem.peak(&topo);
            (topo, peak, PlanMode::DeferredDynamic)
        } else {
            plan_order(&problem, max_exhaustive)
        };
        plans.push(SubPlan {
            order: local.iter().map(|&k| sub.nodes[k]).collect(),
            mode,
            peak_bytes: peak,
            inputs: sub.inputs.clone(),
            outputs: sub.outputs.clone(),
        });
    }
    let order = merge_orders(g, &plans);
    let global = order_problem(g, &order, &sizes);
    let local: Vec<usize> = (0..order.len()).collect();
    let peak_bytes = global.peak(&local);
    let lifetimes = lifetimes(g, &order, &sizes);
    let memory = allocate(&lifetimes);
    Ok(ExecPlan {
        graph: g.name.clone(),
        bindings: bindings.clone(),
        max_exhaustive,
        order,
        subgraphs: plans,
        lifetimes,
        peak_bytes,
        memory,
    })
}

/// Stable topological order of a problem, preferring the given sequence.
fn topo_within(p: &OrderProblem, prefer: Vec<usize>) -> Vec<usize> {
    let preds = p.preds();
    let mut done = vec![false; p.node_count()];
    let mut out = Vec::with_capacity(prefer.len());
    while out.len() < prefer.len() {
        let next = *prefer
            .iter()
            .find(|&&v| !done[v] && preds[v].iter().all(|&q| done[q]))
            .expect("acyclic");
        done[next] = true;
        out.push(next);
    }
    out
}

/// Concatenates the sub-graph orders, interleaving only where a later
/// sub-graph must feed an earlier one.
fn merge_orders(g: &Graph, plans: &[SubPlan]) -> Vec<usize> {
    let n = g.nodes.len();
    let mut rank = vec![(0usize, 0usize); n];
    for (s, p) in plans.iter().enumerate() {
        for (k, &v) in p.order.iter().enumerate() {
            rank[v] = (s, k);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let preds = order_problem(g, &all, &Sizes::new()).preds();
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut succ = vec![Vec::new(); n];
    for (v, ps) in preds.iter().enumerate() {
        for &q in ps {
            succ[q].push(v);
        }
    }
    let mut heap: BinaryHeap<Reverse<((usize, usize), usize)>> =
        (0..n).filter(|&v| indeg[v] == 0).map(|v| Reverse((rank[v], v))).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(Reverse((_, v))) = heap.pop() {
        out.push(v);
        for &s in &succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse((rank[s], s)));
            }
        }
    }
    out
}

/// Live interval of every produced tensor under `order`.
pub fn lifetimes(g: &Graph, order: &[usize], sizes: &Sizes) -> Vec<Lifetime> {
    let mut pos = vec![0; g.nodes.len()];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let consumers = g.consumers();
    let end = order.len().saturating_sub(1);
    let mut out = Vec::new();
    for &v in order {
        for id in &g.nodes[v].outputs {
            let first = pos[v];
            let last = if g.outputs.contains(id) {
                end
            } else {
                consumers
                    .get(id)
                    .and_then(|cs| cs.iter().map(|&c| pos[c]).max())
                    .unwrap_or(first)
            };
            out.push(Lifetime {
                tensor: id.clone(),
                first,
                last,
                size: sizes.get(id).copied().flatten(),
            });
        }
    }
    out
}

/// Peak activation bytes of `order` under the same liveness model.
pub fn order_peak(g: &Graph, order: &[usize], sizes: &Sizes) -> usize {
    let p = order_problem(g, order, sizes);
    let local: Vec<usize> = (0..order.len()).collect();
    p.peak(&local)
}

pub fn write_plan(p: &ExecPlan) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("plan serializes");
    s.push('\n');
    s
}

pub fn parse_plan(text: &str) -> Result<ExecPlan, serde_json::Error> {
    serde_json::from_str(text)
}
