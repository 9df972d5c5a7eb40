use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{infer_dtypes, DimSpec, Graph};
use crate::ops::OpKind;

/// A broken graph invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Nodes (indices within `graph`) that depend on each other cyclically.
    Cycle { graph: String, nodes: Vec<usize> },
    /// A tensor id defined more than once (SSA).
    MultipleDefinitions { tensor: String, count: usize },
    UndefinedTensor { graph: String, node: usize, tensor: String },
    MissingOutput { graph: String, tensor: String },
    Signature { graph: String, node: usize, message: String },
    Initializer { tensor: String, message: String },
    Dtype { message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { graph, nodes } => write!(f, "{graph}: cycle through nodes {nodes:?}"),
            Violation::MultipleDefinitions { tensor, count } => {
                write!(f, "tensor `{tensor}` is defined {count} times")
            }
            Violation::UndefinedTensor { graph, node, tensor } => {
                write!(f, "{graph}/node {node} reads undefined tensor `{tensor}`")
            }
            Violation::MissingOutput { graph, tensor } => {
                write!(f, "{graph}: output `{tensor}` does not exist")
            }
            Violation::Signature { graph, node, message } => write!(f, "{graph}/node {node}: {message}"),
            Violation::Initializer { tensor, message } => write!(f, "initializer `{tensor}`: {message}"),
            Violation::Dtype { message } => write!(f, "dtype: {message}"),
        }
    }
}

/// Checks every graph invariant; an empty list means the graph is valid.
pub fn validate(g: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut defs: BTreeMap<String, usize> = BTreeMap::new();
    for id in g.all_tensor_ids() {
        *defs.entry(id).or_default() += 1;
    }
    for (tensor, count) in &defs {
        if *count > 1 {
            out.push(Violation::MultipleDefinitions {
                tensor: tensor.clone(),
                count: *count,
            });
        }
    }

    let mut cyclic = false;
    check_scope(g, &BTreeSet::new(), &mut out, &mut cyclic);

    // Dtype inference needs an acyclic, fully defined graph.
    if out.is_empty() {
        if let Err(message) = infer_dtypes(g) {
            out.push(Violation::Dtype { message });
        }
    }
    out
}

fn check_scope(g: &Graph, outer: &BTreeSet<String>, out: &mut Vec<Violation>, cyclic: &mut bool) {
    let mut visible = outer.clone();
    visible.extend(g.defined_here());

    for t in &g.initializers {
        let fixed: Option<Vec<u64>> = t
            .shape
            .iter()
            .map(|d| match d {
                DimSpec::Fixed(v) => Some(*v),
                DimSpec::Sym(_) => None,
            })
            .collect();
        match (fixed, &t.data) {
            (None, _) => out.push(Violation::Initializer {
                tensor: t.id.clone(),
                message: "symbolic dims".into(),
            }),
            (_, None) => out.push(Violation::Initializer {
                tensor: t.id.clone(),
                message: "missing data".into(),
            }),
            (Some(dims), Some(data)) => {
                let count: u64 = dims.iter().product();
                if count as usize != data.len() || data.dtype() != t.dtype {
                    out.push(Violation::Initializer {
                        tensor: t.id.clone(),
                        message: format!(
                            "declared {} {dims:?}, data is {} with {} elements",
                            t.dtype,
                            data.dtype(),
                            data.len()
                        ),
                    });
                }
            }
        }
    }

    for (i, n) in g.nodes.iter().enumerate() {
        for id in &n.inputs {
            if !visible.contains(id) {
                out.push(Violation::UndefinedTensor {
                    graph: g.name.clone(),
                    node: i,
                    tensor: id.clone(),
                });
            }
        }
        if let Some(message) = signature_problem(n) {
            out.push(Violation::Signature {
                graph: g.name.clone(),
                node: i,
                message,
            });
        }
        for sg in n.subgraphs.values() {
            check_scope(sg, &visible, out, cyclic);
        }
    }
    for id in &g.outputs {
        if !visible.contains(id) {
            out.push(Violation::MissingOutput {
                graph: g.name.clone(),
                tensor: id.clone(),
            });
        }
    }

    // Cycles: strongly connected components of the producer→consumer graph.
    let producers = g.producers();
    let mut dg: DiGraph<usize, ()> = DiGraph::new();
    let ids: Vec<_> = (0..g.nodes.len()).map(|i| dg.add_node(i)).collect();
    for (i, n) in g.nodes.iter().enumerate() {
        for dep in n.dependencies() {
            if let Some(&p) = producers.get(dep.as_str()) {
                dg.add_edge(ids[p], ids[i], ());
            }
        }
    }
    let mut cycles: Vec<Vec<usize>> = tarjan_scc(&dg)
        .into_iter()
        .filter(|scc| scc.len() > 1 || dg.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut nodes: Vec<usize> = scc.iter().map(|&ix| dg[ix]).collect();
            nodes.sort_unstable();
            nodes
        })
        .collect();
    cycles.sort();
    for nodes in cycles {
        *cyclic = true;
        out.push(Violation::Cycle {
            graph: g.name.clone(),
            nodes,
        });
    }
}

fn signature_problem(n: &super::Node) -> Option<String> {
    let sig = n.op.signature();
    if !sig.inputs.accepts(n.inputs.len()) {
        return Some(format!("{} expects {} inputs, has {}", n.op, sig.inputs, n.inputs.len()));
    }
    if !sig.outputs.accepts(n.outputs.len()) {
        return Some(format!("{} expects {} outputs, has {}", n.op, sig.outputs, n.outputs.len()));
    }
    for spec in sig.attrs.iter().filter(|s| s.required) {
        if !n.attrs.contains_key(spec.name) {
            return Some(format!("{} is missing attribute `{}`", n.op, spec.name));
        }
    }
    let names: Vec<&str> = n.subgraphs.keys().map(String::as_str).collect();
    if names != sig.subgraphs {
        return Some(format!("{} expects sub-graphs {:?}, has {:?}", n.op, sig.subgraphs, names));
    }
    match n.op {
        OpKind::If | OpKind::FusedRegion => {
            for (name, sg) in &n.subgraphs {
                if sg.outputs.len() != n.outputs.len() {
                    return Some(format!(
                        "sub-graph `{name}` has {} outputs, node has {}",
                        sg.outputs.len(),
                        n.outputs.len()
                    ));
                }
            }
        }
        OpKind::Loop => {
            let body = &n.subgraphs["body"];
            let carried = n.inputs.len() - 1;
            if body.inputs.len() != carried + 1 || body.outputs.len() != carried || n.outputs.len() != carried {
                return Some(format!(
                    "Loop with {carried} carried values needs body inputs (iter, carried...) and \
                     matching outputs; body has {} inputs, {} outputs, node has {} outputs",
                    body.inputs.len(),
                    body.outputs.len(),
                    n.outputs.len()
                ));
            }
        }
        OpKind::Combine => {}
        _ => {}
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;
    use crate::tensor::DType;

    fn relu(input: &str, output: &str) -> Node {
        Node::new(OpKind::Relu, &[input], &[output])
    }

    #[test]
    fn valid_chain() {
        let mut g = Graph::new("chain");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_node(relu("x", "a")).add_node(relu("a", "b")).add_node(relu("b", "c"));
        g.add_output("c");
        assert_eq!(validate(&g), vec![]);
    }

    #[test]
    fn two_node_cycle() {
        let mut g = Graph::new("cyc");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_node(Node::new(OpKind::Add, &["x", "b"], &["a"]));
        g.add_node(relu("a", "b"));
        g.add_output("b");
        let v = validate(&g);
        assert_eq!(
            v,
            vec![Violation::Cycle {
                graph: "cyc".into(),
                nodes: vec![0, 1]
            }]
        );
    }

    #[test]
    fn two_producers() {
        let mut g = Graph::new("ssa");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_node(relu("x", "t0")).add_node(relu("x", "t0"));
        g.add_output("t0");
        assert_eq!(
            validate(&g),
            vec![Violation::MultipleDefinitions {
                tensor: "t0".into(),
                count: 2
            }]
        );
    }

    #[test]
    fn undefined_and_missing() {
        let mut g = Graph::new("g");
        g.add_node(relu("nope", "y"));
        g.add_output("z");
        let v = validate(&g);
        assert!(v.contains(&Violation::UndefinedTensor {
            graph: "g".into(),
            node: 0,
            tensor: "nope".into()
        }));
        assert!(v.contains(&Violation::MissingOutput {
            graph: "g".into(),
            tensor: "z".into()
        }));
    }

    #[test]
    fn subgraph_captures_are_visible() {
        let mut then_g = Graph::new("then");
        then_g.add_node(relu("x", "t"));
        then_g.add_output("t");
        let mut else_g = Graph::new("else");
        else_g.add_node(Node::new(OpKind::Sigmoid, &["x"], &["e"]));
        else_g.add_output("e");
        let mut g = Graph::new("g");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_input("c", DType::Bool, vec![]);
        g.add_node(
            Node::new(OpKind::If, &["c"], &["y"])
                .with_subgraph("then_branch", then_g)
                .with_subgraph("else_branch", else_g),
        );
        g.add_output("y");
        assert_eq!(validate(&g), vec![]);
    }
}
