//! Operator fusion driven by shape analysis.
//!
//! Two operators can share one iteration space when the analysis shows their
//! outputs have the same shape, even if that shape is symbolic. Groups are
//! formed greedily in topological order over the top-level graph; nested
//! graphs are left alone.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisResult, DimLattice, ShapeInfo};
use crate::graph::{toposort_dfs, Graph, Node};
use crate::ops::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionKind {
    ElementwiseChain,
    AnchorPlusEpilogue,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::ElementwiseChain => "ElementwiseChain",
            FusionKind::AnchorPlusEpilogue => "AnchorPlusEpilogue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGroup {
    /// Node indices in dependency order; each member consumes the previous
    /// member's output.
    pub members: Vec<usize>,
    pub kind: FusionKind,
    pub anchor: Option<usize>,
    pub signature: ShapeInfo,
}

fn is_fusible_elementwise(op: OpKind) -> bool {
    matches!(op, OpKind::Add | OpKind::Mul | OpKind::Relu | OpKind::Sigmoid | OpKind::Round | OpKind::Cast)
}

fn is_anchor(op: OpKind) -> bool {
    matches!(op, OpKind::Conv | OpKind::MatMul)
}

/// A signature usable for fusion: ranked, with no `Nac` or undefined dims.
fn signature(a: &AnalysisResult, id: &str) -> Option<ShapeInfo> {
    let s = a.shape_of(id);
    let dims = s.dims()?;
    dims.iter()
        .all(|d| !d.is_nac() && !d.is_undef())
        .then(|| s.clone())
}

/// Scalar or single-axis initializer (for example per-channel scale).
fn is_small_broadcast(g: &Graph, id: &str) -> bool {
    g.initializer(id)
        .and_then(|t| t.data.as_ref())
        .is_some_and(|t| t.dims().iter().filter(|&&d| d != 1).count() <= 1)
}

struct Open {
    group: FusionGroup,
    tail: String,
}

pub fn find_fusion_groups(g: &Graph, a: &AnalysisResult) -> Vec<FusionGroup> {
    let Ok(order) = toposort_dfs(g) else {
        return Vec::new();
    };
    let consumers = g.consumers();
    let outputs: BTreeSet<&str> = g.outputs.iter().map(String::as_str).collect();
    let single_use = |id: &str| consumers.get(id).is_some_and(|c| c.len() == 1) && !outputs.contains(id);

    let mut groups: Vec<Open> = Vec::new();
    // Tensor id → index of the open group it is the tail of.
    let mut tails: HashMap<String, usize> = HashMap::new();

    for idx in order {
        let node = &g.nodes[idx];
        if node.outputs.len() != 1 || !node.subgraphs.is_empty() {
            continue;
        }
        let out = &node.outputs[0];
        let Some(sig) = signature(a, out) else {
            continue;
        };
        if is_fusible_elementwise(node.op) {
            let joined = node.inputs.iter().enumerate().find_map(|(k, id)| {
                let gi = *tails.get(id)?;
                if !single_use(id) || groups[gi].group.signature != sig {
                    return None;
                }
                let others_ok = node.inputs.iter().enumerate().all(|(j, other)| {
                    j == k || a.shape_of(other) == &sig || is_small_broadcast(g, other)
                });
                others_ok.then_some(gi)
            });
            match joined {
                Some(gi) => {
                    tails.remove(&groups[gi].tail);
                    groups[gi].group.members.push(idx);
                    groups[gi].tail = out.clone();
                    tails.insert(out.clone(), gi);
                }
                None => {
                    let ok = node
                        .inputs
                        .iter()
                        .all(|other| a.shape_of(other) == &sig || is_small_broadcast(g, other));
                    if ok {
                        tails.insert(out.clone(), groups.len());
                        groups.push(Open {
                            group: FusionGroup {
                                members: vec![idx],
                                kind: FusionKind::ElementwiseChain,
                                anchor: None,
                                signature: sig,
                            },
                            tail: out.clone(),
                        });
                    }
                }
            }
        } else if is_anchor(node.op) {
            tails.insert(out.clone(), groups.len());
            groups.push(Open {
                group: FusionGroup {
                    members: vec![idx],
                    kind: FusionKind::AnchorPlusEpilogue,
                    anchor: Some(idx),
                    signature: sig,
                },
                tail: out.clone(),
            });
        }
    }
    groups
        .into_iter()
        .map(|o| o.group)
        .filter(|gr| gr.members.len() > 1)
        .collect()
}

/// Replaces every group with one `FusedRegion` node whose body holds the
/// members. Tensor ids visible outside the groups are unchanged.
pub fn apply_fusion(g: &Graph, groups: &[FusionGroup]) -> Graph {
    let mut out = g.clone();
    let mut replace: HashMap<usize, Node> = HashMap::new();
    let mut drop: BTreeSet<usize> = BTreeSet::new();
    for (k, gr) in groups.iter().enumerate() {
        let mut members: Vec<Node> = gr.members.iter().map(|&i| g.nodes[i].clone()).collect();
        let inner: BTreeSet<&str> = members.iter().flat_map(|n| n.outputs.iter().map(String::as_str)).collect();
        let mut inputs: Vec<String> = Vec::new();
        for n in &members {
            for id in &n.inputs {
                if !inner.contains(id.as_str()) && !inputs.contains(id) {
                    inputs.push(id.clone());
                }
            }
        }
        let inputs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        // The region node defines the tail id; inside the body it is renamed
        // so every id keeps a single definition.
        let tail = members.last().expect("groups are non-empty").outputs[0].clone();
        let inner_tail = format!("{tail}.region");
        members.last_mut().unwrap().outputs[0] = inner_tail.clone();
        let mut body = Graph::new(format!("{}.fused{k}", g.name));
        body.outputs.push(inner_tail);
        let node = Node::new(OpKind::FusedRegion, &inputs, &[tail.as_str()])
            .with_attr("kind", gr.kind.name())
            .with_subgraph("body", Graph { nodes: members, ..body });
        replace.insert(gr.members[0], node);
        drop.extend(gr.members[1..].iter().copied());
    }
    out.nodes = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(i, n)| replace.remove(&i).unwrap_or_else(|| n.clone()))
        .collect();
    out
}

/// Dims of a signature as text, for reports.
pub fn signature_text(a: &AnalysisResult, s: &ShapeInfo) -> String {
    match s.dims() {
        Some(d) => format!(
            "[{}]",
            d.iter().map(|x: &DimLattice| a.dim_text(x)).collect::<Vec<_>>().join(", ")
        ),
        None => "nac".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::run_to_fixpoint;
    use crate::graph::{validate, DimSpec};
    use crate::tensor::{DType, Tensor};

    fn sym_input(g: &mut Graph) {
        g.add_input(
            "x",
            DType::F32,
            vec![
                DimSpec::Fixed(1),
                DimSpec::Fixed(3),
                DimSpec::Sym("H".into()),
                DimSpec::Sym("W".into()),
            ],
        );
    }

    #[test]
    fn conv_relu_is_one_anchor_group() {
        let mut g = Graph::new("g");
        sym_input(&mut g);
        g.add_initializer("w", Tensor::zeros(DType::F32, vec![16, 3, 3, 3]));
        g.add_node(Node::new(OpKind::Conv, &["x", "w"], &["c"]).with_attr("pads", vec![1; 4]))
            .add_node(Node::new(OpKind::Relu, &["c"], &["y"]));
        g.add_output("y");
        let a = run_to_fixpoint(&g, None);
        let groups = find_fusion_groups(&g, &a);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec![0, 1]);
        assert_eq!(groups[0].kind, FusionKind::AnchorPlusEpilogue);
        assert_eq!(signature_text(&a, &groups[0].signature), "[1, 16, H, W]");

        let f = apply_fusion(&g, &groups);
        assert_eq!(f.nodes.len(), 1);
        assert_eq!(f.nodes[0].op, OpKind::FusedRegion);
        assert_eq!(f.nodes[0].outputs, vec!["y"]);
        assert_eq!(f.outputs, g.outputs);
        assert!(validate(&f).is_empty(), "{:?}", validate(&f));
    }

    #[test]
    fn shared_intermediate_blocks_fusion() {
        let mut g = Graph::new("g");
        sym_input(&mut g);
        g.add_node(Node::new(OpKind::Add, &["x", "x"], &["a"]))
            .add_node(Node::new(OpKind::Relu, &["a"], &["b"]))
            .add_node(Node::new(OpKind::Sigmoid, &["a"], &["c"]));
        g.add_output("b").add_output("c");
        let a = run_to_fixpoint(&g, None);
        assert!(find_fusion_groups(&g, &a).is_empty());
    }

    #[test]
    fn symbolic_chain_of_four() {
        let mut g = Graph::new("g");
        sym_input(&mut g);
        g.add_initializer("s", Tensor::from_f32(vec![1, 3, 1, 1], vec![1.0, 2.0, 3.0]));
        g.add_node(Node::new(OpKind::Mul, &["x", "s"], &["a"]))
            .add_node(Node::new(OpKind::Relu, &["a"], &["b"]))
            .add_node(Node::new(OpKind::Add, &["b", "x"], &["c"]))
            .add_node(Node::new(OpKind::Sigmoid, &["c"], &["d"]));
        g.add_output("d");
        let a = run_to_fixpoint(&g, None);
        let groups = find_fusion_groups(&g, &a);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec![0, 1, 2, 3]);
        assert_eq!(groups[0].kind, FusionKind::ElementwiseChain);
        let f = apply_fusion(&g, &groups);
        assert_eq!(f.nodes.len(), 1);
        assert_eq!(f.nodes[0].inputs, vec!["x", "s"]);
        assert!(validate(&f).is_empty());
    }

    #[test]
    fn empty_group_list_is_identity() {
        let mut g = Graph::new("g");
        sym_input(&mut g);
        g.add_node(Node::new(OpKind::Shape, &["x"], &["s"]));
        g.add_output("s");
        assert_eq!(apply_fusion(&g, &[]), g);
    }

    #[test]
    fn nac_shapes_do_not_fuse() {
        let mut g = Graph::new("g");
        g.add_input("x", DType::F32, vec![DimSpec::Fixed(4), DimSpec::Fixed(4)]);
        g.add_node(Node::new(OpKind::Nonzero, &["x"], &["nz"]))
            .add_node(Node::new(OpKind::Cast, &["nz"], &["f"]).with_attr("to", "f32"))
            .add_node(Node::new(OpKind::Relu, &["f"], &["y"]));
        g.add_output("y");
        let a = run_to_fixpoint(&g, None);
        assert!(find_fusion_groups(&g, &a).is_empty());
    }
}
