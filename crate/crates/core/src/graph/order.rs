use thiserror::Error;

use super::Graph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dependency cycle through node {node}")]
pub struct CycleError {
    pub node: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    Unvisited,
    Active,
    Done,
}

/// Depth-first topological order of `g`'s nodes.
///
/// The search starts from the graph outputs in declared order and visits each
/// node's producers in declared input order (sub-graph captures last). Nodes
/// are emitted in post-order, so every producer precedes its consumers. Nodes
/// not reachable from an output are appended afterwards, searched from the
/// lowest index.
pub fn toposort_dfs(g: &Graph) -> Result<Vec<usize>, CycleError> {
    let producers = g.producers();
    let deps: Vec<Vec<usize>> = g
        .nodes
        .iter()
        .map(|n| {
            n.dependencies()
                .iter()
                .filter_map(|id| producers.get(id.as_str()).copied())
                .collect()
        })
        .collect();

    let mut marks = vec![Mark::Unvisited; g.nodes.len()];
    let mut order = Vec::with_capacity(g.nodes.len());

    let roots = g
        .outputs
        .iter()
        .filter_map(|id| producers.get(id.as_str()).copied())
        .chain(0..g.nodes.len());

    // Explicit stack of (node, next dependency position).
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in roots {
        if marks[root] != Mark::Unvisited {
            continue;
        }
        marks[root] = Mark::Active;
        stack.push((root, 0));
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if let Some(&dep) = deps[node].get(top.1) {
                top.1 += 1;
                match marks[dep] {
                    Mark::Unvisited => {
                        marks[dep] = Mark::Active;
                        stack.push((dep, 0));
                    }
                    Mark::Active => return Err(CycleError { node: dep }),
                    Mark::Done => {}
                }
            } else {
                marks[node] = Mark::Done;
                order.push(node);
                stack.pop();
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;
    use crate::ops::OpKind;
    use crate::tensor::DType;

    fn relu(input: &str, output: &str) -> Node {
        Node::new(OpKind::Relu, &[input], &[output])
    }

    #[test]
    fn linear_chain() {
        let mut g = Graph::new("chain");
        g.add_input("x", DType::F32, vec![4.into()]);
        // Declared out of order on purpose.
        g.add_node(relu("b", "c"));
        g.add_node(relu("x", "a"));
        g.add_node(relu("a", "b"));
        g.add_output("c");
        assert_eq!(toposort_dfs(&g).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn diamond_follows_input_order() {
        let mut g = Graph::new("diamond");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_node(relu("x", "a"));
        g.add_node(relu("a", "b"));
        g.add_node(relu("a", "c"));
        g.add_node(Node::new(OpKind::Add, &["b", "c"], &["d"]));
        g.add_output("d");
        assert_eq!(toposort_dfs(&g).unwrap(), vec![0, 1, 2, 3]);

        g.nodes[3].inputs.swap(0, 1);
        assert_eq!(toposort_dfs(&g).unwrap(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn unreachable_nodes_are_appended() {
        let mut g = Graph::new("dead");
        g.add_input("x", DType::F32, vec![4.into()]);
        g.add_node(relu("x", "dead"));
        g.add_node(relu("x", "y"));
        g.add_output("y");
        assert_eq!(toposort_dfs(&g).unwrap(), vec![1, 0]);
    }

    #[test]
    fn cycle_is_reported() {
        let mut g = Graph::new("cycle");
        g.add_node(relu("b", "a"));
        g.add_node(relu("a", "b"));
        g.add_output("a");
        assert!(toposort_dfs(&g).is_err());
    }
}
