//! Computation-graph IR.
//!
//! Graphs are in SSA form: every tensor id is defined exactly once, either as
//! a graph input, an initializer or a node output. Nested sub-graphs (If
//! branches, Loop bodies, fused regions) may read tensors of enclosing graphs
//! by id.

mod order;
mod text;
mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::ops::OpKind;
use crate::tensor::{DType, Tensor};

pub use order::{toposort_dfs, CycleError};
pub use text::{parse_graph, parse_graph_in, serialize_graph, ParseError};
pub use validate::{validate, Violation};

/// A declared dimension of a graph input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    Fixed(u64),
    Sym(String),
}

impl From<u64> for DimSpec {
    fn from(v: u64) -> Self {
        DimSpec::Fixed(v)
    }
}

impl From<&str> for DimSpec {
    fn from(s: &str) -> Self {
        DimSpec::Sym(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorRole {
    Input,
    Initializer,
    Intermediate,
    Output,
}

/// Where an initializer's data was loaded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalData {
    pub file: String,
    pub byte_offset: u64,
}

/// A graph input or initializer declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDef {
    pub id: String,
    pub dtype: DType,
    pub shape: Vec<DimSpec>,
    /// Concrete data, present for initializers.
    pub data: Option<Tensor>,
    /// Sidecar file the data came from, kept so serialization preserves it.
    pub external: Option<ExternalData>,
}

impl TensorDef {
    pub fn input(id: impl Into<String>, dtype: DType, shape: Vec<DimSpec>) -> TensorDef {
        TensorDef {
            id: id.into(),
            dtype,
            shape,
            data: None,
            external: None,
        }
    }

    pub fn initializer(id: impl Into<String>, data: Tensor) -> TensorDef {
        TensorDef {
            id: id.into(),
            dtype: data.dtype(),
            shape: data.dims().iter().map(|&d| DimSpec::Fixed(d as u64)).collect(),
            data: Some(data),
            external: None,
        }
    }
}

/// Attribute value attached to a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Ints(Vec<i64>),
    Float(f64),
    Floats(Vec<f64>),
    Str(String),
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<Vec<i64>> for AttrValue {
    fn from(v: Vec<i64>) -> Self {
        AttrValue::Ints(v)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Float(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_string())
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attrs: Attrs,
    pub subgraphs: BTreeMap<String, Graph>,
}

impl Node {
    pub fn new(op: OpKind, inputs: &[&str], outputs: &[&str]) -> Node {
        Node {
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            attrs: Attrs::new(),
            subgraphs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: &str, value: impl Into<AttrValue>) -> Node {
        self.attrs.insert(name.to_string(), value.into());
        self
    }

    pub fn with_subgraph(mut self, name: &str, g: Graph) -> Node {
        self.subgraphs.insert(name.to_string(), g);
        self
    }

    pub fn attr_int(&self, name: &str) -> Option<i64> {
        match self.attrs.get(name) {
            Some(AttrValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_ints(&self, name: &str) -> Option<&[i64]> {
        match self.attrs.get(name) {
            Some(AttrValue::Ints(v)) => Some(v),
            _ => None,
        }
    }

    pub fn attr_float(&self, name: &str) -> Option<f64> {
        match self.attrs.get(name) {
            Some(AttrValue::Float(v)) => Some(*v),
            Some(AttrValue::Int(v)) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn attr_str(&self, name: &str) -> Option<&str> {
        match self.attrs.get(name) {
            Some(AttrValue::Str(s)) => Some(s),
            _ => None,
        }
    }

    /// Tensors read by nested sub-graphs that are defined outside them.
    pub fn captures(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for g in self.subgraphs.values() {
            for id in g.free_tensors() {
                if seen.insert(id.clone()) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// Declared inputs followed by sub-graph captures, without duplicates.
    pub fn dependencies(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::with_capacity(self.inputs.len());
        for id in self.inputs.iter().cloned().chain(self.captures()) {
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub name: String,
    pub inputs: Vec<TensorDef>,
    pub initializers: Vec<TensorDef>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Graph {
        Graph {
            name: name.into(),
            ..Graph::default()
        }
    }

    pub fn add_input(&mut self, id: &str, dtype: DType, shape: Vec<DimSpec>) -> &mut Self {
        self.inputs.push(TensorDef::input(id, dtype, shape));
        self
    }

    pub fn add_initializer(&mut self, id: &str, data: Tensor) -> &mut Self {
        self.initializers.push(TensorDef::initializer(id, data));
        self
    }

    pub fn add_node(&mut self, node: Node) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn add_output(&mut self, id: &str) -> &mut Self {
        self.outputs.push(id.to_string());
        self
    }

    pub fn initializer(&self, id: &str) -> Option<&TensorDef> {
        self.initializers.iter().find(|t| t.id == id)
    }

    pub fn input(&self, id: &str) -> Option<&TensorDef> {
        self.inputs.iter().find(|t| t.id == id)
    }

    /// Tensor id → index of the producing node (this graph only).
    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for o in &n.outputs {
                map.entry(o.as_str()).or_insert(i);
            }
        }
        map
    }

    /// Tensor id → indices of consuming nodes, including reads by sub-graphs.
    /// A node appears once per tensor even if it reads it several times.
    pub fn consumers(&self) -> HashMap<String, Vec<usize>> {
        let mut map: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for id in n.dependencies() {
                map.entry(id).or_default().push(i);
            }
        }
        map
    }

    pub fn role(&self, id: &str) -> TensorRole {
        if self.outputs.iter().any(|o| o == id) {
            TensorRole::Output
        } else if self.input(id).is_some() {
            TensorRole::Input
        } else if self.initializer(id).is_some() {
            TensorRole::Initializer
        } else {
            TensorRole::Intermediate
        }
    }

    /// Ids defined in this graph (not nested ones): inputs, initializers and
    /// node outputs.
    pub fn defined_here(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = self
            .inputs
            .iter()
            .chain(&self.initializers)
            .map(|t| t.id.clone())
            .collect();
        for n in &self.nodes {
            set.extend(n.outputs.iter().cloned());
        }
        set
    }

    /// Tensors referenced in this graph (or nested graphs) but defined
    /// outside it, in first-reference order.
    pub fn free_tensors(&self) -> Vec<String> {
        let defined = self.defined_here();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let refs = self
            .nodes
            .iter()
            .flat_map(|n| n.dependencies())
            .chain(self.outputs.iter().cloned());
        for id in refs {
            if !defined.contains(&id) && seen.insert(id.clone()) {
                out.push(id);
            }
        }
        out
    }

    /// Every tensor id in this graph and all nested graphs.
    pub fn all_tensor_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_ids(&mut out);
        out
    }

    fn collect_ids(&self, out: &mut Vec<String>) {
        out.extend(self.inputs.iter().map(|t| t.id.clone()));
        out.extend(self.initializers.iter().map(|t| t.id.clone()));
        for n in &self.nodes {
            out.extend(n.outputs.iter().cloned());
            for g in n.subgraphs.values() {
                g.collect_ids(out);
            }
        }
    }

    /// Finds an initializer by id in this graph or any nested graph.
    pub fn find_initializer(&self, id: &str) -> Option<&TensorDef> {
        if let Some(t) = self.initializer(id) {
            return Some(t);
        }
        self.nodes
            .iter()
            .flat_map(|n| n.subgraphs.values())
            .find_map(|g| g.find_initializer(id))
    }

    /// Total node count including nested graphs.
    pub fn node_count_deep(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| 1 + n.subgraphs.values().map(Graph::node_count_deep).sum::<usize>())
            .sum()
    }
}

/// Infers the dtype of every tensor (including nested graphs).
///
/// Captured tensors resolve through the enclosing scopes. Errors name the
/// offending node.
pub fn infer_dtypes(g: &Graph) -> Result<BTreeMap<String, DType>, String> {
    let mut map = BTreeMap::new();
    infer_dtypes_into(g, &mut map)?;
    Ok(map)
}

fn infer_dtypes_into(g: &Graph, map: &mut BTreeMap<String, DType>) -> Result<(), String> {
    for t in g.inputs.iter().chain(&g.initializers) {
        map.insert(t.id.clone(), t.dtype);
    }
    let order = toposort_dfs(g).map_err(|e| e.to_string())?;
    for idx in order {
        let n = &g.nodes[idx];
        let mut in_types = Vec::with_capacity(n.inputs.len());
        for id in &n.inputs {
            let d = map
                .get(id)
                .copied()
                .ok_or_else(|| format!("node {idx} ({}) reads undefined tensor `{id}`", n.op))?;
            in_types.push(d);
        }
        let outs = match n.op {
            OpKind::If | OpKind::FusedRegion => {
                let mut outs = Vec::new();
                for (name, sg) in &n.subgraphs {
                    infer_dtypes_into(sg, map)?;
                    let types: Vec<DType> = sg.outputs.iter().map(|o| map[o]).collect();
                    if outs.is_empty() {
                        outs = types;
                    } else if outs != types {
                        return Err(format!("node {idx} ({}): branch `{name}` output dtypes differ", n.op));
                    }
                }
                outs
            }
            OpKind::Loop => {
                let body = n
                    .subgraphs
                    .get("body")
                    .ok_or_else(|| format!("node {idx} (Loop) has no body"))?;
                infer_dtypes_into(body, map)?;
                body.outputs.iter().map(|o| map[o]).collect()
            }
            op => crate::ops::output_dtypes(op, &in_types, n.outputs.len(), |name| {
                n.attr_str(name).map(str::to_string)
            })
            .map_err(|e| format!("node {idx} ({op}): {e}"))?,
        };
        if outs.len() != n.outputs.len() {
            return Err(format!(
                "node {idx} ({}): {} outputs declared, sub-graph yields {}",
                n.op,
                n.outputs.len(),
                outs.len()
            ));
        }
        for (o, d) in n.outputs.iter().zip(outs) {
            map.insert(o.clone(), d);
        }
    }
    Ok(())
}
