//! Reference interpreter with memory accounting.
//!
//! Activation buffers are reference counted. Graph inputs and initializers
//! are resident and never counted. Every other tensor is counted from the
//! step that produces it until the step of its last use (graph outputs stay
//! live to the end), which is the same liveness model the planner uses, so
//! observed and planned peaks can be compared directly. Switch and Combine
//! hand their operand through without copying.

mod fused;
pub mod kernels;

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use serde::Serialize;

use crate::analysis::node_path;
use crate::graph::{infer_dtypes, toposort_dfs, DimSpec, Graph, Node};
use crate::ops::OpKind;
use crate::tensor::{DType, Tensor, TensorData};

pub type TensorMap = BTreeMap<String, Tensor>;

/// Integer tensors up to this many elements have their values traced.
pub const MAX_TRACED_VALUES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{node}: {message}")]
pub struct ExecError {
    pub node: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub graph: String,
    pub node: usize,
    pub op: OpKind,
    pub outputs: Vec<Vec<usize>>,
    pub allocated: usize,
    pub freed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    If { node: String, taken: String },
    Switch { node: String, selector: usize },
    Loop { node: String, trips: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecTrace {
    pub steps: Vec<StepRecord>,
    pub peak_bytes: usize,
    /// Number of counted buffers created.
    pub allocations: usize,
    pub decisions: Vec<Decision>,
    /// Dims of every bound tensor, once per execution of its definition.
    pub observed: BTreeMap<String, Vec<Vec<usize>>>,
    /// Contents of small integer tensors, parallel to `observed`.
    pub values: BTreeMap<String, Vec<Vec<i64>>>,
}

impl ExecTrace {
    fn observe(&mut self, id: &str, t: &Tensor) {
        self.observed.entry(id.to_string()).or_default().push(t.dims().to_vec());
        if let TensorData::I64(v) = t.data() {
            if v.len() <= MAX_TRACED_VALUES {
                self.values.entry(id.to_string()).or_default().push(v.clone());
            }
        }
    }

    /// Ids of the top-level and nested nodes that executed, as `graph/index`.
    pub fn executed(&self) -> Vec<(String, usize)> {
        self.steps.iter().map(|s| (s.graph.clone(), s.node)).collect()
    }
}

struct Buf {
    tensor: Tensor,
    counted: bool,
}

type Val = Rc<Buf>;

/// Runs `g` on concrete inputs, in `order` if given (top-level node indices)
/// or depth-first topological order otherwise.
pub fn execute(g: &Graph, inputs: &TensorMap, order: Option<&[usize]>) -> Result<(TensorMap, ExecTrace), ExecError> {
    let top_err = |message: String| ExecError {
        node: g.name.clone(),
        message,
    };
    let dtypes = infer_dtypes(g).map_err(top_err)?;
    check_inputs(g, inputs).map_err(top_err)?;
    let order = match order {
        Some(o) => {
            check_order(g, o).map_err(top_err)?;
            o.to_vec()
        }
        None => toposort_dfs(g).map_err(|e| top_err(e.to_string()))?,
    };
    let mut ex = Exec {
        dtypes,
        frames: Vec::new(),
        live: 0,
        trace: ExecTrace::default(),
    };
    let mut frame = HashMap::new();
    for t in &g.inputs {
        let v = inputs[&t.id].clone();
        ex.trace.observe(&t.id, &v);
        frame.insert(t.id.clone(), Rc::new(Buf { tensor: v, counted: false }));
    }
    let outs = ex.run_graph(g, frame, &order)?;
    let mut result = TensorMap::new();
    for (id, v) in g.outputs.iter().zip(outs) {
        let v = v.ok_or_else(|| top_err(format!("output `{id}` was not produced")))?;
        result.insert(id.clone(), v.tensor.clone());
    }
    Ok((result, ex.trace))
}

fn check_inputs(g: &Graph, inputs: &TensorMap) -> Result<(), String> {
    let mut bound: HashMap<&str, usize> = HashMap::new();
    for t in &g.inputs {
        let v = inputs.get(&t.id).ok_or_else(|| format!("missing input `{}`", t.id))?;
        if v.dtype() != t.dtype {
            return Err(format!("input `{}` is {}, expected {}", t.id, v.dtype(), t.dtype));
        }
        if v.rank() != t.shape.len() {
            return Err(format!("input `{}` has rank {}, expected {}", t.id, v.rank(), t.shape.len()));
        }
        for (axis, (spec, &d)) in t.shape.iter().zip(v.dims()).enumerate() {
            match spec {
                DimSpec::Fixed(n) if *n as usize != d => {
                    return Err(format!("input `{}` axis {axis} is {d}, expected {n}", t.id))
                }
                DimSpec::Sym(s) => {
                    if let Some(&prev) = bound.get(s.as_str()).filter(|&&p| p != d) {
                        return Err(format!("symbol {s} bound to both {prev} and {d}"));
                    }
                    bound.insert(s, d);
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn check_order(g: &Graph, order: &[usize]) -> Result<(), String> {
    let mut pos = vec![usize::MAX; g.nodes.len()];
    for (p, &i) in order.iter().enumerate() {
        if i >= g.nodes.len() || pos[i] != usize::MAX {
            return Err(format!("plan order is not a permutation of the {} nodes", g.nodes.len()));
        }
        pos[i] = p;
    }
    if order.len() != g.nodes.len() {
        return Err(format!("plan order has {} steps for {} nodes", order.len(), g.nodes.len()));
    }
    let producers = g.producers();
    for (i, n) in g.nodes.iter().enumerate() {
        for id in n.dependencies() {
            if let Some(&p) = producers.get(id.as_str()) {
                if pos[p] > pos[i] {
                    return Err(format!("plan runs node {i} before its producer {p}"));
                }
            }
        }
    }
    Ok(())
}

struct Exec {
    dtypes: BTreeMap<String, DType>,
    frames: Vec<HashMap<String, Val>>,
    live: usize,
    trace: ExecTrace,
}

impl Exec {
    fn lookup(&self, id: &str) -> Option<&Val> {
        self.frames.iter().rev().find_map(|f| f.get(id))
    }

    fn alloc(&mut self, id: &str, t: Tensor, allocated: &mut usize) -> Val {
        self.trace.observe(id, &t);
        self.live += t.byte_size();
        *allocated += t.byte_size();
        self.trace.allocations += 1;
        Rc::new(Buf { tensor: t, counted: true })
    }

    /// Drops one reference; frees the bytes when it was the last.
    fn release(&mut self, v: Val) -> usize {
        if v.counted && Rc::strong_count(&v) == 1 {
            let b = v.tensor.byte_size();
            self.live -= b;
            b
        } else {
            0
        }
    }

    /// Runs the nodes of `g` in `order` in a fresh frame seeded with `frame`.
    /// Returns the graph outputs (`None` where not produced) and pops the
    /// frame, freeing everything else defined in it.
    fn run_graph(
        &mut self,
        g: &Graph,
        mut frame: HashMap<String, Val>,
        order: &[usize],
    ) -> Result<Vec<Option<Val>>, ExecError> {
        for t in &g.initializers {
            let data = t.data.clone().ok_or_else(|| ExecError {
                node: g.name.clone(),
                message: format!("initializer `{}` has no data", t.id),
            })?;
            self.trace.observe(&t.id, &data);
            frame.insert(t.id.clone(), Rc::new(Buf { tensor: data, counted: false }));
        }
        self.frames.push(frame);

        let deps: Vec<Vec<String>> = g.nodes.iter().map(Node::dependencies).collect();
        let mut last_use: HashMap<&str, usize> = HashMap::new();
        for (p, &i) in order.iter().enumerate() {
            for id in &deps[i] {
                last_use.insert(id, p);
            }
        }
        let is_output = |id: &str| g.outputs.iter().any(|o| o == id);

        for (p, &idx) in order.iter().enumerate() {
            let node = &g.nodes[idx];
            let (outs, allocated) = self.step(g, idx)?;
            let executed = outs.is_some();
            let mut freed = 0;
            let mut dims = Vec::new();
            if let Some(outs) = outs {
                for (id, v) in node.outputs.iter().zip(outs) {
                    if let Some(v) = v {
                        dims.push(v.tensor.dims().to_vec());
                        self.frames.last_mut().unwrap().insert(id.clone(), v);
                    }
                }
                self.trace.peak_bytes = self.trace.peak_bytes.max(self.live);
                for id in &node.outputs {
                    if !last_use.contains_key(id.as_str()) && !is_output(id) {
                        if let Some(v) = self.frames.last_mut().unwrap().remove(id) {
                            freed += self.release(v);
                        }
                    }
                }
            }
            for id in &deps[idx] {
                if last_use[id.as_str()] == p && !is_output(id) {
                    if let Some(v) = self.frames.last_mut().unwrap().remove(id) {
                        freed += self.release(v);
                    }
                }
            }
            if executed {
                self.trace.steps.push(StepRecord {
                    graph: g.name.clone(),
                    node: idx,
                    op: node.op,
                    outputs: dims,
                    allocated,
                    freed,
                });
            }
        }

        let outs: Vec<Option<Val>> = g.outputs.iter().map(|id| self.lookup(id).cloned()).collect();
        let frame = self.frames.pop().unwrap();
        for (_, v) in frame {
            self.release(v);
        }
        Ok(outs)
    }

    /// Executes one node. `None` means the node is on an unselected path.
    #[allow(clippy::type_complexity)]
    fn step(&mut self, g: &Graph, idx: usize) -> Result<(Option<Vec<Option<Val>>>, usize), ExecError> {
        let node = &g.nodes[idx];
        let err = |message: String| ExecError {
            node: node_path(g, idx),
            message,
        };
        let inputs: Vec<Option<Val>> = node.inputs.iter().map(|id| self.lookup(id).cloned()).collect();
        let mut allocated = 0;

        if node.op == OpKind::Combine {
            let mut bound = inputs.into_iter().flatten();
            return match (bound.next(), bound.next()) {
                (None, _) => Ok((None, 0)),
                (Some(v), None) => {
                    self.trace.observe(&node.outputs[0], &v.tensor);
                    Ok((Some(vec![Some(v)]), 0))
                }
                (Some(_), Some(_)) => Err(err("more than one path reached Combine".into())),
            };
        }
        if inputs.iter().any(Option::is_none) || node.captures().iter().any(|id| self.lookup(id).is_none()) {
            return Ok((None, 0));
        }
        let inputs: Vec<Val> = inputs.into_iter().flatten().collect();

        let outs = match node.op {
            OpKind::Switch => {
                let k = node.outputs.len();
                let sel = int_scalar(&inputs[1].tensor).map_err(|m| err(format!("selector {m}")))?;
                if sel < 0 || sel as usize >= k {
                    return Err(err(format!("selector {sel} out of range for {k} paths")));
                }
                self.trace.decisions.push(Decision::Switch {
                    node: node_path(g, idx),
                    selector: sel as usize,
                });
                (0..k).map(|i| (i == sel as usize).then(|| inputs[0].clone())).collect()
            }
            OpKind::If => {
                let c = &inputs[0].tensor;
                let cond = match c.data() {
                    TensorData::Bool(v) if v.len() == 1 => v[0],
                    TensorData::I64(v) if v.len() == 1 => v[0] != 0,
                    _ => return Err(err(format!("condition must be a single bool, got {} {:?}", c.dtype(), c.dims()))),
                };
                let name = if cond { "then_branch" } else { "else_branch" };
                let branch = node
                    .subgraphs
                    .get(name)
                    .ok_or_else(|| err(format!("missing sub-graph `{name}`")))?;
                self.trace.decisions.push(Decision::If {
                    node: node_path(g, idx),
                    taken: name.into(),
                });
                let order = toposort_dfs(branch).map_err(|e| err(e.to_string()))?;
                self.run_graph(branch, HashMap::new(), &order)?
            }
            OpKind::Loop => self.run_loop(g, idx, &inputs)?,
            OpKind::FusedRegion => {
                let free: HashMap<String, Val> = node
                    .captures()
                    .into_iter()
                    .chain(node.inputs.iter().cloned())
                    .filter_map(|id| self.lookup(&id).cloned().map(|v| (id, v)))
                    .collect();
                let dtypes = &self.dtypes;
                let (outs, inner) = fused::eval_region(
                    node,
                    &|id| free.get(id).map(|v| &v.tensor),
                    &|id| dtypes.get(id).copied().unwrap_or(DType::F32),
                )
                .map_err(err)?;
                for (id, d) in inner {
                    if !node.outputs.contains(&id) {
                        self.trace.observed.entry(id).or_default().push(d);
                    }
                }
                outs.into_iter()
                    .zip(&node.outputs)
                    .map(|(t, id)| Some(self.alloc(id, t, &mut allocated)))
                    .collect()
            }
            _ => {
                let refs: Vec<&Tensor> = inputs.iter().map(|v| &v.tensor).collect();
                let out_types: Vec<DType> = node.outputs.iter().map(|o| self.dtypes[o]).collect();
                let outs = kernels::run(node, &refs, &out_types).map_err(err)?;
                outs.into_iter()
                    .zip(&node.outputs)
                    .map(|(t, id)| Some(self.alloc(id, t, &mut allocated)))
                    .collect()
            }
        };
        if matches!(node.op, OpKind::Switch | OpKind::If | OpKind::Loop) {
            for (id, v) in node.outputs.iter().zip(&outs) {
                if let Some(v) = v {
                    self.trace.observe(id, &v.tensor);
                }
            }
        }
        Ok((Some(outs), allocated))
    }

    fn run_loop(&mut self, g: &Graph, idx: usize, inputs: &[Val]) -> Result<Vec<Option<Val>>, ExecError> {
        let node = &g.nodes[idx];
        let err = |message: String| ExecError {
            node: node_path(g, idx),
            message,
        };
        let body = node.subgraphs.get("body").ok_or_else(|| err("Loop has no body".into()))?;
        let trip = &inputs[0].tensor;
        let trips = match trip.data() {
            TensorData::I64(v) if v.len() == 1 => v[0],
            _ => return Err(err(format!("trip count must be one i64, got {} {:?}", trip.dtype(), trip.dims()))),
        };
        if trips < 0 {
            return Err(err(format!("negative trip count {trips}")));
        }
        if body.inputs.len() != inputs.len() || body.outputs.len() != inputs.len() - 1 {
            return Err(err("body signature does not match the carried values".into()));
        }
        self.trace.decisions.push(Decision::Loop {
            node: node_path(g, idx),
            trips: trips as usize,
        });
        let order = toposort_dfs(body).map_err(|e| err(e.to_string()))?;
        let mut carried: Vec<Val> = inputs[1..].to_vec();
        for i in 0..trips {
            let mut frame = HashMap::new();
            let iv = Tensor::scalar_i64(i);
            self.trace.observe(&body.inputs[0].id, &iv);
            frame.insert(body.inputs[0].id.clone(), Rc::new(Buf { tensor: iv, counted: false }));
            for (t, v) in body.inputs[1..].iter().zip(carried.drain(..)) {
                self.trace.observe(&t.id, &v.tensor);
                frame.insert(t.id.clone(), v);
            }
            let outs = self.run_graph(body, frame, &order)?;
            for (o, v) in body.outputs.iter().zip(outs) {
                carried.push(v.ok_or_else(|| err(format!("body output `{o}` was not produced")))?);
            }
        }
        Ok(carried.into_iter().map(Some).collect())
    }
}

fn int_scalar(t: &Tensor) -> Result<i64, String> {
    match t.data() {
        TensorData::I64(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(format!("must be a single i64, got {} {:?}", t.dtype(), t.dims())),
    }
}

#[cfg(test)]
mod tests;
