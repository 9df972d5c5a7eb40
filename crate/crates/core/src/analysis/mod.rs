//! Data-flow analysis of tensor shapes and small integer values.
//!
//! Every tensor starts at `Undef`. Graph inputs are seeded from their
//! declared shapes (symbolic dims become symbols, or constants when a binding
//! is given) and initializers from their data. The driver then sweeps the
//! nodes in depth-first topological order, applying each operator's transfer
//! function and joining control-flow paths, until a sweep changes nothing.
//! Entries only ever move down the lattice, so the sweep count is bounded.

mod check;
pub mod expr;
pub mod lattice;
mod report;
mod transfer;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::graph::{infer_dtypes, toposort_dfs, DimSpec, Graph};
use crate::ops::OpKind;
use crate::tensor::{DType, Tensor};

pub use check::{consistency_violations, observed_bindings};
pub use expr::{parse_expr, SymExpr, SymbolId};
pub use lattice::{
    join_dim, merge, DimLattice, ShapeInfo, TensorInfo, ValueInfo, MAX_EXPR_DEPTH, MAX_TRACKED_ELEMS,
};
pub use report::{parse_report, write_report, ReportError};

/// Symbol → concrete value, keyed by symbol name.
pub type Bindings = BTreeMap<String, i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolOrigin {
    /// Declared dynamic dimension of a graph input.
    Input { tensor: String, axis: usize },
    /// Extent of a dimension only known at run time, read by a `Shape`
    /// operator.
    Runtime { tensor: String, axis: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolInfo {
    pub name: String,
    pub origin: SymbolOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    /// `graph/node i (Op)`.
    pub node: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub tensors: BTreeMap<String, TensorInfo>,
    /// Indexed by `SymbolId`.
    pub symbols: Vec<SymbolInfo>,
    pub diagnostics: Vec<Diagnostic>,
    /// Sweeps that changed at least one entry.
    pub iterations: usize,
    /// Total sweeps, including the final one that confirmed the fixed point.
    pub sweeps: usize,
}

impl AnalysisResult {
    pub fn info(&self, id: &str) -> Option<&TensorInfo> {
        self.tensors.get(id)
    }

    pub fn shape_of(&self, id: &str) -> &ShapeInfo {
        self.tensors.get(id).map_or(&ShapeInfo::Undef, |t| &t.shape)
    }

    pub fn value_of(&self, id: &str) -> &ValueInfo {
        self.tensors.get(id).map_or(&ValueInfo::Undef, |t| &t.value)
    }

    pub fn symbol_name(&self, id: SymbolId) -> String {
        self.symbols
            .get(id.0 as usize)
            .map_or_else(|| format!("?{}", id.0), |s| s.name.clone())
    }

    pub fn symbol_by_name(&self, name: &str) -> Option<SymbolId> {
        self.symbols
            .iter()
            .position(|s| s.name == name)
            .map(|i| SymbolId(i as u32))
    }

    /// Symbol lookup for evaluating expressions under name bindings.
    pub fn lookup<'a>(&'a self, bindings: &'a Bindings) -> impl Fn(SymbolId) -> Option<i64> + 'a {
        move |id| {
            self.symbols
                .get(id.0 as usize)
                .and_then(|s| bindings.get(&s.name).copied())
        }
    }

    /// Renders a dimension the way reports show it.
    pub fn dim_text(&self, d: &DimLattice) -> String {
        match d {
            DimLattice::Undef => "?".into(),
            DimLattice::Nac => "nac".into(),
            DimLattice::Known(v) => v.to_string(),
            DimLattice::Sym(s) => self.symbol_name(*s),
            DimLattice::Expr(e) => {
                let names = |id: SymbolId| self.symbol_name(id);
                format!("({})", e.display(&names))
            }
        }
    }

    pub fn shape_text(&self, id: &str) -> String {
        match self.shape_of(id) {
            ShapeInfo::Undef => "?".into(),
            ShapeInfo::Nac => "nac".into(),
            ShapeInfo::Ranked(dims) => {
                let parts: Vec<String> = dims.iter().map(|d| self.dim_text(d)).collect();
                format!("[{}]", parts.join(", "))
            }
        }
    }
}

/// Upper bound on sweeps: three lattice levels per tensor plus two widening
/// steps per loop-carried value.
pub fn sweep_bound(g: &Graph) -> usize {
    fn carried(g: &Graph) -> usize {
        g.nodes
            .iter()
            .map(|n| {
                let own = if n.op == OpKind::Loop { n.inputs.len() - 1 } else { 0 };
                own + n.subgraphs.values().map(carried).sum::<usize>()
            })
            .sum()
    }
    g.all_tensor_ids().len() * 3 + carried(g) * 2
}

/// Runs the analysis to its fixed point.
pub fn run_to_fixpoint(g: &Graph, bindings: Option<&Bindings>) -> AnalysisResult {
    run_with_hook(g, bindings, &mut |_| {})
}

/// Like [`run_to_fixpoint`], calling `hook` with the full state after every
/// sweep.
pub fn run_with_hook(
    g: &Graph,
    bindings: Option<&Bindings>,
    hook: &mut dyn FnMut(&BTreeMap<String, TensorInfo>),
) -> AnalysisResult {
    let empty = Bindings::new();
    let mut a = Analyzer::new(g, bindings.unwrap_or(&empty));
    a.seed(g);
    let bound = sweep_bound(g).max(1);
    let baseline = a.diagnostics.clone();
    let mut iterations = 0;
    let mut sweeps = 0;
    loop {
        a.diagnostics.clone_from(&baseline);
        a.changed = false;
        a.sweep(g);
        sweeps += 1;
        hook(&a.state);
        if !a.changed {
            break;
        }
        iterations += 1;
        if sweeps >= bound {
            a.diagnostics.insert(Diagnostic {
                node: g.name.clone(),
                message: format!("no fixed point within {bound} sweeps"),
            });
            break;
        }
    }
    AnalysisResult {
        tensors: a.state,
        symbols: a.symbols,
        diagnostics: a.diagnostics.into_iter().collect(),
        iterations,
        sweeps,
    }
}

pub(crate) struct Analyzer<'g> {
    state: BTreeMap<String, TensorInfo>,
    symbols: Vec<SymbolInfo>,
    symbol_ids: HashMap<String, SymbolId>,
    runtime_symbols: BTreeMap<(String, usize), SymbolId>,
    diagnostics: BTreeSet<Diagnostic>,
    dtypes: BTreeMap<String, DType>,
    constants: HashMap<&'g str, &'g Tensor>,
    bindings: &'g Bindings,
    loop_depth: usize,
    changed: bool,
}

impl<'g> Analyzer<'g> {
    fn new(g: &'g Graph, bindings: &'g Bindings) -> Analyzer<'g> {
        let mut diagnostics = BTreeSet::new();
        let dtypes = infer_dtypes(g).unwrap_or_else(|message| {
            diagnostics.insert(Diagnostic {
                node: g.name.clone(),
                message,
            });
            BTreeMap::new()
        });
        let mut constants = HashMap::new();
        collect_constants(g, &mut constants);
        Analyzer {
            state: BTreeMap::new(),
            symbols: Vec::new(),
            symbol_ids: HashMap::new(),
            runtime_symbols: BTreeMap::new(),
            diagnostics,
            dtypes,
            constants,
            bindings,
            loop_depth: 0,
            changed: false,
        }
    }

    fn seed(&mut self, g: &Graph) {
        for id in g.all_tensor_ids() {
            self.state.insert(id, TensorInfo::UNDEF);
        }
        for t in &g.inputs {
            let dims = t
                .shape
                .iter()
                .enumerate()
                .map(|(axis, d)| match d {
                    DimSpec::Fixed(v) => DimLattice::Known(*v as i64),
                    DimSpec::Sym(name) => {
                        let id = self.intern(
                            name,
                            SymbolOrigin::Input {
                                tensor: t.id.clone(),
                                axis,
                            },
                        );
                        match self.bindings.get(name) {
                            Some(&v) => DimLattice::Known(v),
                            None => DimLattice::Sym(id),
                        }
                    }
                })
                .collect();
            self.state.insert(
                t.id.clone(),
                TensorInfo {
                    shape: ShapeInfo::Ranked(dims),
                    value: ValueInfo::Nac,
                },
            );
        }
        self.seed_initializers(g);
    }

    fn seed_initializers(&mut self, g: &Graph) {
        for t in &g.initializers {
            let Some(data) = &t.data else { continue };
            let dims: Vec<i64> = data.dims().iter().map(|&d| d as i64).collect();
            let value = match data.as_i64() {
                Some(v) if data.rank() <= 1 && v.len() <= MAX_TRACKED_ELEMS => {
                    ValueInfo::Elems(v.iter().map(|&x| DimLattice::Known(x)).collect())
                }
                _ => ValueInfo::Nac,
            };
            self.state.insert(
                t.id.clone(),
                TensorInfo {
                    shape: ShapeInfo::known(&dims),
                    value,
                },
            );
        }
        for n in &g.nodes {
            for sg in n.subgraphs.values() {
                self.seed_initializers(sg);
            }
        }
    }

    fn intern(&mut self, name: &str, origin: SymbolOrigin) -> SymbolId {
        if let Some(&id) = self.symbol_ids.get(name) {
            return id;
        }
        let id = SymbolId(self.symbols.len() as u32);
        self.symbols.push(SymbolInfo {
            name: name.to_string(),
            origin,
        });
        self.symbol_ids.insert(name.to_string(), id);
        id
    }

    /// Symbol standing for the run-time extent of `tensor`'s `axis`.
    fn runtime_symbol(&mut self, tensor: &str, axis: usize) -> SymbolId {
        let key = (tensor.to_string(), axis);
        if let Some(&id) = self.runtime_symbols.get(&key) {
            return id;
        }
        let mut n = self.runtime_symbols.len();
        let name = loop {
            let candidate = format!("s{n}");
            if !self.symbol_ids.contains_key(&candidate) {
                break candidate;
            }
            n += 1;
        };
        let id = self.intern(
            &name,
            SymbolOrigin::Runtime {
                tensor: tensor.to_string(),
                axis,
            },
        );
        self.runtime_symbols.insert(key, id);
        id
    }

    fn info(&self, id: &str) -> TensorInfo {
        self.state.get(id).cloned().unwrap_or(TensorInfo::UNDEF)
    }

    fn dtype(&self, id: &str) -> DType {
        self.dtypes.get(id).copied().unwrap_or(DType::F32)
    }

    /// Joins `info` into the entry for `id`; entries only move down.
    fn assign(&mut self, id: &str, info: TensorInfo) {
        let old = self.info(id);
        let new = old.join(&info);
        if new != old {
            self.changed = true;
            self.state.insert(id.to_string(), new);
        }
    }

    fn diag(&mut self, node: String, message: String) {
        self.diagnostics.insert(Diagnostic { node, message });
    }

    /// One pass over `g`'s nodes in depth-first topological order.
    fn sweep(&mut self, g: &Graph) {
        let order = match toposort_dfs(g) {
            Ok(o) => o,
            Err(e) => {
                self.diag(g.name.clone(), e.to_string());
                return;
            }
        };
        for idx in order {
            let outs = self.transfer(g, idx);
            let node = &g.nodes[idx];
            for (id, info) in node.outputs.iter().zip(outs) {
                let info = self.finalize(g, idx, id, info);
                self.assign(id, info);
            }
        }
    }

    /// Enforces the value-tracking limits and non-negative extents.
    fn finalize(&mut self, g: &Graph, idx: usize, id: &str, mut info: TensorInfo) -> TensorInfo {
        if let ShapeInfo::Ranked(dims) = &mut info.shape {
            let mut negative = false;
            for d in dims.iter_mut() {
                if matches!(d, DimLattice::Known(v) if *v < 0) {
                    *d = DimLattice::Nac;
                    negative = true;
                }
            }
            if negative {
                self.diag(node_path(g, idx), format!("negative extent inferred for `{id}`"));
            }
        }
        if let ValueInfo::Elems(elems) = &info.value {
            let count_ok = match info.shape.dims() {
                Some([]) => elems.len() == 1,
                Some([DimLattice::Known(n)]) => *n as usize == elems.len(),
                Some([_]) => true,
                _ => false,
            };
            if !self.dtype(id).is_integer() || !count_ok || elems.len() > MAX_TRACKED_ELEMS {
                info.value = ValueInfo::Nac;
            }
        }
        if matches!(info.shape, ShapeInfo::Nac) && matches!(info.value, ValueInfo::Elems(_)) {
            info.value = ValueInfo::Nac;
        }
        info
    }
}

fn collect_constants<'g>(g: &'g Graph, out: &mut HashMap<&'g str, &'g Tensor>) {
    for t in &g.initializers {
        if let Some(d) = &t.data {
            out.insert(&t.id, d);
        }
    }
    for n in &g.nodes {
        for sg in n.subgraphs.values() {
            collect_constants(sg, out);
        }
    }
}

pub(crate) fn node_path(g: &Graph, idx: usize) -> String {
    format!("{}/node {idx} ({})", g.name, g.nodes[idx].op)
}

#[cfg(test)]
mod tests;
