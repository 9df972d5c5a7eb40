use super::{AnalysisResult, Bindings, SymbolOrigin};
use crate::graph::{DimSpec, Graph};
use crate::interp::{ExecTrace, TensorMap};

/// Symbol values implied by one execution: declared input symbols from the
/// input tensors, run-time symbols from the first observed extent.
pub fn observed_bindings(g: &Graph, a: &AnalysisResult, inputs: &TensorMap, trace: &ExecTrace) -> Bindings {
    let mut b = Bindings::new();
    for def in &g.inputs {
        let Some(t) = inputs.get(&def.id) else { continue };
        for (d, &v) in def.shape.iter().zip(t.dims()) {
            if let DimSpec::Sym(s) = d {
                b.entry(s.clone()).or_insert(v as i64);
            }
        }
    }
    for s in &a.symbols {
        if let SymbolOrigin::Runtime { tensor, axis } = &s.origin {
            if let Some(v) = trace.observed.get(tensor).and_then(|o| o.first()).and_then(|d| d.get(*axis)) {
                b.insert(s.name.clone(), *v as i64);
            }
        }
    }
    b
}

/// Every observed shape or traced value the analysis does not admit.
pub fn consistency_violations(g: &Graph, a: &AnalysisResult, inputs: &TensorMap, trace: &ExecTrace) -> Vec<String> {
    let b = observed_bindings(g, a, inputs, trace);
    let lookup = a.lookup(&b);
    let mut out = Vec::new();
    for (id, seen) in &trace.observed {
        for dims in seen {
            if !a.shape_of(id).admits(dims, &lookup) {
                out.push(format!("`{id}`: analysed {} but observed {dims:?}", a.shape_text(id)));
            }
        }
    }
    for (id, seen) in &trace.values {
        for v in seen {
            if !a.value_of(id).admits(v, &lookup) {
                out.push(format!("`{id}`: value {v:?} not admitted"));
            }
        }
    }
    out
}
