//! JSON report of an analysis result.
//!
//! Dims render as `"1"`, `"H"`, `"(H+2)"`, `"nac"` or `"?"` (undefined). A
//! whole shape or value that is undefined or not-a-constant is the bare string
//! `"?"` / `"nac"`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::expr::{parse_expr, SymbolId};
use super::lattice::{DimLattice, ShapeInfo, TensorInfo, ValueInfo};
use super::{AnalysisResult, Diagnostic, SymbolInfo, SymbolOrigin};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad entry for `{tensor}`: {message}")]
    Entry { tensor: String, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ListText {
    Whole(String),
    Dims(Vec<String>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: ListText,
    value: ListText,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolEntry {
    name: String,
    kind: String,
    tensor: String,
    axis: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnosticEntry {
    node: String,
    message: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Report {
    iterations: usize,
    sweeps: usize,
    symbols: Vec<SymbolEntry>,
    diagnostics: Vec<DiagnosticEntry>,
    tensors: BTreeMap<String, TensorEntry>,
}

fn list_text(r: &AnalysisResult, dims: Option<&[DimLattice]>, undef: bool) -> ListText {
    match dims {
        Some(d) => ListText::Dims(d.iter().map(|x| r.dim_text(x)).collect()),
        None if undef => ListText::Whole("?".into()),
        None => ListText::Whole("nac".into()),
    }
}

pub fn write_report(r: &AnalysisResult) -> String {
    let report = Report {
        iterations: r.iterations,
        sweeps: r.sweeps,
        symbols: r
            .symbols
            .iter()
            .map(|s| {
                let (kind, tensor, axis) = match &s.origin {
                    SymbolOrigin::Input { tensor, axis } => ("input", tensor, axis),
                    SymbolOrigin::Runtime { tensor, axis } => ("runtime", tensor, axis),
                };
                SymbolEntry {
                    name: s.name.clone(),
                    kind: kind.into(),
                    tensor: tensor.clone(),
                    axis: *axis,
                }
            })
            .collect(),
        diagnostics: r
            .diagnostics
            .iter()
            .map(|d| DiagnosticEntry {
                node: d.node.clone(),
                message: d.message.clone(),
            })
            .collect(),
        tensors: r
            .tensors
            .iter()
            .map(|(id, t)| {
                let entry = TensorEntry {
                    shape: list_text(r, t.shape.dims(), t.shape == ShapeInfo::Undef),
                    value: list_text(r, t.value.elems(), t.value == ValueInfo::Undef),
                };
                (id.clone(), entry)
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

/// Reads a report back into an [`AnalysisResult`].
pub fn parse_report(text: &str) -> Result<AnalysisResult, ReportError> {
    let report: Report = serde_json::from_str(text)?;
    let symbols: Vec<SymbolInfo> = report
        .symbols
        .into_iter()
        .map(|s| {
            let origin = match s.kind.as_str() {
                "input" => SymbolOrigin::Input { tensor: s.tensor, axis: s.axis },
                "runtime" => SymbolOrigin::Runtime { tensor: s.tensor, axis: s.axis },
                other => {
                    return Err(ReportError::Entry {
                        tensor: s.name,
                        message: format!("unknown symbol kind `{other}`"),
                    })
                }
            };
            Ok(SymbolInfo { name: s.name, origin })
        })
        .collect::<Result<_, _>>()?;
    let lookup = |name: &str| {
        symbols
            .iter()
            .position(|s| s.name == name)
            .map(|i| SymbolId(i as u32))
    };
    let dim = |text: &str| -> Result<DimLattice, String> {
        Ok(match text {
            "?" => DimLattice::Undef,
            "nac" => DimLattice::Nac,
            t => DimLattice::from_expr(parse_expr(t, &lookup)?),
        })
    };
    let mut tensors = BTreeMap::new();
    for (id, entry) in report.tensors {
        let err = |message: String| ReportError::Entry {
            tensor: id.clone(),
            message,
        };
        let shape = match entry.shape {
            ListText::Whole(w) if w == "?" => ShapeInfo::Undef,
            ListText::Whole(w) if w == "nac" => ShapeInfo::Nac,
            ListText::Whole(w) => return Err(err(format!("unexpected shape `{w}`"))),
            ListText::Dims(d) => ShapeInfo::Ranked(d.iter().map(|x| dim(x)).collect::<Result<_, _>>().map_err(err)?),
        };
        let value = match entry.value {
            ListText::Whole(w) if w == "?" => ValueInfo::Undef,
            ListText::Whole(w) if w == "nac" => ValueInfo::Nac,
            ListText::Whole(w) => return Err(err(format!("unexpected value `{w}`"))),
            ListText::Dims(d) => ValueInfo::Elems(d.iter().map(|x| dim(x)).collect::<Result<_, _>>().map_err(err)?),
        };
        tensors.insert(id, TensorInfo { shape, value });
    }
    Ok(AnalysisResult {
        tensors,
        symbols,
        diagnostics: report
            .diagnostics
            .into_iter()
            .map(|d| Diagnostic {
                node: d.node,
                message: d.message,
            })
            .collect(),
        iterations: report.iterations,
        sweeps: report.sweeps,
    })
}
