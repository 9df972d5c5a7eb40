//! JSON text form of graphs.
//!
//! ```json
//! {
//!   "name": "g",
//!   "inputs": [{"id": "x", "dtype": "f32", "shape": [1, 3, "H", "W"]}],
//!   "initializers": [{"id": "w", "dtype": "f32", "shape": [2], "data": [0.5, 1.0]}],
//!   "nodes": [{"op": "Relu", "inputs": ["x"], "outputs": ["y"]}],
//!   "outputs": ["y"]
//! }
//! ```
//!
//! Initializer `data` is either an inline array or `{"file", "byte_offset"}`
//! pointing into a `DYT1` sidecar file, resolved relative to a base directory.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{Attrs, AttrValue, DimSpec, ExternalData, Graph, Node, TensorDef};
use crate::ops::{AttrKind, OpKind};
use crate::tensor::{read_tensor_at, DType, Tensor, TensorData};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{node}: unsupported operator `{op}`")]
    UnknownOp { node: String, op: String },
    #[error("duplicate tensor id `{0}`")]
    DuplicateTensor(String),
    #[error("{node} ({op}): arity mismatch: {message}")]
    Arity {
        node: String,
        op: OpKind,
        message: String,
    },
    #[error("{node} ({op}): {message}")]
    Attribute {
        node: String,
        op: OpKind,
        message: String,
    },
    #[error("initializer `{id}`: {message}")]
    Initializer { id: String, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    name: String,
    #[serde(default)]
    inputs: Vec<RawTensor>,
    #[serde(default)]
    initializers: Vec<RawTensor>,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensor {
    id: String,
    dtype: DType,
    #[serde(default)]
    shape: Vec<DimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<RawData>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    op: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: Attrs,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    subgraphs: BTreeMap<String, RawGraph>,
}

enum RawData {
    F32(Vec<f32>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
    External(ExternalData),
    Pending(serde_json::Value),
}

impl Serialize for RawData {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RawData::F32(v) => v.serialize(s),
            RawData::I64(v) => v.serialize(s),
            RawData::Bool(v) => v.serialize(s),
            RawData::External(e) => e.serialize(s),
            RawData::Pending(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for RawData {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        if value.is_object() {
            serde_json::from_value(value)
                .map(RawData::External)
                .map_err(serde::de::Error::custom)
        } else {
            Ok(RawData::Pending(value))
        }
    }
}

/// Parses a graph, resolving sidecar tensor files against the current
/// directory.
pub fn parse_graph(text: &str) -> Result<Graph, ParseError> {
    parse_graph_in(text, Path::new("."))
}

/// Parses a graph, resolving sidecar tensor files against `base_dir`.
pub fn parse_graph_in(text: &str, base_dir: &Path) -> Result<Graph, ParseError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| ParseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut ctx = Builder {
        base_dir,
        declared: HashSet::new(),
    };
    ctx.graph(raw)
}

/// Canonical text form: pretty-printed JSON with a trailing newline.
pub fn serialize_graph(g: &Graph) -> String {
    let mut s = serde_json::to_string_pretty(&to_raw(g)).expect("graph serializes");
    s.push('\n');
    s
}

struct Builder<'a> {
    base_dir: &'a Path,
    declared: HashSet<String>,
}

impl Builder<'_> {
    fn graph(&mut self, raw: RawGraph) -> Result<Graph, ParseError> {
        let mut inputs = Vec::with_capacity(raw.inputs.len());
        for t in raw.inputs {
            self.declare(&t.id)?;
            inputs.push(TensorDef {
                id: t.id,
                dtype: t.dtype,
                shape: t.shape,
                data: None,
                external: None,
            });
        }
        let mut initializers = Vec::with_capacity(raw.initializers.len());
        for t in raw.initializers {
            self.declare(&t.id)?;
            initializers.push(self.initializer(t)?);
        }
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for (i, n) in raw.nodes.into_iter().enumerate() {
            let where_ = format!("{}/node {i}", raw.name);
            nodes.push(self.node(n, where_)?);
        }
        Ok(Graph {
            name: raw.name,
            inputs,
            initializers,
            nodes,
            outputs: raw.outputs,
        })
    }

    fn declare(&mut self, id: &str) -> Result<(), ParseError> {
        if !self.declared.insert(id.to_string()) {
            return Err(ParseError::DuplicateTensor(id.to_string()));
        }
        Ok(())
    }

    fn initializer(&self, t: RawTensor) -> Result<TensorDef, ParseError> {
        let err = |message: String| ParseError::Initializer {
            id: t.id.clone(),
            message,
        };
        let mut dims = Vec::with_capacity(t.shape.len());
        for d in &t.shape {
            match d {
                DimSpec::Fixed(v) => dims.push(*v as usize),
                DimSpec::Sym(s) => return Err(err(format!("symbolic dim `{s}` in an initializer"))),
            }
        }
        let count: usize = dims.iter().product();
        let (tensor, external) = match t.data {
            None => return Err(err("missing data".into())),
            Some(RawData::External(ext)) => {
                let path = self.base_dir.join(&ext.file);
                let tensor = read_tensor_at(&path, ext.byte_offset)
                    .map_err(|e| err(format!("{}: {e}", path.display())))?;
                if tensor.dtype() != t.dtype || tensor.dims() != dims.as_slice() {
                    return Err(err(format!(
                        "sidecar holds {} {:?}, declared {} {:?}",
                        tensor.dtype(),
                        tensor.dims(),
                        t.dtype,
                        dims
                    )));
                }
                (tensor, Some(ext))
            }
            Some(RawData::Pending(value)) => {
                let data = inline_data(t.dtype, value).map_err(err)?;
                if data.len() != count {
                    return Err(err(format!(
                        "{} elements given, shape {:?} needs {count}",
                        data.len(),
                        dims
                    )));
                }
                (Tensor::new(dims, data).map_err(err)?, None)
            }
            Some(_) => unreachable!("deserializer yields External or Pending"),
        };
        Ok(TensorDef {
            id: t.id,
            dtype: t.dtype,
            shape: t.shape,
            data: Some(tensor),
            external,
        })
    }

    fn node(&mut self, raw: RawNode, where_: String) -> Result<Node, ParseError> {
        let op: OpKind = raw.op.parse().map_err(|_| ParseError::UnknownOp {
            node: where_.clone(),
            op: raw.op.clone(),
        })?;
        let sig = op.signature();
        if !sig.inputs.accepts(raw.inputs.len()) {
            return Err(ParseError::Arity {
                node: where_,
                op,
                message: format!("expected {} inputs, got {}", sig.inputs, raw.inputs.len()),
            });
        }
        if !sig.outputs.accepts(raw.outputs.len()) {
            return Err(ParseError::Arity {
                node: where_,
                op,
                message: format!("expected {} outputs, got {}", sig.outputs, raw.outputs.len()),
            });
        }
        for spec in sig.attrs {
            match raw.attrs.get(spec.name) {
                None if spec.required => {
                    return Err(ParseError::Attribute {
                        node: where_,
                        op,
                        message: format!("missing required attribute `{}`", spec.name),
                    })
                }
                None => {}
                Some(v) => {
                    let ok = matches!(
                        (spec.kind, v),
                        (AttrKind::Int, AttrValue::Int(_))
                            | (AttrKind::Ints, AttrValue::Ints(_))
                            | (AttrKind::Float, AttrValue::Float(_) | AttrValue::Int(_))
                            | (AttrKind::Str, AttrValue::Str(_))
                    );
                    if !ok {
                        return Err(ParseError::Attribute {
                            node: where_,
                            op,
                            message: format!("attribute `{}` has the wrong type", spec.name),
                        });
                    }
                }
            }
        }
        let names: Vec<&str> = raw.subgraphs.keys().map(String::as_str).collect();
        if names != sig.subgraphs {
            return Err(ParseError::Arity {
                node: where_,
                op,
                message: format!("expected sub-graphs {:?}, got {:?}", sig.subgraphs, names),
            });
        }
        let mut subgraphs = BTreeMap::new();
        for (name, g) in raw.subgraphs {
            subgraphs.insert(name, self.graph(g)?);
        }
        Ok(Node {
            op,
            inputs: raw.inputs,
            outputs: raw.outputs,
            attrs: raw.attrs,
            subgraphs,
        })
    }
}

fn inline_data(dtype: DType, value: serde_json::Value) -> Result<TensorData, String> {
    let items = match value {
        serde_json::Value::Array(items) => items,
        // A bare scalar is accepted for rank-0 initializers.
        other => vec![other],
    };
    let bad = |v: &serde_json::Value| format!("element {v} is not a valid {dtype}");
    match dtype {
        DType::F32 => items
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32).ok_or_else(|| bad(v)))
            .collect::<Result<_, _>>()
            .map(TensorData::F32),
        DType::I64 => items
            .iter()
            .map(|v| v.as_i64().ok_or_else(|| bad(v)))
            .collect::<Result<_, _>>()
            .map(TensorData::I64),
        DType::Bool => items
            .iter()
            .map(|v| v.as_bool().ok_or_else(|| bad(v)))
            .collect::<Result<_, _>>()
            .map(TensorData::Bool),
    }
}

fn to_raw(g: &Graph) -> RawGraph {
    let tensor = |t: &TensorDef| RawTensor {
        id: t.id.clone(),
        dtype: t.dtype,
        shape: t.shape.clone(),
        data: match (&t.external, &t.data) {
            (Some(ext), _) => Some(RawData::External(ext.clone())),
            (None, Some(data)) => Some(match data.data() {
                TensorData::F32(v) => RawData::F32(v.clone()),
                TensorData::I64(v) => RawData::I64(v.clone()),
                TensorData::Bool(v) => RawData::Bool(v.clone()),
            }),
            (None, None) => None,
        },
    };
    RawGraph {
        name: g.name.clone(),
        inputs: g.inputs.iter().map(tensor).collect(),
        initializers: g.initializers.iter().map(tensor).collect(),
        nodes: g
            .nodes
            .iter()
            .map(|n| RawNode {
                op: n.op.name().to_string(),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                attrs: n.attrs.clone(),
                subgraphs: n.subgraphs.iter().map(|(k, v)| (k.clone(), to_raw(v))).collect(),
            })
            .collect(),
        outputs: g.outputs.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RELU: &str = r#"{
        "name": "relu",
        "inputs": [{"id": "x", "dtype": "f32", "shape": [1, 3, 4, 4]}],
        "nodes": [{"op": "Relu", "inputs": ["x"], "outputs": ["y"]}],
        "outputs": ["y"]
    }"#;

    #[test]
    fn minimal_graph() {
        let g = parse_graph(RELU).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.inputs.len(), 1);
        assert_eq!(g.outputs, vec!["y"]);
        assert_eq!(g.inputs[0].shape, vec![DimSpec::Fixed(1), 3.into(), 4.into(), 4.into()]);
    }

    #[test]
    fn symbols_and_attrs() {
        let text = r#"{
            "name": "g",
            "inputs": [{"id": "x", "dtype": "f32", "shape": [1, 3, "H", "W"]}],
            "initializers": [{"id": "w", "dtype": "f32", "shape": [2, 3, 1, 1], "data": [1, 2, 3, 4, 5, 6.5]}],
            "nodes": [{"op": "Conv", "inputs": ["x", "w"], "outputs": ["y"],
                       "attrs": {"pads": [0, 0, 0, 0], "group": 1}}],
            "outputs": ["y"]
        }"#;
        let g = parse_graph(text).unwrap();
        assert_eq!(g.inputs[0].shape[2], DimSpec::Sym("H".into()));
        assert_eq!(g.nodes[0].attr_ints("pads"), Some(&[0i64, 0, 0, 0][..]));
        assert_eq!(g.nodes[0].attr_int("group"), Some(1));
        let w = g.initializers[0].data.as_ref().unwrap();
        assert_eq!(w.as_f32().unwrap()[5], 6.5);
    }

    #[test]
    fn conv_without_weight_is_arity_error() {
        let text = r#"{
            "name": "g",
            "inputs": [{"id": "x", "dtype": "f32", "shape": [1, 3, 4, 4]}],
            "nodes": [{"op": "Conv", "inputs": ["x"], "outputs": ["y"]}],
            "outputs": ["y"]
        }"#;
        assert!(matches!(parse_graph(text), Err(ParseError::Arity { op: OpKind::Conv, .. })));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_graph("{\n  \"name\": \"g\",\n  \"nodes\": [,]\n}").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_op_and_duplicates() {
        let text = RELU.replace("\"Relu\"", "\"Frobnicate\"");
        assert!(matches!(parse_graph(&text), Err(ParseError::UnknownOp { .. })));
        let dup = r#"{"name": "g",
            "inputs": [{"id": "x", "dtype": "f32", "shape": [1]}],
            "initializers": [{"id": "x", "dtype": "f32", "shape": [1], "data": [1]}]}"#;
        assert!(matches!(parse_graph(dup), Err(ParseError::DuplicateTensor(id)) if id == "x"));
    }

    #[test]
    fn initializer_count_mismatch() {
        let text = r#"{"name": "g",
            "initializers": [{"id": "w", "dtype": "i64", "shape": [3], "data": [1, 2]}]}"#;
        assert!(matches!(parse_graph(text), Err(ParseError::Initializer { .. })));
    }

    #[test]
    fn external_initializer() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_i64(vec![2], vec![4, -1]);
        let mut bytes = vec![0u8; 5];
        bytes.extend(crate::tensor::encode_tensor(&t));
        std::fs::write(dir.path().join("w.bin"), bytes).unwrap();
        let text = r#"{"name": "g",
            "initializers": [{"id": "w", "dtype": "i64", "shape": [2],
                              "data": {"file": "w.bin", "byte_offset": 5}}]}"#;
        let g = parse_graph_in(text, dir.path()).unwrap();
        assert_eq!(g.initializers[0].data.as_ref(), Some(&t));
        let again = parse_graph_in(&serialize_graph(&g), dir.path()).unwrap();
        assert_eq!(again, g);
    }

    #[test]
    fn canonical_round_trip() {
        let g = parse_graph(RELU).unwrap();
        let text = serialize_graph(&g);
        let back = parse_graph(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize_graph(&back), text);
    }
}
