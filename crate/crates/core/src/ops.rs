//! Operator set, dynamism classes and operator signatures.
//!
//! Every supported operator belongs to exactly one [`DynClass`], depending on
//! what its output shape (and value) can be derived from:
//!
//! | class | operators |
//! |---|---|
//! | `I(S)→O(S,V)` | Shape, ConstantOfShape, Eyelike |
//! | `I(S)→O(S)` | Add, Mul, AveragePool, Cast, Concat, Conv, Gather, MatMul, MaxPool, ReduceSum, Relu, Round, Sigmoid, Softmax, DepthToSpace |
//! | `I(S,V)→O(S)` | Expand, Range, Reshape, Resize, Slice, Upsample |
//! | `Exec→O(S,V)` | If, Loop, Nonzero, Switch, Combine |
//!
//! `FusedRegion` is produced by the fusion pass. Its members are all
//! `I(S)→O(S)` operators, so the region is classified the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::tensor::DType;

/// How an operator's output shape and value depend on its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynClass {
    /// `I(S)→O(S,V)`: output shape and value follow from the input shape alone.
    ShapeDeterminesOutput,
    /// `I(S)→O(S)`: output shape follows from input shapes; values need data.
    ShapeDeterminesShape,
    /// `I(S,V)→O(S)`: output shape needs the value of a shape-carrying input.
    ShapeValueDetermineShape,
    /// `Exec→O(S,V)`: output is only known after execution.
    ExecDetermined,
}

impl DynClass {
    pub fn notation(self) -> &'static str {
        match self {
            DynClass::ShapeDeterminesOutput => "I(S)→O(S,V)",
            DynClass::ShapeDeterminesShape => "I(S)→O(S)",
            DynClass::ShapeValueDetermineShape => "I(S,V)→O(S)",
            DynClass::ExecDetermined => "Exec→O(S,V)",
        }
    }
}

impl fmt::Display for DynClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.notation())
    }
}

macro_rules! op_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Supported operator kinds.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum OpKind {
            $($variant),*
        }

        impl OpKind {
            pub const ALL: &'static [OpKind] = &[$(OpKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(OpKind::$variant => $name),*
                }
            }
        }

        impl FromStr for OpKind {
            type Err = OpError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(OpKind::$variant),)*
                    // ONNX spelling.
                    "EyeLike" => Ok(OpKind::Eyelike),
                    other => Err(OpError::Unsupported(other.to_string())),
                }
            }
        }
    };
}

op_kinds! {
    Shape => "Shape",
    ConstantOfShape => "ConstantOfShape",
    Eyelike => "Eyelike",
    Add => "Add",
    Mul => "Mul",
    AveragePool => "AveragePool",
    Cast => "Cast",
    Concat => "Concat",
    Conv => "Conv",
    Gather => "Gather",
    MatMul => "MatMul",
    MaxPool => "MaxPool",
    ReduceSum => "ReduceSum",
    Relu => "Relu",
    Round => "Round",
    Sigmoid => "Sigmoid",
    Softmax => "Softmax",
    DepthToSpace => "DepthToSpace",
    Expand => "Expand",
    Range => "Range",
    Reshape => "Reshape",
    Resize => "Resize",
    Slice => "Slice",
    Upsample => "Upsample",
    If => "If",
    Loop => "Loop",
    Nonzero => "Nonzero",
    Switch => "Switch",
    Combine => "Combine",
    FusedRegion => "FusedRegion",
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for OpKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for OpKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("unsupported operator `{0}`")]
    Unsupported(String),
}

impl OpKind {
    pub fn class(self) -> DynClass {
        use OpKind::*;
        match self {
            Shape | ConstantOfShape | Eyelike => DynClass::ShapeDeterminesOutput,
            Add | Mul | AveragePool | Cast | Concat | Conv | Gather | MatMul | MaxPool
            | ReduceSum | Relu | Round | Sigmoid | Softmax | DepthToSpace | FusedRegion => {
                DynClass::ShapeDeterminesShape
            }
            Expand | Range | Reshape | Resize | Slice | Upsample => {
                DynClass::ShapeValueDetermineShape
            }
            If | Loop | Nonzero | Switch | Combine => DynClass::ExecDetermined,
        }
    }

    /// Elementwise operators that may join a fusion group.
    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            OpKind::Add | OpKind::Mul | OpKind::Relu | OpKind::Sigmoid | OpKind::Round | OpKind::Cast
        )
    }

    /// Operators that route execution between sub-graphs or paths.
    pub fn is_control_flow(self) -> bool {
        matches!(self, OpKind::If | OpKind::Loop | OpKind::Switch | OpKind::Combine)
    }

    pub fn signature(self) -> OpSignature {
        use Arity::*;
        use AttrKind::*;
        use OpKind::*;
        let (inputs, outputs, attrs): (Arity, Arity, &'static [AttrSpec]) = match self {
            Shape => (Exact(1), Exact(1), &[]),
            ConstantOfShape => (
                Exact(1),
                Exact(1),
                &[AttrSpec { name: "value", kind: Float, required: false }, AttrSpec { name: "dtype", kind: Str, required: false }],
            ),
            Eyelike => (
                Exact(1),
                Exact(1),
                &[AttrSpec { name: "k", kind: Int, required: false }, AttrSpec { name: "dtype", kind: Str, required: false }],
            ),
            Add | Mul => (Exact(2), Exact(1), &[]),
            AveragePool | MaxPool => (
                Exact(1),
                Exact(1),
                &[
                    AttrSpec { name: "kernel_shape", kind: Ints, required: true },
                    AttrSpec { name: "strides", kind: Ints, required: false },
                    AttrSpec { name: "pads", kind: Ints, required: false },
                ],
            ),
            Cast => (Exact(1), Exact(1), &[AttrSpec { name: "to", kind: Str, required: true }]),
            Concat => (AtLeast(1), Exact(1), &[AttrSpec { name: "axis", kind: Int, required: true }]),
            Conv => (
                Between(2, 3),
                Exact(1),
                &[
                    AttrSpec { name: "kernel_shape", kind: Ints, required: false },
                    AttrSpec { name: "strides", kind: Ints, required: false },
                    AttrSpec { name: "pads", kind: Ints, required: false },
                    AttrSpec { name: "dilations", kind: Ints, required: false },
                    AttrSpec { name: "group", kind: Int, required: false },
                ],
            ),
            Gather => (Exact(2), Exact(1), &[AttrSpec { name: "axis", kind: Int, required: false }]),
            MatMul => (Exact(2), Exact(1), &[]),
            ReduceSum => (
                Exact(1),
                Exact(1),
                &[AttrSpec { name: "axes", kind: Ints, required: false }, AttrSpec { name: "keepdims", kind: Int, required: false }],
            ),
            Relu | Round | Sigmoid => (Exact(1), Exact(1), &[]),
            Softmax => (Exact(1), Exact(1), &[AttrSpec { name: "axis", kind: Int, required: false }]),
            DepthToSpace => (
                Exact(1),
                Exact(1),
                &[AttrSpec { name: "blocksize", kind: Int, required: true }, AttrSpec { name: "mode", kind: Str, required: false }],
            ),
            Expand => (Exact(2), Exact(1), &[]),
            Range => (Exact(3), Exact(1), &[]),
            Reshape => (Exact(2), Exact(1), &[]),
            Resize => (Exact(2), Exact(1), &[AttrSpec { name: "mode", kind: Str, required: false }]),
            Slice => (Between(3, 5), Exact(1), &[]),
            Upsample => (Exact(2), Exact(1), &[AttrSpec { name: "mode", kind: Str, required: false }]),
            If => (Exact(1), AtLeast(1), &[]),
            Loop => (AtLeast(2), AtLeast(1), &[]),
            Nonzero => (Exact(1), Exact(1), &[]),
            Switch => (Exact(2), AtLeast(1), &[]),
            Combine => (AtLeast(1), Exact(1), &[]),
            FusedRegion => (AtLeast(0), AtLeast(1), &[AttrSpec { name: "kind", kind: Str, required: false }]),
        };
        let subgraphs: &'static [&'static str] = match self {
            If => &["else_branch", "then_branch"],
            Loop | FusedRegion => &["body"],
            _ => &[],
        };
        OpSignature {
            op: self,
            inputs,
            outputs,
            attrs,
            subgraphs,
        }
    }
}

/// Returns the dynamism class of an operator name.
pub fn classify(op_kind: &str) -> Result<DynClass, OpError> {
    op_kind.parse::<OpKind>().map(OpKind::class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    Between(usize, usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::Between(lo, hi) => (lo..=hi).contains(&n),
            Arity::AtLeast(lo) => n >= lo,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::Between(lo, hi) => write!(f, "{lo}..={hi}"),
            Arity::AtLeast(lo) => write!(f, "at least {lo}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Int,
    Ints,
    Float,
    Str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttrSpec {
    pub name: &'static str,
    pub kind: AttrKind,
    pub required: bool,
}

/// Arity, attributes and nested sub-graphs an operator accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpSignature {
    pub op: OpKind,
    pub inputs: Arity,
    pub outputs: Arity,
    pub attrs: &'static [AttrSpec],
    /// Names of required nested graphs, sorted.
    pub subgraphs: &'static [&'static str],
}

/// Output dtypes given input dtypes and the node's attributes.
///
/// `cast_to` / `dtype_attr` carry the `to` and `dtype` string attributes when
/// present. Returns an error message on a dtype rule violation.
pub fn output_dtypes(
    op: OpKind,
    inputs: &[DType],
    num_outputs: usize,
    str_attr: impl Fn(&str) -> Option<String>,
) -> Result<Vec<DType>, String> {
    use OpKind::*;
    let parse_attr = |name: &str, default: DType| -> Result<DType, String> {
        match str_attr(name) {
            Some(s) => s.parse(),
            None => Ok(default),
        }
    };
    let first = inputs.first().copied();
    let single = |d: DType| Ok(vec![d]);
    match op {
        Shape | Nonzero => single(DType::I64),
        ConstantOfShape => {
            if first != Some(DType::I64) {
                return Err("ConstantOfShape expects an i64 shape input".into());
            }
            single(parse_attr("dtype", DType::F32)?)
        }
        Eyelike => single(parse_attr("dtype", first.unwrap_or(DType::F32))?),
        Add | Mul => {
            if inputs[0] != inputs[1] {
                return Err(format!("{op} operands differ in dtype: {} vs {}", inputs[0], inputs[1]));
            }
            if inputs[0] == DType::Bool {
                return Err(format!("{op} does not accept bool"));
            }
            single(inputs[0])
        }
        Cast => single(parse_attr("to", DType::F32)?),
        Concat => {
            if inputs.iter().any(|&d| d != inputs[0]) {
                return Err("Concat inputs differ in dtype".into());
            }
            single(inputs[0])
        }
        Conv | MatMul | AveragePool | MaxPool | Sigmoid | Softmax | Round | Upsample | Resize => {
            if inputs[0] != DType::F32 {
                return Err(format!("{op} expects f32 data, got {}", inputs[0]));
            }
            if op == MatMul && inputs[1] != DType::F32 {
                return Err("MatMul expects f32 operands".into());
            }
            single(DType::F32)
        }
        Relu | ReduceSum => {
            if inputs[0] == DType::Bool {
                return Err(format!("{op} does not accept bool"));
            }
            single(inputs[0])
        }
        Gather => {
            if inputs[1] != DType::I64 {
                return Err("Gather indices must be i64".into());
            }
            single(inputs[0])
        }
        DepthToSpace | Expand | Reshape | Slice => single(inputs[0]),
        Range => {
            if inputs.iter().any(|&d| d != inputs[0]) || inputs[0] == DType::Bool {
                return Err("Range operands must share a numeric dtype".into());
            }
            single(inputs[0])
        }
        Switch => Ok(vec![inputs[0]; num_outputs]),
        Combine => {
            if inputs.iter().any(|&d| d != inputs[0]) {
                return Err("Combine inputs differ in dtype".into());
            }
            single(inputs[0])
        }
        // Sub-graph operators take their output dtypes from the nested graph.
        If | Loop | FusedRegion => Err(format!("{op} output dtypes come from its sub-graph")),
    }
}

/// Output extent of a sliding window (`Conv`, pooling).
pub fn window_out_dim(d: i64, kernel: i64, pad_total: i64, stride: i64, dilation: i64) -> i64 {
    (d + pad_total - dilation * (kernel - 1) - 1).div_euclid(stride) + 1
}

/// Normalized `(start, len)` of a slice along an axis of extent `n`, with
/// out-of-range bounds clamped. `step` must be nonzero.
pub fn slice_range(n: i64, start: i64, end: i64, step: i64) -> (i64, i64) {
    let wrap = |v: i64| if v < 0 { v.saturating_add(n) } else { v };
    if step > 0 {
        let s = wrap(start).clamp(0, n);
        let e = wrap(end).clamp(0, n);
        (s, ceil_div(e - s, step).max(0))
    } else {
        let s = wrap(start).clamp(0, n - 1);
        let e = wrap(end).clamp(-1, n - 1);
        (s, ceil_div(s - e, -step).max(0))
    }
}

/// Element count of `Range(start, limit, delta)`.
pub fn range_len(start: i64, limit: i64, delta: i64) -> i64 {
    ceil_div(limit - start, delta).max(0)
}

/// Extent after nearest-neighbour upsampling by `scale`.
pub fn upsample_dim(d: i64, scale: f32) -> i64 {
    (d as f64 * scale as f64).floor() as i64
}

fn ceil_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if a % b != 0 && ((a > 0) == (b > 0)) {
        q + 1
    } else {
        q
    }
}
