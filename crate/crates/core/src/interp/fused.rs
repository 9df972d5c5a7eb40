//! Element-at-a-time evaluation of fused regions.
//!
//! Only the region outputs are materialized; every inner value is recomputed
//! per output element from the outer operands.

use std::collections::HashMap;

use super::kernels::{self, broadcast_offset, conv_at, get, numel, strides, MatMulDims, Scalar, Window};
use crate::graph::{toposort_dfs, Graph, Node};
use crate::ops::OpKind;
use crate::tensor::{DType, Tensor};

enum Source<'a> {
    Outer(&'a Tensor),
    Inner(usize),
}

enum Anchor {
    Conv(Window),
    MatMul(MatMulDims),
    None,
}

struct Region<'a> {
    body: &'a Graph,
    sources: HashMap<&'a str, Source<'a>>,
    dims: HashMap<&'a str, Vec<usize>>,
    anchors: HashMap<usize, Anchor>,
}

/// Output tensors of the region plus the dims of every inner tensor.
pub type RegionResult = (Vec<Tensor>, Vec<(String, Vec<usize>)>);

pub fn eval_region<'a>(
    node: &'a Node,
    lookup: &dyn Fn(&str) -> Option<&'a Tensor>,
    dtypes: &dyn Fn(&str) -> DType,
) -> Result<RegionResult, String> {
    let body = node.subgraphs.get("body").ok_or("FusedRegion has no body")?;
    let mut r = Region {
        body,
        sources: HashMap::new(),
        dims: HashMap::new(),
        anchors: HashMap::new(),
    };
    for t in &body.initializers {
        let data = t.data.as_ref().ok_or_else(|| format!("initializer `{}` has no data", t.id))?;
        r.sources.insert(&t.id, Source::Outer(data));
        r.dims.insert(&t.id, data.dims().to_vec());
    }
    let order = toposort_dfs(body).map_err(|e| e.to_string())?;
    let mut observed = Vec::new();
    for idx in order {
        let n = &body.nodes[idx];
        for id in &n.inputs {
            if !r.sources.contains_key(id.as_str()) {
                let t = lookup(id).ok_or_else(|| format!("fused region reads unavailable `{id}`"))?;
                r.sources.insert(id, Source::Outer(t));
                r.dims.insert(id, t.dims().to_vec());
            }
        }
        let in_dims = |k: usize| &r.dims[n.inputs[k].as_str()];
        let (od, anchor) = match n.op {
            OpKind::Relu | OpKind::Sigmoid | OpKind::Round | OpKind::Cast => (in_dims(0).clone(), Anchor::None),
            OpKind::Add | OpKind::Mul => (kernels::broadcast_shape(in_dims(0), in_dims(1))?, Anchor::None),
            OpKind::Conv | OpKind::MatMul if n.inputs.iter().any(|i| matches!(r.sources[i.as_str()], Source::Inner(_))) => {
                return Err(format!("{} in a fused region must read materialized operands", n.op))
            }
            OpKind::Conv => {
                let outer = |k: usize| match r.sources[n.inputs[k].as_str()] {
                    Source::Outer(t) => t,
                    Source::Inner(_) => unreachable!(),
                };
                let bias_len = n.inputs.get(2).map(|_| outer(2).len());
                let (win, od) = kernels::conv_setup(n, outer(0).dims(), outer(1).dims(), bias_len)?;
                (od, Anchor::Conv(win))
            }
            OpKind::MatMul => {
                let md = MatMulDims::new(in_dims(0), in_dims(1))?;
                (md.out.clone(), Anchor::MatMul(md))
            }
            op => return Err(format!("{op} cannot run inside a fused region")),
        };
        observed.push((n.outputs[0].clone(), od.clone()));
        r.sources.insert(&n.outputs[0], Source::Inner(idx));
        r.dims.insert(&n.outputs[0], od);
        r.anchors.insert(idx, anchor);
    }
    let mut outs = Vec::with_capacity(body.outputs.len());
    for id in &body.outputs {
        let od = r.dims.get(id.as_str()).ok_or_else(|| format!("region output `{id}` is undefined"))?.clone();
        let mut idx = vec![0; od.len()];
        let mut vals = Vec::with_capacity(numel(&od));
        for _ in 0..numel(&od) {
            vals.push(r.eval(id, &idx)?);
            kernels::increment(&mut idx, &od);
        }
        outs.push(kernels::from_scalars(dtypes(id), od, vals.into_iter()));
    }
    Ok((outs, observed))
}

impl Region<'_> {
    fn eval(&self, id: &str, index: &[usize]) -> Result<Scalar, String> {
        let n = match &self.sources[id] {
            Source::Outer(t) => return Ok(get(t, broadcast_offset(index, t.dims(), &strides(t.dims())))),
            Source::Inner(i) => &self.body.nodes[*i],
        };
        let i = match &self.sources[id] {
            Source::Inner(i) => *i,
            Source::Outer(_) => unreachable!(),
        };
        let operand = |k: usize| -> Result<Scalar, String> {
            let d = &self.dims[n.inputs[k].as_str()];
            let shift = index.len() - d.len();
            let sub: Vec<usize> = d.iter().enumerate().map(|(j, &e)| if e == 1 { 0 } else { index[j + shift] }).collect();
            self.eval(&n.inputs[k], &sub)
        };
        let tensor = |k: usize| -> &Tensor {
            match &self.sources[n.inputs[k].as_str()] {
                Source::Outer(t) => t,
                Source::Inner(_) => unreachable!("anchors read materialized operands"),
            }
        };
        match (&self.anchors[&i], n.op) {
            (Anchor::Conv(win), _) => {
                let (x, w) = (tensor(0), tensor(1));
                let bias = n.inputs.get(2).map(|_| tensor(2).as_f32().unwrap_or(&[]));
                let (xs, ws) = (kernels::f32s(x, "Conv input")?, kernels::f32s(w, "Conv weight")?);
                let at = [index[0], index[1], index[2], index[3]];
                Ok(Scalar::F(conv_at(xs, x.dims(), ws, w.dims(), bias, win, at)))
            }
            (Anchor::MatMul(md), _) => {
                let (a, b) = (tensor(0), tensor(1));
                let (av, bv) = (kernels::f32s(a, "MatMul A")?, kernels::f32s(b, "MatMul B")?);
                Ok(Scalar::F(md.at(av, bv, index)))
            }
            (Anchor::None, OpKind::Add | OpKind::Mul) => kernels::binary(n.op, operand(0)?, operand(1)?),
            (Anchor::None, _) => kernels::unary(n, operand(0)?),
        }
    }
}
