//! Per-operator transfer functions.

use super::expr::SymExpr;
use super::lattice::{merge, DimLattice, ShapeInfo, TensorInfo, ValueInfo};
use super::{node_path, Analyzer};
use crate::graph::{Graph, Node};
use crate::ops::{self, OpKind};
use crate::tensor::DType;

use DimLattice::{Known, Nac, Undef};

type Outs = Result<Vec<TensorInfo>, String>;

fn one(shape: ShapeInfo, value: ValueInfo) -> Outs {
    Ok(vec![TensorInfo { shape, value }])
}

fn shape_only(shape: ShapeInfo) -> Outs {
    one(shape, ValueInfo::Nac)
}

fn nac_rank(rank: usize) -> ShapeInfo {
    ShapeInfo::Ranked(vec![Nac; rank])
}

fn lit(v: i64) -> SymExpr {
    SymExpr::lit(v)
}

fn lift(a: &DimLattice, f: impl FnOnce(SymExpr) -> Option<SymExpr>) -> DimLattice {
    match a {
        Undef => Undef,
        Nac => Nac,
        _ => DimLattice::from_opt(a.to_expr().and_then(f)),
    }
}

fn lift2(a: &DimLattice, b: &DimLattice, f: impl FnOnce(SymExpr, SymExpr) -> Option<SymExpr>) -> DimLattice {
    match (a, b) {
        (Undef, _) | (_, Undef) => Undef,
        (Nac, _) | (_, Nac) => Nac,
        _ => DimLattice::from_opt(a.to_expr().zip(b.to_expr()).and_then(|(x, y)| f(x, y))),
    }
}

fn norm_axis(axis: i64, rank: usize) -> Result<usize, String> {
    let r = rank as i64;
    if axis < -r || axis >= r {
        return Err(format!("axis {axis} out of range for rank {rank}"));
    }
    Ok(if axis < 0 { (axis + r) as usize } else { axis as usize })
}

fn all_known(elems: &[DimLattice]) -> Option<Vec<i64>> {
    elems.iter().map(DimLattice::known).collect()
}

/// Numpy-style broadcast of one dim pair.
fn broadcast_pair(x: &DimLattice, y: &DimLattice) -> Result<DimLattice, String> {
    Ok(match (x, y) {
        (Undef, _) | (_, Undef) => Undef,
        (Known(1), o) | (o, Known(1)) => o.clone(),
        (Known(p), Known(q)) if p != q => return Err(format!("cannot broadcast {p} with {q}")),
        (Known(k), _) | (_, Known(k)) => Known(*k),
        (Nac, _) | (_, Nac) => Nac,
        (a, b) if a == b => a.clone(),
        (a, b) => lift2(a, b, |p, q| SymExpr::max(&[p, q])),
    })
}

pub(crate) fn broadcast_dims(a: &[DimLattice], b: &[DimLattice]) -> Result<Vec<DimLattice>, String> {
    let r = a.len().max(b.len());
    let one = Known(1);
    (0..r)
        .map(|i| {
            let x = if i + a.len() >= r { &a[i + a.len() - r] } else { &one };
            let y = if i + b.len() >= r { &b[i + b.len() - r] } else { &one };
            broadcast_pair(x, y)
        })
        .collect()
}

/// Elementwise combination of two tracked values with scalar broadcast.
fn value_binop(a: &ValueInfo, b: &ValueInfo, f: impl Fn(SymExpr, SymExpr) -> Option<SymExpr>) -> ValueInfo {
    let (Some(x), Some(y)) = (a.elems(), b.elems()) else {
        return ValueInfo::Nac;
    };
    let n = x.len().max(y.len());
    if !(x.len() == y.len() || x.len() == 1 || y.len() == 1) {
        return ValueInfo::Nac;
    }
    ValueInfo::Elems(
        (0..n)
            .map(|i| {
                let p = &x[if x.len() == 1 { 0 } else { i }];
                let q = &y[if y.len() == 1 { 0 } else { i }];
                lift2(p, q, &f)
            })
            .collect(),
    )
}

/// Clamped slice bound along an extent `d` for a non-negative step.
fn clamp_bound(x: &DimLattice, d: &SymExpr) -> Option<SymExpr> {
    const HUGE: i64 = 1 << 31;
    match x {
        Known(v) if *v >= HUGE => Some(d.clone()),
        Known(v) if *v <= -HUGE => Some(lit(0)),
        Known(0) => Some(lit(0)),
        Known(v) if *v > 0 => SymExpr::min(&[lit(*v), d.clone()]),
        Known(v) => SymExpr::max(&[d.add(&lit(*v))?, lit(0)]),
        other => {
            let e = other.to_expr()?;
            if e.is_nonneg() {
                SymExpr::min(&[e, d.clone()])
            } else {
                None
            }
        }
    }
}

fn slice_len(d: &DimLattice, s: &DimLattice, e: &DimLattice, step: i64) -> DimLattice {
    if let (Some(n), Some(sv), Some(ev)) = (d.known(), s.known(), e.known()) {
        return Known(ops::slice_range(n, sv, ev, step).1);
    }
    if step < 0 || s.is_nac() || e.is_nac() {
        return Nac;
    }
    lift(d, |dx| {
        let start = clamp_bound(s, &dx)?;
        let end = clamp_bound(e, &dx)?;
        let len = SymExpr::max(&[end.sub(&start)?, lit(0)])?;
        len.ceildiv(&lit(step))
    })
}

impl Analyzer<'_> {
    pub(super) fn transfer(&mut self, g: &Graph, idx: usize) -> Vec<TensorInfo> {
        let node = &g.nodes[idx];
        let n_out = node.outputs.len();
        match node.op {
            OpKind::If => return self.transfer_if(node),
            OpKind::Loop => return self.transfer_loop(g, idx),
            OpKind::FusedRegion => {
                let body = &node.subgraphs["body"];
                self.sweep(body);
                return body.outputs.iter().map(|o| self.info(o)).collect();
            }
            OpKind::Combine => {
                let branches: Vec<Vec<TensorInfo>> = node.inputs.iter().map(|i| vec![self.info(i)]).collect();
                return merge(&branches);
            }
            _ => {}
        }
        let inputs: Vec<TensorInfo> = node.inputs.iter().map(|i| self.info(i)).collect();
        if inputs.iter().any(|i| i.shape == ShapeInfo::Undef) {
            return vec![TensorInfo::UNDEF; n_out];
        }
        match self.update(node, &inputs) {
            Ok(outs) => outs,
            Err(msg) => {
                self.diag(node_path(g, idx), msg);
                vec![TensorInfo::NAC; n_out]
            }
        }
    }

    fn transfer_if(&mut self, node: &Node) -> Vec<TensorInfo> {
        if self.info(&node.inputs[0]).shape == ShapeInfo::Undef {
            return vec![TensorInfo::UNDEF; node.outputs.len()];
        }
        let mut branches = Vec::new();
        for sg in node.subgraphs.values() {
            self.sweep(sg);
            branches.push(sg.outputs.iter().map(|o| self.info(o)).collect());
        }
        merge(&branches)
    }

    /// Iterates the body on the joined carried state. The result covers any
    /// trip count, including zero. A carried entry that changes a second time
    /// is widened: every dim that moved becomes `Nac`.
    fn transfer_loop(&mut self, g: &Graph, idx: usize) -> Vec<TensorInfo> {
        let node = &g.nodes[idx];
        let body = &node.subgraphs["body"];
        let trip = self.info(&node.inputs[0]);
        if trip.shape == ShapeInfo::Undef {
            return vec![TensorInfo::UNDEF; node.outputs.len()];
        }
        let mut carried: Vec<TensorInfo> = node.inputs[1..].iter().map(|i| self.info(i)).collect();
        let mut changes = vec![0usize; carried.len()];
        self.loop_depth += 1;
        loop {
            self.assign(&body.inputs[0].id, TensorInfo::shape_only(ShapeInfo::known(&[])));
            for (t, c) in body.inputs[1..].iter().zip(&carried) {
                self.assign(&t.id, c.clone());
            }
            self.sweep(body);
            let mut stable = true;
            for (j, out) in body.outputs.iter().enumerate() {
                let old = &carried[j];
                let mut new = old.join(&self.info(out));
                if new == *old {
                    continue;
                }
                stable = false;
                changes[j] += 1;
                if changes[j] >= 2 {
                    new = widen(old, &new);
                }
                carried[j] = new;
            }
            if stable {
                break;
            }
        }
        self.loop_depth -= 1;
        carried
    }

    fn update(&mut self, node: &Node, inp: &[TensorInfo]) -> Outs {
        use OpKind::*;
        let dims = |i: usize| inp[i].shape.dims();
        match node.op {
            Shape => match dims(0) {
                Some(d) => {
                    let mut elems = Vec::with_capacity(d.len());
                    for (axis, x) in d.iter().enumerate() {
                        elems.push(match x {
                            Nac if self.loop_depth == 0 => {
                                DimLattice::Sym(self.runtime_symbol(&node.inputs[0], axis))
                            }
                            other => other.clone(),
                        });
                    }
                    one(ShapeInfo::known(&[d.len() as i64]), ValueInfo::Elems(elems))
                }
                None => shape_only(nac_rank(1)),
            },
            ConstantOfShape => {
                let shape = match (&inp[0].value, dims(0)) {
                    (ValueInfo::Elems(e), _) => ShapeInfo::Ranked(e.clone()),
                    (_, Some([Known(n)])) => nac_rank(*n as usize),
                    (_, Some([_])) | (_, None) => ShapeInfo::Nac,
                    (_, Some(d)) => return Err(format!("shape input must have rank 1, has rank {}", d.len())),
                };
                let c = node.attr_float("value").unwrap_or(0.0);
                let value = match shape.dims().and_then(all_known) {
                    Some(d) if d.len() <= 1 && c.fract() == 0.0 => {
                        let n = d.first().copied().unwrap_or(1).max(0) as usize;
                        ValueInfo::Elems(vec![Known(c as i64); n])
                    }
                    _ => ValueInfo::Nac,
                };
                one(shape, value)
            }
            Eyelike => match dims(0) {
                Some(d) if d.len() != 2 => Err(format!("Eyelike expects rank 2, got {}", d.len())),
                _ => shape_only(inp[0].shape.clone()),
            },
            Add | Mul => {
                let shape = match (dims(0), dims(1)) {
                    (Some(a), Some(b)) => ShapeInfo::Ranked(broadcast_dims(a, b)?),
                    _ => ShapeInfo::Nac,
                };
                let value = if node.op == Add {
                    value_binop(&inp[0].value, &inp[1].value, |a, b| a.add(&b))
                } else {
                    value_binop(&inp[0].value, &inp[1].value, |a, b| a.mul(&b))
                };
                one(shape, value)
            }
            Relu => {
                let value = match inp[0].value.elems() {
                    Some(e) => ValueInfo::Elems(e.iter().map(|x| lift(x, |v| SymExpr::max(&[v, lit(0)]))).collect()),
                    None => ValueInfo::Nac,
                };
                one(inp[0].shape.clone(), value)
            }
            Sigmoid | Round => shape_only(inp[0].shape.clone()),
            Cast => {
                let to: DType = node.attr_str("to").unwrap_or("f32").parse()?;
                let value = if to.is_integer() { inp[0].value.clone() } else { ValueInfo::Nac };
                one(inp[0].shape.clone(), value)
            }
            Softmax => {
                if let Some(d) = dims(0) {
                    norm_axis(node.attr_int("axis").unwrap_or(-1), d.len())?;
                }
                shape_only(inp[0].shape.clone())
            }
            Conv | AveragePool | MaxPool => self.window(node, inp),
            MatMul => {
                let (Some(a), Some(b)) = (dims(0), dims(1)) else {
                    return shape_only(ShapeInfo::Nac);
                };
                if a.len() < 2 || b.len() < 2 {
                    return Err(format!("MatMul expects rank ≥ 2 operands, got {} and {}", a.len(), b.len()));
                }
                let (ka, kb) = (&a[a.len() - 1], &b[b.len() - 2]);
                if let (Known(p), Known(q)) = (ka, kb) {
                    if p != q {
                        return Err(format!("MatMul inner dims differ: {p} vs {q}"));
                    }
                }
                let mut out = broadcast_dims(&a[..a.len() - 2], &b[..b.len() - 2])?;
                out.push(a[a.len() - 2].clone());
                out.push(b[b.len() - 1].clone());
                shape_only(ShapeInfo::Ranked(out))
            }
            Concat => self.concat(node, inp),
            Gather => self.gather(node, inp),
            ReduceSum => {
                let Some(d) = dims(0) else {
                    return shape_only(ShapeInfo::Nac);
                };
                let keep = node.attr_int("keepdims").unwrap_or(1) != 0;
                let axes: Vec<usize> = match node.attr_ints("axes") {
                    Some(a) => a.iter().map(|&x| norm_axis(x, d.len())).collect::<Result<_, _>>()?,
                    None => (0..d.len()).collect(),
                };
                let out: Vec<DimLattice> = d
                    .iter()
                    .enumerate()
                    .filter_map(|(i, x)| match (axes.contains(&i), keep) {
                        (false, _) => Some(x.clone()),
                        (true, true) => Some(Known(1)),
                        (true, false) => None,
                    })
                    .collect();
                let value = match inp[0].value.elems() {
                    Some(e) if d.len() == 1 => {
                        let sum = e.iter().skip(1).fold(e.first().cloned().unwrap_or(Known(0)), |acc, x| {
                            lift2(&acc, x, |p, q| p.add(&q))
                        });
                        ValueInfo::Elems(vec![sum])
                    }
                    _ => ValueInfo::Nac,
                };
                one(ShapeInfo::Ranked(out), value)
            }
            DepthToSpace => {
                let Some(d) = dims(0) else {
                    return shape_only(nac_rank(4));
                };
                if d.len() != 4 {
                    return Err(format!("DepthToSpace expects rank 4, got {}", d.len()));
                }
                let r = node.attr_int("blocksize").unwrap_or(1);
                if r <= 0 {
                    return Err(format!("blocksize must be positive, got {r}"));
                }
                if let Known(c) = d[1] {
                    if c % (r * r) != 0 {
                        return Err(format!("{c} channels not divisible by blocksize² = {}", r * r));
                    }
                }
                shape_only(ShapeInfo::Ranked(vec![
                    d[0].clone(),
                    lift(&d[1], |c| c.floordiv(&lit(r * r))),
                    lift(&d[2], |h| h.mul(&lit(r))),
                    lift(&d[3], |w| w.mul(&lit(r))),
                ]))
            }
            Expand => {
                let target = match (&inp[1].value, dims(1)) {
                    (ValueInfo::Elems(e), _) => e.clone(),
                    (_, Some([Known(n)])) => vec![Nac; *n as usize],
                    _ => return shape_only(ShapeInfo::Nac),
                };
                match dims(0) {
                    Some(d) => shape_only(ShapeInfo::Ranked(broadcast_dims(d, &target)?)),
                    None => shape_only(ShapeInfo::Nac),
                }
            }
            Range => {
                for (i, t) in inp.iter().enumerate() {
                    if !matches!(t.shape.dims(), Some([]) | None) {
                        return Err(format!("Range operand {i} must be a scalar"));
                    }
                }
                let v = |i: usize| inp[i].value.elems().and_then(|e| e.first().cloned()).unwrap_or(Nac);
                let (s, l, dl) = (v(0), v(1), v(2));
                if let (Some(a), Some(b), Some(c)) = (s.known(), l.known(), dl.known()) {
                    if c == 0 {
                        return Err("Range delta is zero".into());
                    }
                    let n = ops::range_len(a, b, c);
                    let value = if n as usize <= super::MAX_TRACKED_ELEMS {
                        ValueInfo::Elems((0..n).map(|i| Known(a + i * c)).collect())
                    } else {
                        ValueInfo::Nac
                    };
                    return one(ShapeInfo::known(&[n]), value);
                }
                let n = match dl.known() {
                    Some(0) => return Err("Range delta is zero".into()),
                    Some(k) if k > 0 => lift2(&s, &l, |a, b| SymExpr::max(&[b.sub(&a)?.ceildiv(&lit(k))?, lit(0)])),
                    Some(k) => lift2(&s, &l, |a, b| SymExpr::max(&[a.sub(&b)?.ceildiv(&lit(-k))?, lit(0)])),
                    None => Nac,
                };
                shape_only(ShapeInfo::Ranked(vec![n]))
            }
            Reshape => self.reshape(inp),
            Resize => {
                let Some(d) = dims(0) else {
                    return shape_only(ShapeInfo::Nac);
                };
                match &inp[1].value {
                    ValueInfo::Elems(e) if e.len() != d.len() => {
                        Err(format!("Resize sizes have {} entries for rank {}", e.len(), d.len()))
                    }
                    ValueInfo::Elems(e) => shape_only(ShapeInfo::Ranked(e.clone())),
                    _ => shape_only(nac_rank(d.len())),
                }
            }
            Upsample => {
                let Some(d) = dims(0) else {
                    return shape_only(ShapeInfo::Nac);
                };
                let scales = self.constants.get(node.inputs[1].as_str()).and_then(|t| t.as_f32());
                match scales {
                    Some(s) if s.len() != d.len() => {
                        Err(format!("Upsample has {} scales for rank {}", s.len(), d.len()))
                    }
                    Some(s) => {
                        let out = d
                            .iter()
                            .zip(s)
                            .map(|(x, &k)| match x.known() {
                                Some(v) => Known(ops::upsample_dim(v, k)),
                                None if k.fract() == 0.0 && k >= 0.0 => lift(x, |e| e.mul(&lit(k as i64))),
                                None => Nac,
                            })
                            .collect();
                        shape_only(ShapeInfo::Ranked(out))
                    }
                    None => shape_only(nac_rank(d.len())),
                }
            }
            Slice => self.slice(inp),
            Nonzero => {
                let r = dims(0).map_or(Nac, |d| Known(d.len() as i64));
                shape_only(ShapeInfo::Ranked(vec![r, Nac]))
            }
            Switch => {
                let k = node.outputs.len();
                let sel = inp[1].value.elems().and_then(|e| match e {
                    [Known(v)] => Some(*v),
                    _ => None,
                });
                match sel {
                    Some(v) if v < 0 || v as usize >= k => Err(format!("selector {v} out of range for {k} paths")),
                    Some(v) => Ok((0..k)
                        .map(|i| if i == v as usize { inp[0].clone() } else { TensorInfo::UNDEF })
                        .collect()),
                    None => Ok(vec![inp[0].clone(); k]),
                }
            }
            If | Loop | FusedRegion | Combine => unreachable!("handled by transfer"),
        }
    }

    fn window(&mut self, node: &Node, inp: &[TensorInfo]) -> Outs {
        let Some(x) = inp[0].shape.dims() else {
            return shape_only(nac_rank(4));
        };
        if x.len() != 4 {
            return Err(format!("{} expects rank-4 input, got rank {}", node.op, x.len()));
        }
        let ints = |name: &str, default: &[i64]| -> Result<Vec<i64>, String> {
            let v = node.attr_ints(name).map_or_else(|| default.to_vec(), <[i64]>::to_vec);
            if v.len() != default.len() {
                return Err(format!("`{name}` needs {} entries, has {}", default.len(), v.len()));
            }
            Ok(v)
        };
        let strides = ints("strides", &[1, 1])?;
        let pads = ints("pads", &[0, 0, 0, 0])?;
        if strides.iter().any(|&s| s <= 0) || pads.iter().any(|&p| p < 0) {
            return Err("strides must be positive and pads non-negative".into());
        }
        let (channels, kernel, dilations) = if node.op == OpKind::Conv {
            let w = match inp[1].shape.dims() {
                Some(w) if w.len() == 4 => w,
                Some(w) => return Err(format!("Conv weight must have rank 4, has rank {}", w.len())),
                None => return shape_only(nac_rank(4)),
            };
            let group = node.attr_int("group").unwrap_or(1);
            if group <= 0 {
                return Err("group must be positive".into());
            }
            if let (Known(c), Known(wc)) = (&x[1], &w[1]) {
                if *c != wc * group {
                    return Err(format!("Conv input has {c} channels, weight expects {}", wc * group));
                }
            }
            if let Some(b) = inp.get(2).and_then(|b| b.shape.dims()) {
                if b.len() != 1 {
                    return Err("Conv bias must have rank 1".into());
                }
            }
            let kernel = match node.attr_ints("kernel_shape") {
                Some(k) if k.len() == 2 => vec![Known(k[0]), Known(k[1])],
                Some(_) => return Err("`kernel_shape` needs 2 entries".into()),
                None => vec![w[2].clone(), w[3].clone()],
            };
            let dil = ints("dilations", &[1, 1])?;
            if dil.iter().any(|&d| d <= 0) {
                return Err("dilations must be positive".into());
            }
            (w[0].clone(), kernel, dil)
        } else {
            let k = ints("kernel_shape", &[1, 1])?;
            if k.iter().any(|&v| v <= 0) {
                return Err("kernel_shape must be positive".into());
            }
            (x[1].clone(), vec![Known(k[0]), Known(k[1])], vec![1, 1])
        };
        let spatial = |i: usize| -> DimLattice {
            let pad = pads[i] + pads[i + 2];
            let (s, dl) = (strides[i], dilations[i]);
            if let (Some(d), Some(k)) = (x[2 + i].known(), kernel[i].known()) {
                return Known(ops::window_out_dim(d, k, pad, s, dl));
            }
            lift2(&x[2 + i], &kernel[i], |d, k| {
                let span = k.add(&lit(-1))?.mul(&lit(dl))?;
                d.add(&lit(pad - 1))?.sub(&span)?.floordiv(&lit(s))?.add(&lit(1))
            })
        };
        shape_only(ShapeInfo::Ranked(vec![x[0].clone(), channels, spatial(0), spatial(1)]))
    }

    fn concat(&mut self, node: &Node, inp: &[TensorInfo]) -> Outs {
        let ranks: Vec<Option<usize>> = inp.iter().map(|t| t.shape.rank()).collect();
        let Some(rank) = ranks.iter().flatten().next().copied() else {
            return shape_only(ShapeInfo::Nac);
        };
        if ranks.iter().flatten().any(|&r| r != rank) {
            return Err("Concat inputs differ in rank".into());
        }
        let axis = norm_axis(node.attr_int("axis").unwrap_or(0), rank)?;
        if ranks.iter().any(Option::is_none) {
            return shape_only(nac_rank(rank));
        }
        let all: Vec<&[DimLattice]> = inp.iter().filter_map(|t| t.shape.dims()).collect();
        let mut out = Vec::with_capacity(rank);
        for i in 0..rank {
            if i == axis {
                let sum = all[1..]
                    .iter()
                    .fold(all[0][i].clone(), |acc, d| lift2(&acc, &d[i], |p, q| p.add(&q)));
                out.push(sum);
                continue;
            }
            // Run time requires these to agree, so any described one is exact.
            let knowns: Vec<i64> = all.iter().filter_map(|d| d[i].known()).collect();
            if knowns.windows(2).any(|w| w[0] != w[1]) {
                return Err(format!("Concat inputs disagree on axis {i}: {knowns:?}"));
            }
            let pick = all
                .iter()
                .map(|d| &d[i])
                .find(|d| d.known().is_some())
                .or_else(|| all.iter().map(|d| &d[i]).find(|d| d.is_constant()))
                .cloned()
                .unwrap_or(Nac);
            out.push(pick);
        }
        let value = if rank == 1 {
            let mut elems = Vec::new();
            let mut ok = true;
            for t in inp {
                match t.value.elems() {
                    Some(e) => elems.extend_from_slice(e),
                    None => ok = false,
                }
            }
            if ok {
                ValueInfo::Elems(elems)
            } else {
                ValueInfo::Nac
            }
        } else {
            ValueInfo::Nac
        };
        one(ShapeInfo::Ranked(out), value)
    }

    fn gather(&mut self, node: &Node, inp: &[TensorInfo]) -> Outs {
        let (Some(d), Some(q)) = (inp[0].shape.dims(), inp[1].shape.dims()) else {
            return shape_only(ShapeInfo::Nac);
        };
        if d.is_empty() {
            return Err("Gather data must have rank ≥ 1".into());
        }
        let axis = norm_axis(node.attr_int("axis").unwrap_or(0), d.len())?;
        let idx = inp[1].value.elems().and_then(all_known);
        if let (Some(ix), Some(n)) = (&idx, d[axis].known()) {
            if let Some(bad) = ix.iter().find(|&&i| i < -n || i >= n) {
                return Err(format!("Gather index {bad} out of range for extent {n}"));
            }
        }
        let mut out = d[..axis].to_vec();
        out.extend_from_slice(q);
        out.extend_from_slice(&d[axis + 1..]);
        let value = match (inp[0].value.elems(), &idx) {
            (Some(data), Some(ix)) if d.len() == 1 => {
                let n = data.len() as i64;
                let picked: Option<Vec<DimLattice>> = ix
                    .iter()
                    .map(|&i| {
                        let j = if i < 0 { i + n } else { i };
                        (0..n).contains(&j).then(|| data[j as usize].clone())
                    })
                    .collect();
                picked.map_or(ValueInfo::Nac, ValueInfo::Elems)
            }
            _ => ValueInfo::Nac,
        };
        one(ShapeInfo::Ranked(out), value)
    }

    fn reshape(&mut self, inp: &[TensorInfo]) -> Outs {
        let target = match &inp[1].value {
            ValueInfo::Elems(e) => e,
            ValueInfo::Undef => return Ok(vec![TensorInfo::UNDEF]),
            ValueInfo::Nac => {
                return match inp[1].shape.dims() {
                    Some([Known(n)]) => shape_only(nac_rank(*n as usize)),
                    _ => shape_only(ShapeInfo::Nac),
                }
            }
        };
        let data = inp[0].shape.dims();
        let mut out = Vec::with_capacity(target.len());
        let mut infer_at = None;
        for (i, t) in target.iter().enumerate() {
            out.push(match t {
                Known(-1) => {
                    if infer_at.replace(i).is_some() {
                        return Err("Reshape target has more than one -1".into());
                    }
                    Nac
                }
                Known(0) => data.and_then(|d| d.get(i).cloned()).unwrap_or(Nac),
                Known(k) if *k < -1 => return Err(format!("invalid Reshape target entry {k}")),
                other => other.clone(),
            });
        }
        let product = |dims: &[DimLattice]| -> Option<SymExpr> {
            dims.iter().try_fold(lit(1), |acc, d| acc.mul(&d.to_expr()?))
        };
        let total = data.and_then(product);
        match infer_at {
            Some(pos) => {
                let rest: Vec<DimLattice> = out
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != pos)
                    .map(|(_, d)| d.clone())
                    .collect();
                out[pos] = match (total, product(&rest)) {
                    (Some(t), Some(k)) => match (t.as_lit(), k.as_lit()) {
                        (_, Some(0)) => Nac,
                        (Some(a), Some(b)) if a % b != 0 => {
                            return Err(format!("cannot reshape {a} elements into a multiple of {b}"))
                        }
                        (_, Some(b)) if b > 0 => DimLattice::from_opt(t.div_exact(&k).or_else(|| t.floordiv(&k))),
                        _ => DimLattice::from_opt(t.div_exact(&k)),
                    },
                    _ => Nac,
                };
            }
            None => {
                if let (Some(a), Some(b)) = (total.and_then(|t| t.as_lit()), product(&out).and_then(|t| t.as_lit())) {
                    if a != b {
                        return Err(format!("cannot reshape {a} elements into {b}"));
                    }
                }
            }
        }
        let value = if out.len() <= 1 { inp[0].value.clone() } else { ValueInfo::Nac };
        one(ShapeInfo::Ranked(out), value)
    }

    fn slice(&mut self, inp: &[TensorInfo]) -> Outs {
        let Some(d) = inp[0].shape.dims() else {
            return shape_only(ShapeInfo::Nac);
        };
        let rank = d.len();
        let vals = |i: usize| inp.get(i).map(|t| t.value.elems().map(<[_]>::to_vec));
        let (Some(Some(starts)), Some(Some(ends))) = (vals(1), vals(2)) else {
            return shape_only(nac_rank(rank));
        };
        if starts.len() != ends.len() {
            return Err("Slice starts and ends differ in length".into());
        }
        let axes: Vec<usize> = match vals(3) {
            None => (0..starts.len()).collect(),
            Some(Some(a)) => match all_known(&a) {
                Some(a) if a.len() == starts.len() => a.iter().map(|&x| norm_axis(x, rank)).collect::<Result<_, _>>()?,
                Some(_) => return Err("Slice axes length mismatch".into()),
                None => return shape_only(nac_rank(rank)),
            },
            Some(None) => return shape_only(nac_rank(rank)),
        };
        let steps: Vec<i64> = match vals(4) {
            None => vec![1; starts.len()],
            Some(Some(s)) => match all_known(&s) {
                Some(s) if s.len() == starts.len() => s,
                Some(_) => return Err("Slice steps length mismatch".into()),
                None => return shape_only(nac_rank(rank)),
            },
            Some(None) => return shape_only(nac_rank(rank)),
        };
        if steps.contains(&0) {
            return Err("Slice step is zero".into());
        }
        let mut out = d.to_vec();
        for (j, &axis) in axes.iter().enumerate() {
            out[axis] = slice_len(&d[axis], &starts[j], &ends[j], steps[j]);
        }
        let value = match (inp[0].value.elems(), rank) {
            (Some(e), 1) => match (starts[0].known(), ends[0].known()) {
                (Some(s), Some(en)) => {
                    let (start, len) = ops::slice_range(e.len() as i64, s, en, steps[0]);
                    ValueInfo::Elems((0..len).map(|i| e[(start + i * steps[0]) as usize].clone()).collect())
                }
                _ => ValueInfo::Nac,
            },
            _ => ValueInfo::Nac,
        };
        one(ShapeInfo::Ranked(out), value)
    }
}

/// Moves every component that differs between `old` and `new` to `Nac`.
fn widen(old: &TensorInfo, new: &TensorInfo) -> TensorInfo {
    let shape = match (&old.shape, &new.shape) {
        (ShapeInfo::Ranked(a), ShapeInfo::Ranked(b)) if a.len() == b.len() && !a.is_empty() => {
            ShapeInfo::Ranked(a.iter().zip(b).map(|(x, y)| if x == y { x.clone() } else { Nac }).collect())
        }
        (ShapeInfo::Undef, s) => s.clone(),
        (a, b) if a == b => a.clone(),
        _ => ShapeInfo::Nac,
    };
    let value = if old.value == new.value { old.value.clone() } else { ValueInfo::Nac };
    TensorInfo { shape, value }
}
