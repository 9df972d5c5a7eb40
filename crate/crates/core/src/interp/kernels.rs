//! Reference kernels.
//!
//! Everything computed elementwise goes through the scalar functions here
//! (`unary`, `binary`, `conv_at`, `matmul_at`), which the fused-region
//! evaluator also uses, so fused and unfused results are bit-identical.

use crate::graph::Node;
use crate::ops::{self, OpKind};
use crate::tensor::{DType, Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    F(f32),
    I(i64),
    B(bool),
}

impl Scalar {
    fn as_f32(self) -> f32 {
        match self {
            Scalar::F(v) => v,
            Scalar::I(v) => v as f32,
            Scalar::B(v) => v as u8 as f32,
        }
    }
}

pub fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

pub fn get(t: &Tensor, i: usize) -> Scalar {
    match t.data() {
        TensorData::F32(v) => Scalar::F(v[i]),
        TensorData::I64(v) => Scalar::I(v[i]),
        TensorData::Bool(v) => Scalar::B(v[i]),
    }
}

pub fn from_scalars(dtype: DType, dims: Vec<usize>, xs: impl Iterator<Item = Scalar>) -> Tensor {
    let data = match dtype {
        DType::F32 => TensorData::F32(xs.map(Scalar::as_f32).collect()),
        DType::I64 => TensorData::I64(
            xs.map(|x| match x {
                Scalar::I(v) => v,
                Scalar::F(v) => v as i64,
                Scalar::B(v) => v as i64,
            })
            .collect(),
        ),
        DType::Bool => TensorData::Bool(
            xs.map(|x| match x {
                Scalar::B(v) => v,
                Scalar::F(v) => v != 0.0,
                Scalar::I(v) => v != 0,
            })
            .collect(),
        ),
    };
    Tensor::new(dims, data).expect("kernel produced a consistent element count")
}

/// Gathers elements by flat source index.
pub fn take(t: &Tensor, dims: Vec<usize>, idx: &[usize]) -> Tensor {
    let data = match t.data() {
        TensorData::F32(v) => TensorData::F32(idx.iter().map(|&i| v[i]).collect()),
        TensorData::I64(v) => TensorData::I64(idx.iter().map(|&i| v[i]).collect()),
        TensorData::Bool(v) => TensorData::Bool(idx.iter().map(|&i| v[i]).collect()),
    };
    Tensor::new(dims, data).expect("index list matches dims")
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, String> {
    let r = a.len().max(b.len());
    (0..r)
        .map(|i| {
            let x = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
            let y = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
            match (x, y) {
                (x, y) if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                (x, y) => Err(format!("cannot broadcast {a:?} with {b:?} ({x} vs {y})")),
            }
        })
        .collect()
}

/// Flat offset into a tensor of `inp` dims for a multi-index over `out` dims,
/// with numpy broadcasting.
pub fn broadcast_offset(out_index: &[usize], inp: &[usize], inp_strides: &[usize]) -> usize {
    let shift = out_index.len() - inp.len();
    inp.iter()
        .zip(inp_strides)
        .enumerate()
        .map(|(k, (&d, &s))| if d == 1 { 0 } else { out_index[k + shift] * s })
        .sum()
}

/// For every element of `out`, the flat index into a broadcast input.
pub fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let st = strides(inp);
    let mut idx = vec![0usize; out.len()];
    let n = numel(out);
    let mut res = Vec::with_capacity(n);
    for _ in 0..n {
        res.push(broadcast_offset(&idx, inp, &st));
        increment(&mut idx, out);
    }
    res
}

/// Odometer step over a multi-index.
pub fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

pub fn unary(node: &Node, x: Scalar) -> Result<Scalar, String> {
    Ok(match (node.op, x) {
        (OpKind::Relu, Scalar::F(v)) => Scalar::F(if v > 0.0 { v } else { 0.0 }),
        (OpKind::Relu, Scalar::I(v)) => Scalar::I(v.max(0)),
        (OpKind::Sigmoid, Scalar::F(v)) => Scalar::F(1.0 / (1.0 + (-v).exp())),
        (OpKind::Round, Scalar::F(v)) => Scalar::F(v.round_ties_even()),
        (OpKind::Cast, x) => {
            let to: DType = node.attr_str("to").unwrap_or("f32").parse()?;
            cast(x, to)
        }
        (op, x) => return Err(format!("{op} is not defined for {x:?}")),
    })
}

pub fn cast(x: Scalar, to: DType) -> Scalar {
    match to {
        DType::F32 => Scalar::F(x.as_f32()),
        DType::I64 => Scalar::I(match x {
            Scalar::F(v) => v as i64,
            Scalar::I(v) => v,
            Scalar::B(v) => v as i64,
        }),
        DType::Bool => Scalar::B(match x {
            Scalar::F(v) => v != 0.0,
            Scalar::I(v) => v != 0,
            Scalar::B(v) => v,
        }),
    }
}

pub fn binary(op: OpKind, a: Scalar, b: Scalar) -> Result<Scalar, String> {
    Ok(match (op, a, b) {
        (OpKind::Add, Scalar::F(x), Scalar::F(y)) => Scalar::F(x + y),
        (OpKind::Add, Scalar::I(x), Scalar::I(y)) => Scalar::I(x.wrapping_add(y)),
        (OpKind::Mul, Scalar::F(x), Scalar::F(y)) => Scalar::F(x * y),
        (OpKind::Mul, Scalar::I(x), Scalar::I(y)) => Scalar::I(x.wrapping_mul(y)),
        (op, a, b) => return Err(format!("{op} is not defined for {a:?} and {b:?}")),
    })
}

/// Sliding-window parameters shared by Conv and pooling.
#[derive(Debug, Clone)]
pub struct Window {
    pub kernel: [usize; 2],
    pub strides: [usize; 2],
    /// top, left, bottom, right
    pub pads: [usize; 4],
    pub dilations: [usize; 2],
    pub group: usize,
}

impl Window {
    pub fn from_node(node: &Node, weight_dims: Option<&[usize]>) -> Result<Window, String> {
        let pair = |name: &str| -> Result<[usize; 2], String> {
            match node.attr_ints(name) {
                None => Ok([1, 1]),
                Some(&[a, b]) if a > 0 && b > 0 => Ok([a as usize, b as usize]),
                Some(v) => Err(format!("bad `{name}` {v:?}")),
            }
        };
        let pads = match node.attr_ints("pads") {
            None => [0; 4],
            Some(&[a, b, c, d]) if a >= 0 && b >= 0 && c >= 0 && d >= 0 => {
                [a as usize, b as usize, c as usize, d as usize]
            }
            Some(v) => return Err(format!("bad `pads` {v:?}")),
        };
        let kernel = match (node.attr_ints("kernel_shape"), weight_dims) {
            (Some(_), _) => pair("kernel_shape")?,
            (None, Some(w)) => [w[2], w[3]],
            (None, None) => return Err("missing `kernel_shape`".into()),
        };
        let group = node.attr_int("group").unwrap_or(1);
        if group <= 0 {
            return Err("group must be positive".into());
        }
        Ok(Window {
            kernel,
            strides: pair("strides")?,
            pads,
            dilations: if node.op == OpKind::Conv { pair("dilations")? } else { [1, 1] },
            group: group as usize,
        })
    }

    pub fn out_dims(&self, x: &[usize], channels: usize) -> Result<Vec<usize>, String> {
        let dim = |i: usize| {
            ops::window_out_dim(
                x[2 + i] as i64,
                self.kernel[i] as i64,
                (self.pads[i] + self.pads[i + 2]) as i64,
                self.strides[i] as i64,
                self.dilations[i] as i64,
            )
        };
        let (h, w) = (dim(0), dim(1));
        if h < 0 || w < 0 {
            return Err(format!("window larger than padded input {x:?}"));
        }
        Ok(vec![x[0], channels, h as usize, w as usize])
    }
}

/// One Conv output element. Input `[N,C,H,W]`, weight `[M,C/group,kh,kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_at(
    x: &[f32],
    xd: &[usize],
    w: &[f32],
    wd: &[usize],
    bias: Option<&[f32]>,
    win: &Window,
    out: [usize; 4],
) -> f32 {
    let [n, m, oy, ox] = out;
    let (c_in, h, wid) = (xd[1], xd[2], xd[3]);
    let cg = wd[1];
    let mg = wd[0] / win.group;
    let g = m / mg;
    let mut acc = bias.map_or(0.0, |b| b[m]);
    for c in 0..cg {
        let ic = g * cg + c;
        let xbase = (n * c_in + ic) * h * wid;
        let wbase = (m * cg + c) * wd[2] * wd[3];
        for ky in 0..wd[2] {
            let iy = (oy * win.strides[0] + ky * win.dilations[0]) as isize - win.pads[0] as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let row = xbase + iy as usize * wid;
            for kx in 0..wd[3] {
                let ix = (ox * win.strides[1] + kx * win.dilations[1]) as isize - win.pads[1] as isize;
                if ix < 0 || ix >= wid as isize {
                    continue;
                }
                acc += x[row + ix as usize] * w[wbase + ky * wd[3] + kx];
            }
        }
    }
    acc
}

/// One pooling output element (average excludes padding).
pub fn pool_at(x: &[f32], xd: &[usize], win: &Window, is_max: bool, out: [usize; 4]) -> f32 {
    let [n, c, oy, ox] = out;
    let (h, wid) = (xd[2], xd[3]);
    let base = (n * xd[1] + c) * h * wid;
    let mut acc = if is_max { f32::NEG_INFINITY } else { 0.0 };
    let mut count = 0usize;
    for ky in 0..win.kernel[0] {
        let iy = (oy * win.strides[0] + ky) as isize - win.pads[0] as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kx in 0..win.kernel[1] {
            let ix = (ox * win.strides[1] + kx) as isize - win.pads[1] as isize;
            if ix < 0 || ix >= wid as isize {
                continue;
            }
            let v = x[base + iy as usize * wid + ix as usize];
            if is_max {
                acc = acc.max(v);
            } else {
                acc += v;
            }
            count += 1;
        }
    }
    if is_max || count == 0 {
        acc
    } else {
        acc / count as f32
    }
}

/// Batched MatMul geometry: `a [..., m, k] × b [..., k, n]`.
#[derive(Debug, Clone)]
pub struct MatMulDims {
    pub out: Vec<usize>,
    pub batch: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl MatMulDims {
    pub fn new(a: &[usize], b: &[usize]) -> Result<MatMulDims, String> {
        if a.len() < 2 || b.len() < 2 {
            return Err(format!("MatMul expects rank ≥ 2 operands, got {a:?} and {b:?}"));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(format!("MatMul inner dims differ: {a:?} × {b:?}"));
        }
        let a_batch = a[..a.len() - 2].to_vec();
        let b_batch = b[..b.len() - 2].to_vec();
        let batch = broadcast_shape(&a_batch, &b_batch)?;
        let mut out = batch.clone();
        out.extend([m, n]);
        Ok(MatMulDims {
            out,
            batch,
            a_batch,
            b_batch,
            m,
            k,
            n,
        })
    }

    /// Element at a multi-index over `out`.
    pub fn at(&self, a: &[f32], b: &[f32], index: &[usize]) -> f32 {
        let nb = self.batch.len();
        let bi = &index[..nb];
        let (i, j) = (index[nb], index[nb + 1]);
        let aoff = broadcast_offset(bi, &self.a_batch, &strides(&self.a_batch)) * self.m * self.k;
        let boff = broadcast_offset(bi, &self.b_batch, &strides(&self.b_batch)) * self.k * self.n;
        let mut acc = 0.0f32;
        for kk in 0..self.k {
            acc += a[aoff + i * self.k + kk] * b[boff + kk * self.n + j];
        }
        acc
    }
}

/// Checks Conv operands and returns the window and output dims.
pub fn conv_setup(node: &Node, xd: &[usize], wd: &[usize], bias_len: Option<usize>) -> Result<(Window, Vec<usize>), String> {
    if xd.len() != 4 || wd.len() != 4 {
        return Err(format!("Conv expects rank-4 input and weight, got {xd:?} and {wd:?}"));
    }
    let win = Window::from_node(node, Some(wd))?;
    if win.kernel != [wd[2], wd[3]] {
        return Err(format!("kernel_shape {:?} does not match weight {wd:?}", win.kernel));
    }
    if xd[1] != wd[1] * win.group || !wd[0].is_multiple_of(win.group) {
        return Err(format!("Conv channels mismatch: input {xd:?}, weight {wd:?}"));
    }
    if let Some(n) = bias_len.filter(|&n| n != wd[0]) {
        return Err(format!("Conv bias has {n} entries for {} output channels", wd[0]));
    }
    let od = win.out_dims(xd, wd[0])?;
    Ok((win, od))
}

pub(crate) fn f32s<'a>(t: &'a Tensor, what: &str) -> Result<&'a [f32], String> {
    t.as_f32().ok_or_else(|| format!("{what} must be f32, got {}", t.dtype()))
}

fn i64s<'a>(t: &'a Tensor, what: &str) -> Result<&'a [i64], String> {
    t.as_i64().ok_or_else(|| format!("{what} must be i64, got {}", t.dtype()))
}

fn norm_axis(axis: i64, rank: usize) -> Result<usize, String> {
    let r = rank as i64;
    if axis < -r || axis >= r {
        return Err(format!("axis {axis} out of range for rank {rank}"));
    }
    Ok(if axis < 0 { (axis + r) as usize } else { axis as usize })
}

fn dims_from(values: &[i64], what: &str) -> Result<Vec<usize>, String> {
    values
        .iter()
        .map(|&v| usize::try_from(v).map_err(|_| format!("negative extent {v} in {what}")))
        .collect()
}

/// Elementwise map over a tensor.
pub fn map_unary(node: &Node, x: &Tensor, to: DType) -> Result<Tensor, String> {
    let vals: Vec<Scalar> = (0..x.len()).map(|i| unary(node, get(x, i))).collect::<Result<_, _>>()?;
    Ok(from_scalars(to, x.dims().to_vec(), vals.into_iter()))
}

/// Runs a non-control-flow operator.
pub fn run(node: &Node, inp: &[&Tensor], out_dtypes: &[DType]) -> Result<Vec<Tensor>, String> {
    use OpKind::*;
    let x = inp[0];
    let one = |t: Tensor| Ok(vec![t]);
    match node.op {
        Relu | Sigmoid | Round | Cast => one(map_unary(node, x, out_dtypes[0])?),
        Add | Mul => {
            let (a, b) = (inp[0], inp[1]);
            let out = broadcast_shape(a.dims(), b.dims())?;
            let ma = broadcast_map(&out, a.dims());
            let mb = broadcast_map(&out, b.dims());
            let vals: Vec<Scalar> = ma
                .iter()
                .zip(&mb)
                .map(|(&i, &j)| binary(node.op, get(a, i), get(b, j)))
                .collect::<Result<_, _>>()?;
            one(from_scalars(a.dtype(), out, vals.into_iter()))
        }
        Conv => {
            let (xd, wd) = (x.dims(), inp[1].dims());
            let (win, od) = conv_setup(node, xd, wd, inp.get(2).map(|b| b.len()))?;
            let (xs, ws) = (f32s(x, "Conv input")?, f32s(inp[1], "Conv weight")?);
            let bias = inp.get(2).map(|b| f32s(b, "Conv bias")).transpose()?;
            let mut out = Vec::with_capacity(numel(&od));
            for n in 0..od[0] {
                for m in 0..od[1] {
                    for oy in 0..od[2] {
                        for ox in 0..od[3] {
                            out.push(conv_at(xs, xd, ws, wd, bias, &win, [n, m, oy, ox]));
                        }
                    }
                }
            }
            one(Tensor::from_f32(od, out))
        }
        AveragePool | MaxPool => {
            let xd = x.dims();
            if xd.len() != 4 {
                return Err(format!("{} expects rank-4 input, got {xd:?}", node.op));
            }
            let win = Window::from_node(node, None)?;
            let xs = f32s(x, "pool input")?;
            let od = win.out_dims(xd, xd[1])?;
            let mut out = Vec::with_capacity(numel(&od));
            let mut idx = vec![0; 4];
            for _ in 0..numel(&od) {
                out.push(pool_at(xs, xd, &win, node.op == MaxPool, [idx[0], idx[1], idx[2], idx[3]]));
                increment(&mut idx, &od);
            }
            one(Tensor::from_f32(od, out))
        }
        MatMul => {
            let md = MatMulDims::new(x.dims(), inp[1].dims())?;
            let (a, b) = (f32s(x, "MatMul A")?, f32s(inp[1], "MatMul B")?);
            let mut idx = vec![0; md.out.len()];
            let mut out = Vec::with_capacity(numel(&md.out));
            for _ in 0..numel(&md.out) {
                out.push(md.at(a, b, &idx));
                increment(&mut idx, &md.out);
            }
            one(Tensor::from_f32(md.out.clone(), out))
        }
        Concat => {
            let rank = x.rank();
            let axis = norm_axis(node.attr_int("axis").unwrap_or(0), rank)?;
            let mut od = x.dims().to_vec();
            od[axis] = 0;
            for t in inp {
                let d = t.dims();
                if d.len() != rank || d.iter().enumerate().any(|(i, &v)| i != axis && v != od[i]) {
                    return Err(format!("Concat inputs disagree: {:?} vs {d:?}", x.dims()));
                }
                od[axis] += d[axis];
            }
            let outer = numel(&od[..axis]);
            let inner = numel(&od[axis + 1..]);
            let mut vals = Vec::with_capacity(numel(&od));
            for o in 0..outer {
                for t in inp {
                    let chunk = t.dims()[axis] * inner;
                    vals.extend((o * chunk..(o + 1) * chunk).map(|i| get(t, i)));
                }
            }
            one(from_scalars(x.dtype(), od, vals.into_iter()))
        }
        Gather => {
            let d = x.dims();
            if d.is_empty() {
                return Err("Gather data must have rank ≥ 1".into());
            }
            let axis = norm_axis(node.attr_int("axis").unwrap_or(0), d.len())?;
            let ix = i64s(inp[1], "Gather indices")?;
            let n = d[axis] as i64;
            let outer = numel(&d[..axis]);
            let inner = numel(&d[axis + 1..]);
            let mut src = Vec::with_capacity(outer * ix.len() * inner);
            for o in 0..outer {
                for &i in ix {
                    let j = if i < 0 { i + n } else { i };
                    if !(0..n).contains(&j) {
                        return Err(format!("Gather index {i} out of range for extent {n}"));
                    }
                    let base = (o * d[axis] + j as usize) * inner;
                    src.extend(base..base + inner);
                }
            }
            let mut od = d[..axis].to_vec();
            od.extend_from_slice(inp[1].dims());
            od.extend_from_slice(&d[axis + 1..]);
            one(take(x, od, &src))
        }
        ReduceSum => {
            let d = x.dims();
            let axes: Vec<usize> = match node.attr_ints("axes") {
                Some(a) => a.iter().map(|&v| norm_axis(v, d.len())).collect::<Result<_, _>>()?,
                None => (0..d.len()).collect(),
            };
            let keep = node.attr_int("keepdims").unwrap_or(1) != 0;
            let kept: Vec<usize> = d.iter().enumerate().map(|(i, &v)| if axes.contains(&i) { 1 } else { v }).collect();
            let ks = strides(&kept);
            let mut acc = vec![Scalar::I(0); numel(&kept)];
            let zero = if x.dtype() == DType::F32 { Scalar::F(0.0) } else { Scalar::I(0) };
            acc.iter_mut().for_each(|a| *a = zero);
            let mut idx = vec![0; d.len()];
            for i in 0..x.len() {
                let o: usize = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if axes.contains(&k) { 0 } else { v * ks[k] })
                    .sum();
                acc[o] = binary(Add, acc[o], get(x, i))?;
                increment(&mut idx, d);
            }
            let od = if keep {
                kept
            } else {
                d.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &v)| v).collect()
            };
            one(from_scalars(x.dtype(), od, acc.into_iter()))
        }
        Softmax => {
            let d = x.dims();
            let axis = norm_axis(node.attr_int("axis").unwrap_or(-1), d.len())?;
            let xs = f32s(x, "Softmax input")?;
            let (outer, n, inner) = (numel(&d[..axis]), d[axis], numel(&d[axis + 1..]));
            let mut out = vec![0.0f32; xs.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let m = (0..n).map(|k| xs[at(k)]).fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0f32;
                    for k in 0..n {
                        let e = (xs[at(k)] - m).exp();
                        out[at(k)] = e;
                        sum += e;
                    }
                    for k in 0..n {
                        out[at(k)] /= sum;
                    }
                }
            }
            one(Tensor::from_f32(d.to_vec(), out))
        }
        DepthToSpace => {
            let d = x.dims();
            let r = node.attr_int("blocksize").unwrap_or(1);
            if d.len() != 4 || r <= 0 || !d[1].is_multiple_of((r * r) as usize) {
                return Err(format!("DepthToSpace blocksize {r} does not fit {d:?}"));
            }
            let r = r as usize;
            let crd = node.attr_str("mode") == Some("CRD");
            let (n, c, h, w) = (d[0], d[1] / (r * r), d[2], d[3]);
            let od = vec![n, c, h * r, w * r];
            let mut src = Vec::with_capacity(numel(&od));
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..h * r {
                        for xx in 0..w * r {
                            let (i, j) = (y % r, xx % r);
                            let ic = if crd { ch * r * r + i * r + j } else { (i * r + j) * c + ch };
                            src.push(((b * d[1] + ic) * h + y / r) * w + xx / r);
                        }
                    }
                }
            }
            one(take(x, od, &src))
        }
        Expand => {
            let target = dims_from(i64s(inp[1], "Expand shape")?, "Expand shape")?;
            let od = broadcast_shape(x.dims(), &target)?;
            let src = broadcast_map(&od, x.dims());
            one(take(x, od, &src))
        }
        Range => match (x.data(), inp[1].data(), inp[2].data()) {
            (TensorData::I64(a), TensorData::I64(b), TensorData::I64(c)) => {
                let (&[a], &[b], &[c]) = (a.as_slice(), b.as_slice(), c.as_slice()) else {
                    return Err("Range expects scalar operands".into());
                };
                if c == 0 {
                    return Err("Range delta is zero".into());
                }
                let n = ops::range_len(a, b, c);
                one(Tensor::from_i64(vec![n as usize], (0..n).map(|i| a + i * c).collect()))
            }
            (TensorData::F32(a), TensorData::F32(b), TensorData::F32(c)) => {
                let (&[a], &[b], &[c]) = (a.as_slice(), b.as_slice(), c.as_slice()) else {
                    return Err("Range expects scalar operands".into());
                };
                if c == 0.0 {
                    return Err("Range delta is zero".into());
                }
                let n = ((b - a) / c).ceil().max(0.0) as usize;
                one(Tensor::from_f32(vec![n], (0..n).map(|i| a + i as f32 * c).collect()))
            }
            _ => Err("Range expects three scalars of one numeric dtype".into()),
        },
        Reshape => {
            let target = i64s(inp[1], "Reshape shape")?;
            let d = x.dims();
            let mut od = Vec::with_capacity(target.len());
            let mut infer = None;
            for (i, &t) in target.iter().enumerate() {
                od.push(match t {
                    -1 if infer.is_none() => {
                        infer = Some(i);
                        1
                    }
                    0 => *d.get(i).ok_or("Reshape 0 entry beyond input rank")?,
                    t if t > 0 => t as usize,
                    t => return Err(format!("invalid Reshape target entry {t}")),
                });
            }
            if let Some(i) = infer {
                let rest = numel(&od);
                if rest == 0 || !x.len().is_multiple_of(rest) {
                    return Err(format!("cannot reshape {d:?} into {target:?}"));
                }
                od[i] = x.len() / rest;
            }
            if numel(&od) != x.len() {
                return Err(format!("cannot reshape {d:?} into {target:?}"));
            }
            one(x.clone().reshaped(od)?)
        }
        Slice => {
            let d = x.dims();
            let starts = i64s(inp[1], "Slice starts")?;
            let ends = i64s(inp[2], "Slice ends")?;
            let axes: Vec<usize> = match inp.get(3) {
                Some(a) => i64s(a, "Slice axes")?.iter().map(|&v| norm_axis(v, d.len())).collect::<Result<_, _>>()?,
                None => (0..starts.len()).collect(),
            };
            let steps: Vec<i64> = match inp.get(4) {
                Some(s) => i64s(s, "Slice steps")?.to_vec(),
                None => vec![1; starts.len()],
            };
            if ends.len() != starts.len() || axes.len() != starts.len() || steps.len() != starts.len() {
                return Err("Slice parameter lengths differ".into());
            }
            let mut first: Vec<i64> = vec![0; d.len()];
            let mut step: Vec<i64> = vec![1; d.len()];
            let mut od = d.to_vec();
            for j in 0..starts.len() {
                if steps[j] == 0 {
                    return Err("Slice step is zero".into());
                }
                let (s, len) = ops::slice_range(d[axes[j]] as i64, starts[j], ends[j], steps[j]);
                first[axes[j]] = s;
                step[axes[j]] = steps[j];
                od[axes[j]] = len as usize;
            }
            let st = strides(d);
            let mut idx = vec![0; d.len()];
            let mut src = Vec::with_capacity(numel(&od));
            for _ in 0..numel(&od) {
                src.push(
                    (0..d.len())
                        .map(|k| (first[k] + idx[k] as i64 * step[k]) as usize * st[k])
                        .sum(),
                );
                increment(&mut idx, &od);
            }
            one(take(x, od, &src))
        }
        Resize => {
            let sizes = dims_from(i64s(inp[1], "Resize sizes")?, "Resize sizes")?;
            if sizes.len() != x.rank() {
                return Err(format!("Resize sizes {sizes:?} do not match rank {}", x.rank()));
            }
            one(resample(x, &sizes, node.attr_str("mode").unwrap_or("nearest"), None)?)
        }
        Upsample => {
            let scales = f32s(inp[1], "Upsample scales")?;
            if scales.len() != x.rank() || scales.iter().any(|&s| s.is_nan() || s <= 0.0) {
                return Err(format!("Upsample scales {scales:?} do not fit rank {}", x.rank()));
            }
            let od: Vec<usize> = x
                .dims()
                .iter()
                .zip(scales)
                .map(|(&d, &s)| ops::upsample_dim(d as i64, s) as usize)
                .collect();
            one(resample(x, &od, node.attr_str("mode").unwrap_or("nearest"), Some(scales))?)
        }
        Shape => one(Tensor::from_i64(vec![x.rank()], x.dims().iter().map(|&d| d as i64).collect())),
        ConstantOfShape => {
            let od = dims_from(i64s(x, "ConstantOfShape input")?, "ConstantOfShape input")?;
            let v = node.attr_float("value").unwrap_or(0.0);
            let fill = match out_dtypes[0] {
                DType::F32 => Scalar::F(v as f32),
                DType::I64 => Scalar::I(v as i64),
                DType::Bool => Scalar::B(v != 0.0),
            };
            let n = numel(&od);
            one(from_scalars(out_dtypes[0], od, std::iter::repeat_n(fill, n)))
        }
        Eyelike => {
            let d = x.dims();
            if d.len() != 2 {
                return Err(format!("Eyelike expects rank 2, got {d:?}"));
            }
            let k = node.attr_int("k").unwrap_or(0);
            let vals = (0..d[0] * d[1]).map(|i| {
                let (r, c) = ((i / d[1]) as i64, (i % d[1]) as i64);
                Scalar::I((c == r + k) as i64)
            });
            one(from_scalars(out_dtypes[0], d.to_vec(), vals))
        }
        Nonzero => {
            let d = x.dims();
            let hits: Vec<usize> = (0..x.len())
                .filter(|&i| match get(x, i) {
                    Scalar::F(v) => v != 0.0,
                    Scalar::I(v) => v != 0,
                    Scalar::B(v) => v,
                })
                .collect();
            let st = strides(d);
            let mut out = vec![0i64; d.len() * hits.len()];
            for (j, &flat) in hits.iter().enumerate() {
                for k in 0..d.len() {
                    out[k * hits.len() + j] = ((flat / st[k]) % d[k]) as i64;
                }
            }
            one(Tensor::from_i64(vec![d.len(), hits.len()], out))
        }
        If | Loop | Switch | Combine | FusedRegion => Err(format!("{} is not a plain kernel", node.op)),
    }
}

/// Nearest or bilinear resampling with half-pixel centers. Bilinear works on
/// the last two axes; `scales` switches nearest sampling to `floor(o / s)`.
fn resample(x: &Tensor, od: &[usize], mode: &str, scales: Option<&[f32]>) -> Result<Tensor, String> {
    let d = x.dims();
    match mode {
        "nearest" => {
            let per_axis: Vec<Vec<usize>> = (0..d.len())
                .map(|k| {
                    (0..od[k])
                        .map(|o| {
                            let src = match scales {
                                Some(s) => (o as f64 / s[k] as f64).floor(),
                                None => ((o as f64 + 0.5) * d[k] as f64 / od[k] as f64).floor(),
                            };
                            (src.max(0.0) as usize).min(d[k].saturating_sub(1))
                        })
                        .collect()
                })
                .collect();
            if od.iter().zip(d).any(|(&o, &i)| o > 0 && i == 0) {
                return Err(format!("cannot resample empty {d:?} to {od:?}"));
            }
            let st = strides(d);
            let mut idx = vec![0; d.len()];
            let mut src = Vec::with_capacity(numel(od));
            for _ in 0..numel(od) {
                src.push((0..d.len()).map(|k| per_axis[k][idx[k]] * st[k]).sum());
                increment(&mut idx, od);
            }
            Ok(take(x, od.to_vec(), &src))
        }
        "linear" => {
            let r = d.len();
            if r < 2 || d[..r - 2] != od[..r - 2] {
                return Err(format!("linear resampling changes only the last two axes: {d:?} → {od:?}"));
            }
            let xs = f32s(x, "resample input")?;
            let taps = |axis: usize| -> Vec<(usize, usize, f32)> {
                (0..od[axis])
                    .map(|o| {
                        let s = ((o as f64 + 0.5) * d[axis] as f64 / od[axis] as f64 - 0.5)
                            .clamp(0.0, (d[axis] - 1) as f64);
                        let i0 = s.floor() as usize;
                        let i1 = (i0 + 1).min(d[axis] - 1);
                        (i0, i1, (s - i0 as f64) as f32)
                    })
                    .collect()
            };
            let (ty, tx) = (taps(r - 2), taps(r - 1));
            let (h, w) = (d[r - 2], d[r - 1]);
            let planes = numel(&d[..r - 2]);
            let mut out = Vec::with_capacity(numel(od));
            for p in 0..planes {
                let base = p * h * w;
                for &(y0, y1, fy) in &ty {
                    for &(x0, x1, fx) in &tx {
                        let v = |y: usize, xx: usize| xs[base + y * w + xx];
                        let top = v(y0, x0) + (v(y0, x1) - v(y0, x0)) * fx;
                        let bot = v(y1, x0) + (v(y1, x1) - v(y1, x0)) * fx;
                        out.push(top + (bot - top) * fy);
                    }
                }
            }
            Ok(Tensor::from_f32(od.to_vec(), out))
        }
        other => Err(format!("unsupported resampling mode `{other}`")),
    }
}
