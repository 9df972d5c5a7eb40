//! Seeded random graphs with concrete inputs, for differential testing.
//!
//! Graphs grow one proposal at a time. A proposal is kept only if the grown
//! graph validates and runs on the sample inputs, so every returned graph is
//! executable on its inputs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{validate, DimSpec, Graph, Node};
use crate::interp::{execute, TensorMap};
use crate::ops::OpKind;
use crate::tensor::{DType, Tensor};

/// Largest tensor a proposal may create, in elements.
const MAX_ELEMS: usize = 4096;

#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: Graph,
    pub inputs: TensorMap,
}

#[derive(Default)]
struct Proposal {
    nodes: Vec<Node>,
    inits: Vec<(String, Tensor)>,
    out: String,
}

struct Grower<'r> {
    rng: &'r mut ChaCha8Rng,
    graph: Graph,
    inputs: TensorMap,
    /// Tensors observed in the last run: id → (dtype, dims).
    known: BTreeMap<String, (DType, Vec<usize>)>,
    fresh: usize,
}

impl<'r> Grower<'r> {
    fn new(rng: &'r mut ChaCha8Rng, name: &str) -> Self {
        Grower {
            rng,
            graph: Graph::new(name),
            inputs: TensorMap::new(),
            known: BTreeMap::new(),
            fresh: 0,
        }
    }

    fn id(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn input(&mut self, id: &str, spec: Vec<DimSpec>, t: Tensor) {
        self.graph.add_input(id, t.dtype(), spec);
        self.known.insert(id.to_string(), (t.dtype(), t.dims().to_vec()));
        self.inputs.insert(id.to_string(), t);
    }

    fn random_f32(&mut self, dims: Vec<usize>) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_f32(dims, (0..n).map(|_| self.rng.gen_range(-2.0f32..2.0)).collect())
    }

    fn pick(&mut self, dtype: DType, min_rank: usize, max_rank: usize) -> Option<(String, Vec<usize>)> {
        let pool: Vec<(&String, &Vec<usize>)> = self
            .known
            .iter()
            .filter(|(_, (dt, d))| *dt == dtype && (min_rank..=max_rank).contains(&d.len()))
            .map(|(id, (_, d))| (id, d))
            .collect();
        // Favour recent tensors so graphs grow deep rather than wide.
        let recent = pool.len().saturating_sub(4);
        let i = if self.rng.gen_bool(0.6) && recent < pool.len() {
            self.rng.gen_range(recent..pool.len())
        } else {
            self.rng.gen_range(0..pool.len().max(1))
        };
        pool.get(i).map(|(id, d)| ((*id).clone(), (*d).clone()))
    }

    /// Same-dims f32 partner for `dims`, if one exists.
    fn partner(&mut self, dims: &[usize]) -> Option<String> {
        let ids: Vec<String> = self
            .known
            .iter()
            .filter(|(_, (dt, d))| *dt == DType::F32 && d == dims)
            .map(|(id, _)| id.clone())
            .collect();
        ids.choose(self.rng).cloned()
    }

    fn try_add(&mut self, p: Proposal) -> bool {
        let mut g = self.graph.clone();
        for (id, t) in &p.inits {
            g.add_initializer(id, t.clone());
        }
        for n in &p.nodes {
            g.add_node(n.clone());
        }
        g.outputs = vec![p.out.clone()];
        if !validate(&g).is_empty() {
            return false;
        }
        let Ok((_, trace)) = execute(&g, &self.inputs, None) else { return false };
        let dtypes = crate::graph::infer_dtypes(&g).unwrap_or_default();
        let mut known = self.known.clone();
        for (id, seen) in &trace.observed {
            let Some(d) = seen.last() else { continue };
            if d.iter().product::<usize>() > MAX_ELEMS {
                return false;
            }
            if let Some(&dt) = dtypes.get(id) {
                known.insert(id.clone(), (dt, d.clone()));
            }
        }
        g.outputs.clear();
        self.graph = g;
        self.known = known;
        true
    }

    fn finish(mut self, last: Option<String>) -> Sample {
        let produced: Vec<String> = self.graph.nodes.iter().flat_map(|n| n.outputs.clone()).collect();
        let observed: Vec<&String> = produced.iter().filter(|id| self.known.contains_key(*id)).collect();
        let mut outs: Vec<String> = last.into_iter().collect();
        if let Some(extra) = observed.choose(self.rng) {
            if self.rng.gen_bool(0.3) && !outs.contains(extra) {
                outs.push((*extra).clone());
            }
        }
        if outs.is_empty() {
            outs = self.graph.inputs.iter().take(1).map(|d| d.id.clone()).collect();
        }
        self.graph.outputs = outs;
        Sample {
            graph: self.graph,
            inputs: self.inputs,
        }
    }
}

fn image_input(g: &mut Grower, id: &str, channels: usize) {
    let h: usize = g.rng.gen_range(4..=9);
    let w: usize = g.rng.gen_range(4..=9);
    let sym_h = g.rng.gen_bool(0.6);
    let sym_w = g.rng.gen_bool(0.6);
    let spec = vec![
        DimSpec::Fixed(1),
        DimSpec::Fixed(channels as u64),
        if sym_h { DimSpec::Sym("H".into()) } else { DimSpec::Fixed(h as u64) },
        if sym_w { DimSpec::Sym("W".into()) } else { DimSpec::Fixed(w as u64) },
    ];
    let t = g.random_f32(vec![1, channels, h, w]);
    g.input(id, spec, t);
}

fn unary(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 0, 4)?;
    let op = *[OpKind::Relu, OpKind::Sigmoid, OpKind::Round].choose(g.rng)?;
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(op, &[&x], &[&out])],
        out,
        ..Proposal::default()
    })
}

fn binary(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let op = if g.rng.gen_bool(0.5) { OpKind::Add } else { OpKind::Mul };
    let mut p = Proposal::default();
    let y = match g.rng.gen_range(0..3) {
        0 => g.partner(&d)?,
        1 => x.clone(),
        _ => {
            let bd: Vec<usize> = d.iter().map(|&v| if g.rng.gen_bool(0.5) { 1 } else { v }).collect();
            let id = g.id("c");
            let t = g.random_f32(bd);
            p.inits.push((id.clone(), t));
            id
        }
    };
    p.out = g.id("t");
    p.nodes.push(Node::new(op, &[&x, &y], &[&p.out]));
    Some(p)
}

fn conv(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 4, 4)?;
    let cout = g.rng.gen_range(1..=3);
    let k = *[1usize, 3].choose(g.rng)?;
    let pad = g.rng.gen_range(0..=k as i64 / 2);
    let stride = g.rng.gen_range(1..=2i64);
    let w = g.id("c");
    let t = g.random_f32(vec![cout, d[1], k, k]);
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(OpKind::Conv, &[&x, &w], &[&out])
            .with_attr("kernel_shape", vec![k as i64; 2])
            .with_attr("pads", vec![pad; 4])
            .with_attr("strides", vec![stride; 2])],
        inits: vec![(w, t)],
        out,
    })
}

fn pool(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 4, 4)?;
    let op = if g.rng.gen_bool(0.5) { OpKind::MaxPool } else { OpKind::AveragePool };
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(op, &[&x], &[&out])
            .with_attr("kernel_shape", vec![2, 2])
            .with_attr("strides", vec![2, 2])],
        out,
        ..Proposal::default()
    })
}

fn concat(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let y = g.partner(&d)?;
    let axis = g.rng.gen_range(0..d.len()) as i64;
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(OpKind::Concat, &[&x, &y], &[&out]).with_attr("axis", axis)],
        out,
        ..Proposal::default()
    })
}

fn shape(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 1, 4)?;
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(OpKind::Shape, &[&x], &[&out])],
        out,
        ..Proposal::default()
    })
}

/// Flattens everything after the leading axis: Reshape(x, [d0, -1]) with d0
/// read through Shape and Gather.
fn flatten(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 2, 4)?;
    let (s, i, lead, tail, target, out) = (g.id("t"), g.id("c"), g.id("t"), g.id("c"), g.id("t"), g.id("t"));
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Shape, &[&x], &[&s]),
            Node::new(OpKind::Gather, &[&s, &i], &[&lead]),
            Node::new(OpKind::Concat, &[&lead, &tail], &[&target]).with_attr("axis", 0),
            Node::new(OpKind::Reshape, &[&x, &target], &[&out]),
        ],
        inits: vec![(i, Tensor::from_i64(vec![1], vec![0])), (tail, Tensor::from_i64(vec![1], vec![-1]))],
        out,
    })
}

fn reshape_const(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let target: Vec<i64> = if g.rng.gen_bool(0.5) { vec![1, -1] } else { vec![-1, *d.last()? as i64] };
    let (c, out) = (g.id("c"), g.id("t"));
    Some(Proposal {
        nodes: vec![Node::new(OpKind::Reshape, &[&x, &c], &[&out])],
        inits: vec![(c, Tensor::from_i64(vec![target.len()], target))],
        out,
    })
}

fn slice(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let axis = g.rng.gen_range(0..d.len());
    let n = d[axis] as i64;
    let start = g.rng.gen_range(-n..=n);
    let end = if g.rng.gen_bool(0.3) { i64::MAX } else { g.rng.gen_range(-n..=n) };
    let (s, e, a, out) = (g.id("c"), g.id("c"), g.id("c"), g.id("t"));
    Some(Proposal {
        nodes: vec![Node::new(OpKind::Slice, &[&x, &s, &e, &a], &[&out])],
        inits: vec![
            (s, Tensor::from_i64(vec![1], vec![start])),
            (e, Tensor::from_i64(vec![1], vec![end])),
            (a, Tensor::from_i64(vec![1], vec![axis as i64])),
        ],
        out,
    })
}

fn constant_of_shape(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 1, 4)?;
    let (s, out) = (g.id("t"), g.id("t"));
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Shape, &[&x], &[&s]),
            Node::new(OpKind::ConstantOfShape, &[&s], &[&out]).with_attr("value", 0.5),
        ],
        out,
        ..Proposal::default()
    })
}

/// Range over one extent of `x`, cast back to f32.
fn range(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let axis = g.rng.gen_range(0..d.len()) as i64;
    let (s, i, lim, zero, one, r, out) = (g.id("t"), g.id("c"), g.id("t"), g.id("c"), g.id("c"), g.id("t"), g.id("t"));
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Shape, &[&x], &[&s]),
            Node::new(OpKind::Gather, &[&s, &i], &[&lim]),
            Node::new(OpKind::Range, &[&zero, &lim, &one], &[&r]),
            Node::new(OpKind::Cast, &[&r], &[&out]).with_attr("to", "f32"),
        ],
        inits: vec![
            (i, Tensor::from_i64(vec![], vec![axis])),
            (zero, Tensor::scalar_i64(0)),
            (one, Tensor::scalar_i64(1)),
        ],
        out,
    })
}

/// Broadcasts a per-channel constant to the shape of `x`.
fn expand(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let cd: Vec<usize> = d.iter().enumerate().map(|(i, &v)| if i == 1 { v } else { 1 }).collect();
    let (c, s, out) = (g.id("c"), g.id("t"), g.id("t"));
    let t = g.random_f32(cd);
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Shape, &[&x], &[&s]),
            Node::new(OpKind::Expand, &[&c, &s], &[&out]),
        ],
        inits: vec![(c, t)],
        out,
    })
}

fn resample(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 4, 4)?;
    let (c, out) = (g.id("c"), g.id("t"));
    let (node, t) = if g.rng.gen_bool(0.5) {
        let sizes: Vec<i64> = d.iter().enumerate().map(|(i, &v)| if i >= 2 { v as i64 + 1 } else { v as i64 }).collect();
        (Node::new(OpKind::Resize, &[&x, &c], &[&out]), Tensor::from_i64(vec![4], sizes))
    } else {
        (Node::new(OpKind::Upsample, &[&x, &c], &[&out]), Tensor::from_f32(vec![4], vec![1.0, 1.0, 2.0, 2.0]))
    };
    Some(Proposal {
        nodes: vec![node.with_attr("mode", "nearest")],
        inits: vec![(c, t)],
        out,
    })
}

fn reduce_or_softmax(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let out = g.id("t");
    let node = if g.rng.gen_bool(0.5) {
        Node::new(OpKind::Softmax, &[&x], &[&out]).with_attr("axis", -1)
    } else {
        Node::new(OpKind::ReduceSum, &[&x], &[&out])
            .with_attr("axes", vec![g.rng.gen_range(0..d.len()) as i64])
            .with_attr("keepdims", g.rng.gen_range(0..=1i64))
    };
    Some(Proposal {
        nodes: vec![node],
        out,
        ..Proposal::default()
    })
}

fn matmul(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 2, 4)?;
    let k = g.rng.gen_range(1..=4);
    let (c, out) = (g.id("c"), g.id("t"));
    let t = g.random_f32(vec![*d.last()?, k]);
    Some(Proposal {
        nodes: vec![Node::new(OpKind::MatMul, &[&x, &c], &[&out])],
        inits: vec![(c, t)],
        out,
    })
}

fn depth_to_space(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 4, 4)?;
    if d[1] % 4 != 0 {
        return None;
    }
    let out = g.id("t");
    Some(Proposal {
        nodes: vec![Node::new(OpKind::DepthToSpace, &[&x], &[&out]).with_attr("blocksize", 2)],
        out,
        ..Proposal::default()
    })
}

fn nonzero(g: &mut Grower) -> Option<Proposal> {
    let (x, _) = g.pick(DType::F32, 1, 2)?;
    let (r, nz, out) = (g.id("t"), g.id("t"), g.id("t"));
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Relu, &[&x], &[&r]),
            Node::new(OpKind::Nonzero, &[&r], &[&nz]),
            Node::new(OpKind::Cast, &[&nz], &[&out]).with_attr("to", "f32"),
        ],
        out,
        ..Proposal::default()
    })
}

/// Two-way routing on the `sel` input; the paths may change the shape.
fn switch(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 1, 4)?;
    let (p0, p1, y0, y1, out) = (g.id("t"), g.id("t"), g.id("t"), g.id("t"), g.id("t"));
    let second = if d.len() == 4 && g.rng.gen_bool(0.5) {
        Node::new(OpKind::MaxPool, &[&p1], &[&y1])
            .with_attr("kernel_shape", vec![2, 2])
            .with_attr("strides", vec![2, 2])
    } else {
        Node::new(OpKind::Sigmoid, &[&p1], &[&y1])
    };
    Some(Proposal {
        nodes: vec![
            Node::new(OpKind::Switch, &[&x, "sel"], &[&p0, &p1]),
            Node::new(OpKind::Relu, &[&p0], &[&y0]),
            second,
            Node::new(OpKind::Combine, &[&y0, &y1], &[&out]),
        ],
        out,
        ..Proposal::default()
    })
}

type Propose = fn(&mut Grower) -> Option<Proposal>;

const MIXED: &[Propose] = &[
    unary,
    binary,
    conv,
    pool,
    concat,
    shape,
    flatten,
    reshape_const,
    slice,
    constant_of_shape,
    range,
    expand,
    resample,
    reduce_or_softmax,
    matmul,
    depth_to_space,
    nonzero,
    switch,
];

fn grow(g: &mut Grower, proposers: &[Propose], max_nodes: usize) -> Option<String> {
    let target = g.rng.gen_range(2..=max_nodes.max(2));
    let mut last = None;
    for _ in 0..target * 20 {
        let f = *proposers.choose(g.rng).expect("proposers");
        let Some(p) = f(g) else { continue };
        if g.graph.nodes.len() + p.nodes.len() > max_nodes {
            continue;
        }
        let out = p.out.clone();
        if g.try_add(p) {
            last = Some(out);
        }
        if g.graph.nodes.len() >= target {
            break;
        }
    }
    last
}

/// Graph of at most `max_nodes` top-level nodes over an image input `x`
/// (symbolic or fixed spatial dims) and an i64 selector `sel`, drawing from
/// every dynamism class.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Sample {
    let mut g = Grower::new(rng, "random");
    let c = g.rng.gen_range(1..=4);
    image_input(&mut g, "x", c);
    let sel = g.rng.gen_range(0..2);
    g.input("sel", vec![], Tensor::scalar_i64(sel));
    let last = grow(&mut g, MIXED, max_nodes);
    g.finish(last)
}

fn fusible_step(g: &mut Grower) -> Option<Proposal> {
    let (x, d) = g.pick(DType::F32, 2, 4)?;
    let out = g.id("t");
    let mut p = Proposal::default();
    let node = match g.rng.gen_range(0..6) {
        0 if d.len() == 4 => {
            let cout = g.rng.gen_range(1..=4);
            let k = *[1usize, 3].choose(g.rng)?;
            let (w, b) = (g.id("c"), g.id("c"));
            let wt = g.random_f32(vec![cout, d[1], k, k]);
            let bt = g.random_f32(vec![cout]);
            p.inits.push((w.clone(), wt));
            p.inits.push((b.clone(), bt));
            Node::new(OpKind::Conv, &[&x, &w, &b], &[&out])
                .with_attr("kernel_shape", vec![k as i64; 2])
                .with_attr("pads", vec![k as i64 / 2; 4])
        }
        0 | 1 if d.len() == 2 => {
            let c = g.id("c");
            let t = g.random_f32(vec![d[1], d[1]]);
            p.inits.push((c.clone(), t));
            Node::new(OpKind::MatMul, &[&x, &c], &[&out])
        }
        1 | 2 => {
            let op = *[OpKind::Relu, OpKind::Sigmoid, OpKind::Round].choose(g.rng)?;
            Node::new(op, &[&x], &[&out])
        }
        3 => Node::new(OpKind::Cast, &[&x], &[&out]).with_attr("to", "f32"),
        _ => {
            let op = if g.rng.gen_bool(0.5) { OpKind::Add } else { OpKind::Mul };
            let y = match g.rng.gen_range(0..3) {
                0 => g.partner(&d)?,
                1 => x.clone(),
                _ => {
                    // Per-channel or scalar constant.
                    let c = g.id("c");
                    let cd: Vec<usize> = if g.rng.gen_bool(0.5) {
                        vec![1]
                    } else {
                        d.iter().enumerate().map(|(i, &v)| if i == 1 { v } else { 1 }).collect()
                    };
                    let t = g.random_f32(cd);
                    p.inits.push((c.clone(), t));
                    c
                }
            };
            Node::new(op, &[&x, &y], &[&out])
        }
    };
    p.nodes.push(node);
    p.out = out;
    Some(p)
}

/// Chains of convolutions, matrix products and elementwise operators over
/// one symbolic-shaped input, with occasional reuse of earlier tensors.
pub fn random_fusible_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Sample {
    let mut g = Grower::new(rng, "fusible");
    if g.rng.gen_bool(0.7) {
        let h = g.rng.gen_range(3..=10);
        let w = g.rng.gen_range(3..=10);
        let c = g.rng.gen_range(1..=4);
        let t = g.random_f32(vec![1, c, h, w]);
        g.input(
            "x",
            vec![DimSpec::Fixed(1), DimSpec::Fixed(c as u64), DimSpec::Sym("H".into()), DimSpec::Sym("W".into())],
            t,
        );
    } else {
        let n = g.rng.gen_range(1..=12);
        let k = g.rng.gen_range(1..=6);
        let t = g.random_f32(vec![n, k]);
        g.input("x", vec![DimSpec::Sym("N".into()), DimSpec::Fixed(k as u64)], t);
    }
    let last = grow(&mut g, &[fusible_step], max_nodes);
    g.finish(last)
}

const STATIC: &[Propose] = &[
    unary,
    binary,
    conv,
    pool,
    concat,
    shape,
    flatten,
    reshape_const,
    slice,
    resample,
    reduce_or_softmax,
    matmul,
];

/// Graph of at most `max_nodes` nodes whose shapes are all fixed, so every
/// tensor size is known before execution.
pub fn random_static_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Sample {
    let mut g = Grower::new(rng, "static");
    let c: usize = g.rng.gen_range(1..=4);
    let h: usize = g.rng.gen_range(4..=9);
    let w: usize = g.rng.gen_range(4..=9);
    let t = g.random_f32(vec![1, c, h, w]);
    g.input("x", [1, c, h, w].iter().map(|&d| DimSpec::Fixed(d as u64)).collect(), t);
    let last = grow(&mut g, STATIC, max_nodes);
    g.finish(last)
}
