use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SplitConfig;
use crate::graph::{DimSpec, Graph, Node};
use crate::ops::OpKind;
use crate::tensor::{DType, Tensor};

pub const ROUTING_INPUT: &str = "lr";
pub const ROUTING_SELECTOR: &str = "route";
pub const ROUTING_OUTPUT: &str = "sr";

/// Shape of one super-resolution path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSpec {
    /// Residual blocks.
    pub blocks: usize,
    /// Channels between blocks.
    pub width: usize,
    /// Channel multiplier inside a block.
    pub expansion: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            blocks: 2,
            width: 16,
            expansion: 4,
        }
    }
}

struct Builder {
    g: Graph,
    rng: ChaCha8Rng,
}

impl Builder {
    /// 3x3 same-padding convolution with seeded weights and bias.
    fn conv(&mut self, x: &str, out: &str, cin: usize, cout: usize) {
        let bound = 1.0 / ((cin * 9) as f32).sqrt();
        let w: Vec<f32> = (0..cout * cin * 9).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let b: Vec<f32> = (0..cout).map(|_| self.rng.gen_range(-0.1..0.1)).collect();
        let (wid, bid) = (format!("{out}.w"), format!("{out}.b"));
        self.g.add_initializer(&wid, Tensor::from_f32(vec![cout, cin, 3, 3], w));
        self.g.add_initializer(&bid, Tensor::from_f32(vec![cout], b));
        self.g.add_node(
            Node::new(OpKind::Conv, &[x, &wid, &bid], &[out])
                .with_attr("kernel_shape", vec![3, 3])
                .with_attr("pads", vec![1; 4]),
        );
    }
}

/// Multi-path super-resolution graph: a Switch on the selector feeds one
/// path per split level, each ending in DepthToSpace, and a Combine merges
/// the paths. Weights come from a generator seeded with `seed`, which is
/// also recorded on the Switch node.
pub fn build_routing_graph(cfg: &SplitConfig, paths: &[PathSpec], seed: u64) -> Graph {
    let s = cfg.scale;
    let default = [PathSpec::default()];
    let paths = if paths.is_empty() { &default[..] } else { paths };
    let k = paths.len();
    let mut b = Builder {
        g: Graph::new("routing"),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    b.g.add_input(
        ROUTING_INPUT,
        DType::F32,
        vec![
            DimSpec::Fixed(1),
            DimSpec::Fixed(3),
            DimSpec::Sym("H".into()),
            DimSpec::Sym("W".into()),
        ],
    );
    b.g.add_input(ROUTING_SELECTOR, DType::I64, vec![]);
    let branches: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    b.g.add_node(
        Node::new(OpKind::Switch, &[ROUTING_INPUT, ROUTING_SELECTOR], &refs).with_attr("seed", seed as i64),
    );
    let mut outs = Vec::with_capacity(k);
    for (i, spec) in paths.iter().enumerate() {
        let c = spec.width;
        let e = c * spec.expansion.max(1);
        let mut cur = format!("k{i}.entry");
        b.conv(&branches[i], &cur, 3, c);
        for j in 0..spec.blocks {
            let pre = format!("k{i}.b{j}");
            b.conv(&cur, &format!("{pre}.c1"), c, e);
            b.g.add_node(Node::new(OpKind::Relu, &[&format!("{pre}.c1")], &[&format!("{pre}.relu")]));
            b.conv(&format!("{pre}.relu"), &format!("{pre}.c2"), e, c);
            let sum = format!("{pre}.add");
            b.g.add_node(Node::new(OpKind::Add, &[&format!("{pre}.c2"), &cur], &[&sum]));
            cur = sum;
        }
        let head = format!("k{i}.head");
        b.conv(&cur, &head, c, 3 * s * s);
        let out = format!("k{i}.out");
        b.g.add_node(Node::new(OpKind::DepthToSpace, &[&head], &[&out]).with_attr("blocksize", s as i64));
        outs.push(out);
    }
    let refs: Vec<&str> = outs.iter().map(String::as_str).collect();
    b.g.add_node(Node::new(OpKind::Combine, &refs, &[ROUTING_OUTPUT]));
    b.g.add_output(ROUTING_OUTPUT);
    b.g
}
