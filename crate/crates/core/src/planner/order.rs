//! Execution orders that minimize peak activation memory.
//!
//! A tensor is live from the step that produces it through the step of its
//! last consumer. Pinned tensors (graph outputs, values read after the
//! scheduled region) stay live to the end. Tensors not produced inside the
//! problem are resident and not counted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Default node limit for exhaustive search.
pub const MAX_EXHAUSTIVE: usize = 10;

/// Hard limit imposed by the bitmask state.
const MASK_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    Exhaustive,
    Heuristic,
    DeferredDynamic,
}

/// Nodes and tensors of one scheduling problem, by dense index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderProblem {
    /// Tensor indices written by each node.
    pub produces: Vec<Vec<usize>>,
    /// Tensor indices read by each node, without repeats.
    pub consumes: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub pinned: Vec<bool>,
}

impl OrderProblem {
    pub fn node_count(&self) -> usize {
        self.produces.len()
    }

    fn producer(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.sizes.len()];
        for (n, outs) in self.produces.iter().enumerate() {
            for &t in outs {
                p[t] = Some(n);
            }
        }
        p
    }

    /// Predecessor nodes of every node.
    pub fn preds(&self) -> Vec<Vec<usize>> {
        let producer = self.producer();
        self.consumes
            .iter()
            .map(|ins| {
                let mut v: Vec<usize> = ins.iter().filter_map(|&t| producer[t]).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect()
    }

    fn use_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.sizes.len()];
        for ins in &self.consumes {
            for &t in ins {
                c[t] += 1;
            }
        }
        c
    }

    fn counted(&self) -> Vec<bool> {
        self.producer().iter().map(Option::is_some).collect()
    }

    /// Bytes live during each step of `order` (after the node's outputs are
    /// allocated, before its dead inputs are released).
    pub fn step_live(&self, order: &[usize]) -> Vec<usize> {
        let mut remaining = self.use_counts();
        let counted = self.counted();
        let mut live = 0usize;
        let mut out = Vec::with_capacity(order.len());
        for &n in order {
            live += self.produces[n].iter().map(|&t| self.sizes[t]).sum::<usize>();
            out.push(live);
            for &t in &self.produces[n] {
                if remaining[t] == 0 && !self.pinned[t] {
                    live -= self.sizes[t];
                }
            }
            for &t in &self.consumes[n] {
                remaining[t] -= 1;
                if remaining[t] == 0 && counted[t] && !self.pinned[t] {
                    live -= self.sizes[t];
                }
            }
        }
        out
    }

    pub fn peak(&self, order: &[usize]) -> usize {
        self.step_live(order).into_iter().max().unwrap_or(0)
    }

    pub fn is_topological(&self, order: &[usize]) -> bool {
        let n = self.node_count();
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || pos[v] != usize::MAX {
                return false;
            }
            pos[v] = i;
        }
        order.len() == n && self.preds().iter().enumerate().all(|(v, ps)| ps.iter().all(|&p| pos[p] < pos[v]))
    }
}

/// Incremental state shared by both planners.
struct Sim<'a> {
    p: &'a OrderProblem,
    preds: Vec<Vec<usize>>,
    counted: Vec<bool>,
    uses: Vec<usize>,
}

impl<'a> Sim<'a> {
    fn new(p: &'a OrderProblem) -> Sim<'a> {
        Sim {
            p,
            preds: p.preds(),
            counted: p.counted(),
            uses: p.use_counts(),
        }
    }

    fn alloc(&self, n: usize) -> usize {
        self.p.produces[n].iter().map(|&t| self.p.sizes[t]).sum()
    }

    /// Bytes released after running `n`, given the per-tensor remaining use
    /// counts before it runs.
    fn freed(&self, n: usize, remaining: &[usize]) -> usize {
        let p = self.p;
        let mut f = 0;
        for &t in &p.produces[n] {
            if remaining[t] == 0 && !p.pinned[t] {
                f += p.sizes[t];
            }
        }
        for &t in &p.consumes[n] {
            if remaining[t] == 1 && self.counted[t] && !p.pinned[t] {
                f += p.sizes[t];
            }
        }
        f
    }

    fn ready(&self, done: &[bool], n: usize) -> bool {
        !done[n] && self.preds[n].iter().all(|&q| done[q])
    }
}

/// Greedy order: at each step the ready node with the lowest resulting
/// peak, then the most bytes freed, then the lowest index.
pub fn plan_heuristic(p: &OrderProblem) -> (Vec<usize>, usize) {
    let sim = Sim::new(p);
    let n = p.node_count();
    let mut done = vec![false; n];
    let mut remaining = sim.uses.clone();
    let (mut live, mut peak) = (0usize, 0usize);
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let best = (0..n)
            .filter(|&v| sim.ready(&done, v))
            .min_by_key(|&v| {
                let step_peak = peak.max(live + sim.alloc(v));
                (step_peak, std::cmp::Reverse(sim.freed(v, &remaining)), v)
            })
            .expect("dependency graph is acyclic");
        let a = sim.alloc(best);
        let f = sim.freed(best, &remaining);
        peak = peak.max(live + a);
        live = live + a - f;
        for &t in &p.consumes[best] {
            remaining[t] -= 1;
        }
        done[best] = true;
        order.push(best);
    }
    (order, peak)
}

/// Branch and bound over all topological orders; the result has the
/// minimum possible peak.
pub fn plan_exhaustive(p: &OrderProblem) -> (Vec<usize>, usize) {
    let n = p.node_count();
    assert!(n <= MASK_BITS, "exhaustive planning supports at most {MASK_BITS} nodes");
    let sim = Sim::new(p);
    // Start from the heuristic so pruning is effective immediately.
    let (h_order, h_peak) = plan_heuristic(p);
    let mut search = Search {
        sim: &sim,
        n,
        best: h_peak,
        best_order: h_order,
        seen: HashMap::new(),
        done: vec![false; n],
        remaining: sim.uses.clone(),
        order: Vec::with_capacity(n),
    };
    search.dfs(0, 0, 0);
    (search.best_order, search.best)
}

struct Search<'a, 'p> {
    sim: &'a Sim<'p>,
    n: usize,
    best: usize,
    best_order: Vec<usize>,
    /// Lowest peak seen on arrival at each scheduled set. The live bytes
    /// depend only on the set, so a later arrival with no better peak cannot
    /// lead anywhere better.
    seen: HashMap<u64, usize>,
    done: Vec<bool>,
    remaining: Vec<usize>,
    order: Vec<usize>,
}

impl Search<'_, '_> {
    fn dfs(&mut self, mask: u64, live: usize, peak: usize) {
        if self.order.len() == self.n {
            if peak < self.best || self.best_order.len() != self.n {
                self.best = peak;
                self.best_order = self.order.clone();
            }
            return;
        }
        match self.seen.get(&mask) {
            Some(&p) if p <= peak => return,
            _ => {
                self.seen.insert(mask, peak);
            }
        }
        for v in 0..self.n {
            if !self.sim.ready(&self.done, v) {
                continue;
            }
            let a = self.sim.alloc(v);
            let step_peak = peak.max(live + a);
            // Ties cannot improve on the incumbent.
            if step_peak >= self.best {
                continue;
            }
            let f = self.sim.freed(v, &self.remaining);
            for &t in &self.sim.p.consumes[v] {
                self.remaining[t] -= 1;
            }
            self.done[v] = true;
            self.order.push(v);
            self.dfs(mask | 1 << v, live + a - f, step_peak);
            self.order.pop();
            self.done[v] = false;
            for &t in &self.sim.p.consumes[v] {
                self.remaining[t] += 1;
            }
        }
    }
}

/// Exhaustive search up to `max_exhaustive` nodes, heuristic above.
pub fn plan_order(p: &OrderProblem, max_exhaustive: usize) -> (Vec<usize>, usize, PlanMode) {
    if p.node_count() <= max_exhaustive.min(MASK_BITS) {
        let (o, peak) = plan_exhaustive(p);
        (o, peak, PlanMode::Exhaustive)
    } else {
        let (o, peak) = plan_heuristic(p);
        (o, peak, PlanMode::Heuristic)
    }
}
