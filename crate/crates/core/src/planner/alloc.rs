//! Static offset assignment for activation tensors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    pub tensor: String,
    /// First and last step (inclusive) at which the tensor is live.
    pub first: usize,
    pub last: usize,
    /// Bytes, or `None` when only known at run time.
    pub size: Option<usize>,
}

impl Lifetime {
    pub fn overlaps(&self, other: &Lifetime) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Placement {
    Static { offset: usize, size: usize },
    RuntimePool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub placements: BTreeMap<String, Placement>,
    pub arena_bytes: usize,
}

/// Largest tensors first, each at the lowest offset that does not collide
/// with an already placed tensor whose lifetime overlaps.
pub fn allocate(lifetimes: &[Lifetime]) -> MemoryPlan {
    let mut idx: Vec<usize> = (0..lifetimes.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&lifetimes[a], &lifetimes[b]);
        y.size
            .cmp(&x.size)
            .then(x.first.cmp(&y.first))
            .then(x.tensor.cmp(&y.tensor))
    });
    let mut plan = MemoryPlan::default();
    let mut placed: Vec<(usize, usize, usize)> = Vec::new(); // (lifetime index, offset, size)
    for i in idx {
        let lt = &lifetimes[i];
        let Some(size) = lt.size else {
            plan.placements.insert(lt.tensor.clone(), Placement::RuntimePool);
            continue;
        };
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&(j, _, s)| s > 0 && lifetimes[j].overlaps(lt))
            .map(|&(_, o, s)| (o, o + s))
            .collect();
        busy.sort_unstable();
        let mut offset = 0;
        if size > 0 {
            for (start, end) in busy {
                if offset + size <= start {
                    break;
                }
                offset = offset.max(end);
            }
        }
        placed.push((i, offset, size));
        plan.arena_bytes = plan.arena_bytes.max(offset + size);
        plan.placements.insert(lt.tensor.clone(), Placement::Static { offset, size });
    }
    plan
}

/// Largest total of static sizes live at any one step.
pub fn max_live(lifetimes: &[Lifetime]) -> usize {
    let steps = lifetimes.iter().map(|l| l.last + 1).max().unwrap_or(0);
    let mut per_step = vec![0usize; steps];
    for l in lifetimes {
        if let Some(s) = l.size {
            for x in &mut per_step[l.first..=l.last] {
                *x += s;
            }
        }
    }
    per_step.into_iter().max().unwrap_or(0)
}

/// Pairs of lifetime-overlapping static tensors that share a byte.
pub fn overlap_violations(lifetimes: &[Lifetime], plan: &MemoryPlan) -> Vec<(String, String)> {
    let range = |l: &Lifetime| match plan.placements.get(&l.tensor) {
        Some(Placement::Static { offset, size }) if *size > 0 => Some((*offset, offset + size)),
        _ => None,
    };
    let mut out = Vec::new();
    for (i, a) in lifetimes.iter().enumerate() {
        for b in &lifetimes[i + 1..] {
            if let (Some(ra), Some(rb)) = (range(a), range(b)) {
                if a.overlaps(b) && ra.0 < rb.1 && rb.0 < ra.1 {
                    out.push((a.tensor.clone(), b.tensor.clone()));
                }
            }
        }
    }
    out
}
