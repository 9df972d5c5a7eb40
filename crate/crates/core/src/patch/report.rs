use std::collections::BTreeMap;

use serde::Serialize;

use super::PatchEntry;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub frames: usize,
    pub patches: usize,
    pub baseline_grid: usize,
    /// Patches a uniform grid of `baseline_grid` pixels would need.
    pub baseline_patches: usize,
    /// `baseline_patches / patches`.
    pub patch_ratio: f64,
    /// Models loaded by the single dynamic graph.
    pub model_loads: usize,
    /// Models loaded by a baseline with one model per content chunk.
    pub baseline_model_loads: usize,
    pub switching_saving: f64,
    /// Patch count per split level.
    pub levels: BTreeMap<usize, usize>,
    /// Patch count per `WxH` shape.
    pub shapes: BTreeMap<String, usize>,
}

pub fn report(entries: &[PatchEntry], baseline_grid: usize, chunks: usize) -> OverheadReport {
    let mut extent: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut levels = BTreeMap::new();
    let mut shapes = BTreeMap::new();
    for e in entries {
        let ext = extent.entry(e.frame).or_default();
        ext.0 = ext.0.max(e.x + e.w);
        ext.1 = ext.1.max(e.y + e.h);
        *levels.entry(e.level).or_default() += 1;
        *shapes.entry(format!("{}x{}", e.w, e.h)).or_default() += 1;
    }
    let g = baseline_grid.max(1);
    let baseline_patches: usize = extent.values().map(|&(w, h)| w.div_ceil(g) * h.div_ceil(g)).sum();
    let patches = entries.len();
    OverheadReport {
        frames: extent.len(),
        patches,
        baseline_grid,
        baseline_patches,
        patch_ratio: if patches == 0 { 0.0 } else { baseline_patches as f64 / patches as f64 },
        model_loads: 1,
        baseline_model_loads: chunks,
        switching_saving: chunks as f64,
        levels,
        shapes,
    }
}

impl OverheadReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
