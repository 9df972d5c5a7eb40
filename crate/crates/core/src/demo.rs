//! End-to-end desk benchmark: synthetic frames are split into patches, the
//! routing graph is analysed, fused and planned, and each patch size is run
//! both unfused in plain depth-first order and fused in planned order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{run_to_fixpoint, write_report, Bindings};
use crate::fusion::{apply_fusion, find_fusion_groups};
use crate::graph::{serialize_graph, toposort_dfs, Graph};
use crate::interp::{execute, TensorMap};
use crate::patch::{self, synth, Frame, PathSpec, SplitConfig};
use crate::planner::{plan, write_plan, MAX_EXHAUSTIVE};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct DemoError {
    pub stage: &'static str,
    pub message: String,
}

fn at<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> DemoError {
    move |e| DemoError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    pub frames: usize,
    pub frame_size: usize,
    pub split: SplitConfig,
    pub paths: Vec<PathSpec>,
    /// Input sizes of the patches run through the routing graph; the i-th
    /// size takes path i.
    pub patch_sizes: Vec<usize>,
    pub baseline_grid: usize,
    pub chunks: usize,
    pub max_exhaustive: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 0,
            frames: 10,
            frame_size: 512,
            split: SplitConfig::default(),
            paths: vec![PathSpec::default(); 3],
            patch_sizes: vec![128, 64, 32],
            baseline_grid: 32,
            chunks: 4,
            max_exhaustive: MAX_EXHAUSTIVE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub frames: usize,
    pub min_flat_fraction: f64,
    pub patches: usize,
    pub baseline_patches: usize,
    pub patch_ratio: f64,
    pub model_loads: usize,
    pub baseline_model_loads: usize,
    pub levels: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub peak_bytes: usize,
    pub allocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeComparison {
    pub size: usize,
    pub route: usize,
    pub output_dims: Vec<usize>,
    pub naive: RunStats,
    pub planned: RunStats,
    /// Planner estimate over the whole graph, every path included.
    pub planned_estimate_bytes: usize,
    pub arena_bytes: usize,
    pub peak_reduction: f64,
    pub allocation_reduction: f64,
    pub max_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub split: SplitSummary,
    pub graph_nodes: usize,
    pub fused_nodes: usize,
    pub fusion_groups: BTreeMap<String, usize>,
    pub sizes: Vec<SizeComparison>,
}

impl DemoSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`, with equal values scoring 0.
pub fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    match (a.as_f32(), b.as_f32()) {
        (Some(x), Some(y)) if a.dims() == b.dims() => x
            .iter()
            .zip(y)
            .map(|(&p, &q)| if p == q { 0.0 } else { ((p - q).abs() / p.abs().max(q.abs())) as f64 })
            .fold(0.0, f64::max),
        _ => f64::INFINITY,
    }
}

fn routing_inputs(f: &Frame, size: usize, route: usize) -> TensorMap {
    TensorMap::from([
        (patch::ROUTING_INPUT.to_string(), f.crop(0, 0, size, size).to_tensor()),
        (patch::ROUTING_SELECTOR.to_string(), Tensor::scalar_i64(route as i64)),
    ])
}

/// Runs `g` unfused in depth-first order and `fused` in its planned order on
/// one `size` x `size` patch routed to `route`.
pub fn compare_sizes(
    g: &Graph,
    fused: &Graph,
    f: &Frame,
    size: usize,
    route: usize,
    max_exhaustive: usize,
) -> Result<(SizeComparison, String), DemoError> {
    let inputs = routing_inputs(f, size, route);
    let naive_order = toposort_dfs(g).map_err(at("run"))?;
    let (out_a, trace_a) = execute(g, &inputs, Some(&naive_order)).map_err(at("run"))?;
    let a = run_to_fixpoint(fused, None);
    let bindings: Bindings = [("H".to_string(), size as i64), ("W".to_string(), size as i64)].into();
    let p = plan(fused, &a, &bindings, max_exhaustive).map_err(at("plan"))?;
    let (out_b, trace_b) = execute(fused, &inputs, Some(&p.order)).map_err(at("run"))?;
    let (x, y) = (&out_a[patch::ROUTING_OUTPUT], &out_b[patch::ROUTING_OUTPUT]);
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let cmp = SizeComparison {
        size,
        route,
        output_dims: y.dims().to_vec(),
        naive: RunStats {
            peak_bytes: trace_a.peak_bytes,
            allocations: trace_a.allocations,
        },
        planned: RunStats {
            peak_bytes: trace_b.peak_bytes,
            allocations: trace_b.allocations,
        },
        planned_estimate_bytes: p.peak_bytes,
        arena_bytes: p.memory.arena_bytes,
        peak_reduction: ratio(trace_a.peak_bytes, trace_b.peak_bytes),
        allocation_reduction: ratio(trace_a.allocations, trace_b.allocations),
        max_rel_diff: max_rel_diff(x, y),
    };
    Ok((cmp, write_plan(&p)))
}

/// Runs the whole pipeline and writes its artifacts under `out_dir`:
/// frames, manifest, overhead report, graphs, analysis, plans and
/// `summary.json`.
pub fn run_demo(cfg: &DemoConfig, out_dir: &Path) -> Result<DemoSummary, DemoError> {
    let write = |name: &str, text: &str| std::fs::write(out_dir.join(name), text).map_err(at("write"));
    let frame_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frame_dir).map_err(at("write"))?;

    let frames = synth::synth_frames(cfg.seed, cfg.frames, cfg.frame_size, cfg.frame_size);
    for (i, f) in frames.iter().enumerate() {
        f.save(&frame_dir.join(format!("frame{i:03}.png"))).map_err(at("frames"))?;
    }
    let entries = patch::split_frames(&frames, &cfg.split).map_err(at("split"))?;
    write("manifest.txt", &patch::write_manifest(&entries))?;
    let rep = patch::report(&entries, cfg.baseline_grid, cfg.chunks);
    write("report.json", &rep.to_json())?;

    let g = patch::build_routing_graph(&cfg.split, &cfg.paths, cfg.seed);
    write("routing.txt", &serialize_graph(&g))?;
    let a = run_to_fixpoint(&g, None);
    write("analysis.txt", &write_report(&a))?;
    let groups = find_fusion_groups(&g, &a);
    let fused = apply_fusion(&g, &groups);
    write("fused.txt", &serialize_graph(&fused))?;
    let mut fusion_groups = BTreeMap::new();
    for grp in &groups {
        *fusion_groups.entry(grp.kind.name().to_string()).or_default() += 1;
    }

    let mut sizes = Vec::new();
    for (route, &size) in cfg.patch_sizes.iter().enumerate() {
        let route = route.min(cfg.paths.len().max(1) - 1);
        let (cmp, plan_text) = compare_sizes(&g, &fused, &frames[0], size, route, cfg.max_exhaustive)?;
        write(&format!("plan_{size}.json"), &plan_text)?;
        sizes.push(cmp);
    }

    let summary = DemoSummary {
        seed: cfg.seed,
        split: SplitSummary {
            frames: frames.len(),
            min_flat_fraction: frames.iter().map(synth::flat_fraction).fold(1.0, f64::min),
            patches: rep.patches,
            baseline_patches: rep.baseline_patches,
            patch_ratio: rep.patch_ratio,
            model_loads: rep.model_loads,
            baseline_model_loads: rep.baseline_model_loads,
            levels: rep.levels,
        },
        graph_nodes: g.nodes.len(),
        fused_nodes: fused.nodes.len(),
        fusion_groups,
        sizes,
    };
    write("summary.json", &summary.to_json())?;
    Ok(summary)
}
