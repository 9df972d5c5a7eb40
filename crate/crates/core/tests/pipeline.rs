use dyshape::demo::{run_demo, DemoConfig};
use dyshape::interp::{execute, TensorMap};
use dyshape::patch::{self, synth, PathSpec, SplitConfig};
use dyshape::tensor::Tensor;

fn small() -> DemoConfig {
    DemoConfig {
        seed: 3,
        frames: 3,
        frame_size: 256,
        patch_sizes: vec![32, 16, 8],
        ..DemoConfig::default()
    }
}

#[test]
fn demo_is_deterministic_and_fusion_helps() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let s = run_demo(&small(), d1.path()).unwrap();
    run_demo(&small(), d2.path()).unwrap();
    for f in ["summary.json", "manifest.txt", "report.json", "routing.txt", "fused.txt", "analysis.txt", "plan_32.json"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(s.fusion_groups["AnchorPlusEpilogue"], 12);
    for c in &s.sizes {
        assert_eq!(c.output_dims, vec![1, 3, 2 * c.size, 2 * c.size]);
        assert!(c.max_rel_diff <= 1e-5);
        assert!(c.planned.peak_bytes < c.naive.peak_bytes);
        assert!(c.planned.allocations < c.naive.allocations);
        assert!(c.planned.peak_bytes <= c.planned_estimate_bytes);
    }
    assert_eq!(s.split.model_loads, 1);
    assert!(s.split.min_flat_fraction >= 0.5);
}

#[test]
fn every_manifest_patch_upscales_by_the_scale() {
    let cfg = SplitConfig::default();
    let paths = vec![PathSpec { blocks: 1, width: 4, expansion: 1 }; cfg.levels()];
    let g = patch::build_routing_graph(&cfg, &paths, 1);
    let frames = synth::synth_frames(5, 2, 256, 256);
    let entries = patch::split_frames(&frames, &cfg).unwrap();
    assert!(entries.iter().any(|e| e.level > 0));
    for e in &entries {
        let crop = frames[e.frame].crop(e.x, e.y, e.w, e.h);
        let inputs = TensorMap::from([
            (patch::ROUTING_INPUT.to_string(), crop.to_tensor()),
            (patch::ROUTING_SELECTOR.to_string(), Tensor::scalar_i64(e.route as i64)),
        ]);
        let (out, _) = execute(&g, &inputs, None).unwrap();
        assert_eq!(out[patch::ROUTING_OUTPUT].dims(), &[1, 3, 2 * e.h, 2 * e.w]);
    }
}
