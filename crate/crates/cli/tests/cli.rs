use std::path::Path;
use std::process::{Command, Output};

use dyshape::patch::{synth, Frame};
use dyshape::tensor::{read_tensor_file, write_tensor_file, Tensor};

fn dyshape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyshape"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dyshape(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn graph_chain_from_build_to_run() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["build-graph", "--width", "4", "--blocks", "1,2,1", "--expansion", "2", "--seed", "5", "--out", "g.txt"]);
    ok(p, &["analyze", "g.txt", "--bind", "H=16", "--bind", "W=16", "--out", "a.txt"]);
    let report = std::fs::read_to_string(p.join("a.txt")).unwrap();
    assert!(report.contains("\"diagnostics\": []"));
    ok(p, &["analyze", "g.txt", "--out", "sym.txt"]);
    let fused = ok(p, &["fuse", "g.txt", "--analysis", "sym.txt", "--out", "f.txt"]);
    assert!(fused.starts_with("8 fusion groups"), "{fused}");
    ok(p, &["analyze", "f.txt", "--out", "fa.txt"]);
    ok(p, &["plan", "f.txt", "--analysis", "fa.txt", "--bind", "H=16", "--bind", "W=16", "--out", "plan.json"]);

    let lr = Frame::filled(16, 16, [10, 200, 30]).to_tensor();
    write_tensor_file(p.join("lr.dyt"), &lr).unwrap();
    write_tensor_file(p.join("route.dyt"), &Tensor::scalar_i64(1)).unwrap();
    for (graph, plan) in [("g.txt", None), ("f.txt", Some("plan.json"))] {
        let mut args = vec!["run", graph, "--input", "lr=lr.dyt", "--input", "route=route.dyt"];
        args.extend(["--out-dir", "out", "--trace", "trace.json"]);
        if let Some(plan) = plan {
            args.extend(["--plan", plan]);
        }
        ok(p, &args);
        let sr = read_tensor_file(p.join("out/sr.dyt")).unwrap();
        assert_eq!(sr.dims(), &[1, 3, 32, 32]);
        let trace: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("trace.json")).unwrap()).unwrap();
        assert_eq!(trace["decisions"][0]["selector"], 1);
    }
}

#[test]
fn usage_and_validation_errors() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["build-graph", "--width", "4", "--out", "g.txt"]);
    assert_eq!(dyshape(p, &["plan", "g.txt"]).status.code(), Some(2));
    assert_eq!(dyshape(p, &["analyze", "g.txt", "--bind", "H", "--out", "a.txt"]).status.code(), Some(2));
    assert_eq!(dyshape(p, &["frobnicate"]).status.code(), Some(2));

    std::fs::write(p.join("bad.txt"), "{\"name\": \"g\", \"inputs\": [").unwrap();
    let out = dyshape(p, &["analyze", "bad.txt", "--out", "a.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse"));

    let text = std::fs::read_to_string(p.join("g.txt")).unwrap().replace("\"k0.entry\"", "\"lr\"");
    std::fs::write(p.join("ssa.txt"), text).unwrap();
    let out = dyshape(p, &["analyze", "ssa.txt", "--out", "a.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("validate"));

    let out = dyshape(p, &["build-graph", "--thresholds", "30,40", "--out", "x.txt"]);
    assert_eq!(out.status.code(), Some(1));
    let out = dyshape(p, &["build-graph", "--blocks", "1,2", "--out", "x.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn split_and_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::create_dir(p.join("frames")).unwrap();
    for (i, f) in synth::synth_frames(9, 2, 256, 256).iter().enumerate() {
        let ext = if i == 0 { "png" } else { "ppm" };
        f.save(&p.join(format!("frames/f{i}.{ext}"))).unwrap();
    }
    std::fs::write(p.join("frames/notes.txt"), "ignored").unwrap();
    let line = ok(p, &["split", "frames", "--scale", "2", "--base-patch", "128", "--thresholds", "40,30", "--manifest", "m.txt"]);
    assert!(line.starts_with("2 frames"), "{line}");
    let json = ok(p, &["report", "m.txt", "--baseline-grid", "32", "--chunks", "4"]);
    let r: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(r["frames"], 2);
    assert_eq!(r["baseline_patches"], 128);
    assert_eq!(r["model_loads"], 1);
    assert_eq!(r["baseline_model_loads"], 4);

    let again = dyshape(p, &["split", "frames", "--manifest", "m2.txt"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(p.join("m.txt")).unwrap(), std::fs::read(p.join("m2.txt")).unwrap());
    std::fs::write(p.join("empty.txt"), "# nothing\n").unwrap();
    assert_eq!(dyshape(p, &["report", "empty.txt"]).status.code(), Some(1));
}
