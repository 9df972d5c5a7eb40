use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyshape::analysis::{parse_report, run_to_fixpoint, write_report, Bindings};
use dyshape::demo::{run_demo, DemoConfig};
use dyshape::fusion::{apply_fusion, find_fusion_groups};
use dyshape::graph::{parse_graph_in, serialize_graph, validate, Graph};
use dyshape::interp::{execute, TensorMap};
use dyshape::patch::{self, Frame, PathSpec, SplitConfig};
use dyshape::planner::{parse_plan, plan, write_plan, MAX_EXHAUSTIVE};
use dyshape::tensor::{read_tensor_file, write_tensor_file};

#[derive(Parser)]
#[command(name = "dyshape", version, about = "Shape analysis, fusion and memory planning for dynamic DNN graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer symbolic shapes and values for every tensor.
    Analyze {
        graph: PathBuf,
        #[command(flatten)]
        bind: BindArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group fusible operators into FusedRegion nodes.
    Fuse {
        graph: PathBuf,
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Order nodes and assign arena offsets.
    Plan {
        graph: PathBuf,
        #[arg(long)]
        analysis: PathBuf,
        #[command(flatten)]
        bind: BindArgs,
        #[arg(long, default_value_t = MAX_EXHAUSTIVE)]
        max_exhaustive: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a graph on tensor files.
    Run {
        graph: PathBuf,
        /// Graph input as `id=<file>`.
        #[arg(long = "input", value_parser = parse_pair)]
        inputs: Vec<(String, String)>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Split frames into content-aware patches.
    Split {
        dir: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Summarize a manifest against a uniform grid baseline.
    Report {
        manifest: PathBuf,
        #[arg(long, default_value_t = 32)]
        baseline_grid: usize,
        /// Models a chunked multi-model baseline would load.
        #[arg(long, default_value_t = 4)]
        chunks: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the multi-path routing graph, one path per split level.
    BuildGraph {
        #[command(flatten)]
        split: SplitArgs,
        /// Residual blocks per path; one value applies to every path.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        blocks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "16")]
        width: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        expansion: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline on synthetic frames.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value_t = 512)]
        frame_size: usize,
    },
}

#[derive(Args)]
struct BindArgs {
    /// Concrete value for a symbolic dimension, `SYM=INT`.
    #[arg(long = "bind", value_parser = parse_binding)]
    bind: Vec<(String, i64)>,
}

impl BindArgs {
    fn bindings(&self) -> Bindings {
        self.bind.iter().cloned().collect()
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 128)]
    base_patch: usize,
    #[arg(long, value_delimiter = ',', default_value = "40,30")]
    thresholds: Vec<f64>,
}

impl SplitArgs {
    fn config(&self) -> SplitConfig {
        SplitConfig {
            scale: self.scale,
            base_patch: self.base_patch,
            thresholds: self.thresholds.clone(),
        }
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

fn parse_binding(s: &str) -> Result<(String, i64), String> {
    let (k, v) = parse_pair(s)?;
    let v = v.parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k, v))
}

/// A failed stage; exits with status 1.
struct Failure {
    stage: &'static str,
    message: String,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            stage,
            message: e.to_string(),
        })
    }
}

fn fail<T>(stage: &'static str, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure {
        stage,
        message: message.into(),
    })
}

fn read(path: &Path, stage: &'static str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write(path: &Path, text: &str, stage: &'static str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_graph(path: &Path) -> Result<Graph, Failure> {
    let text = read(path, "parse")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let g = parse_graph_in(&text, base).stage("parse")?;
    let violations = validate(&g);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return fail("validate", lines.join("\n"));
    }
    Ok(g)
}

/// File name for a tensor id.
fn tensor_file(id: &str) -> String {
    let safe: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    format!("{safe}.dyt")
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Analyze { graph, bind, out } => {
            let g = load_graph(&graph)?;
            let bindings = bind.bindings();
            let a = run_to_fixpoint(&g, (!bindings.is_empty()).then_some(&bindings));
            write(&out, &write_report(&a), "analyze")?;
            if !a.diagnostics.is_empty() {
                let lines: Vec<String> = a.diagnostics.iter().map(|d| format!("{}: {}", d.node, d.message)).collect();
                return fail("analyze", lines.join("\n"));
            }
        }
        Command::Fuse { graph, analysis, out } => {
            let g = load_graph(&graph)?;
            let a = parse_report(&read(&analysis, "fuse")?).stage("fuse")?;
            let groups = find_fusion_groups(&g, &a);
            let fused = apply_fusion(&g, &groups);
            write(&out, &serialize_graph(&fused), "fuse")?;
            println!("{} fusion groups, {} -> {} nodes", groups.len(), g.nodes.len(), fused.nodes.len());
        }
        Command::Plan {
            graph,
            analysis,
            bind,
            max_exhaustive,
            out,
        } => {
            let g = load_graph(&graph)?;
            let a = parse_report(&read(&analysis, "plan")?).stage("plan")?;
            let p = plan(&g, &a, &bind.bindings(), max_exhaustive).stage("plan")?;
            write(&out, &write_plan(&p), "plan")?;
            println!("peak {} bytes, arena {} bytes", p.peak_bytes, p.memory.arena_bytes);
        }
        Command::Run {
            graph,
            inputs,
            plan,
            out_dir,
            trace,
        } => {
            let g = load_graph(&graph)?;
            let mut feed = TensorMap::new();
            for (id, file) in inputs {
                feed.insert(id, read_tensor_file(&file).map_err(|e| Failure {
                    stage: "run",
                    message: format!("{file}: {e}"),
                })?);
            }
            let order = match plan {
                Some(p) => Some(parse_plan(&read(&p, "run")?).stage("run")?.order),
                None => None,
            };
            let (outs, tr) = execute(&g, &feed, order.as_deref()).stage("run")?;
            fs::create_dir_all(&out_dir).stage("run")?;
            for (id, t) in &outs {
                write_tensor_file(out_dir.join(tensor_file(id)), t).stage("run")?;
            }
            let mut text = serde_json::to_string_pretty(&tr).stage("run")?;
            text.push('\n');
            write(&trace, &text, "run")?;
        }
        Command::Split { dir, split, manifest } => {
            let cfg = split.config();
            cfg.validate().stage("split")?;
            let paths = patch::frame_paths(&dir).stage("split")?;
            if paths.is_empty() {
                return fail("split", format!("no PNG or PPM frames in {}", dir.display()));
            }
            let frames = paths.iter().map(|p| Frame::load(p)).collect::<Result<Vec<_>, _>>().stage("split")?;
            let entries = patch::split_frames(&frames, &cfg).stage("split")?;
            write(&manifest, &patch::write_manifest(&entries), "split")?;
            println!("{} frames, {} patches", frames.len(), entries.len());
        }
        Command::Report {
            manifest,
            baseline_grid,
            chunks,
            out,
        } => {
            let entries = patch::parse_manifest(&read(&manifest, "report")?).stage("report")?;
            if entries.is_empty() {
                return fail("report", "manifest has no entries");
            }
            let text = patch::report(&entries, baseline_grid, chunks).to_json();
            match out {
                Some(p) => write(&p, &text, "report")?,
                None => print!("{text}"),
            }
        }
        Command::BuildGraph {
            split,
            blocks,
            width,
            expansion,
            seed,
            out,
        } => {
            let cfg = split.config();
            cfg.validate().stage("build-graph")?;
            let k = cfg.levels();
            let pick = |v: &[usize], name: &str| -> Result<Vec<usize>, Failure> {
                match v.len() {
                    1 => Ok(vec![v[0]; k]),
                    n if n == k => Ok(v.to_vec()),
                    n => fail("build-graph", format!("--{name} has {n} values for {k} paths")),
                }
            };
            let (blocks, width) = (pick(&blocks, "blocks")?, pick(&width, "width")?);
            let paths: Vec<PathSpec> = blocks
                .iter()
                .zip(&width)
                .map(|(&blocks, &width)| PathSpec { blocks, width, expansion })
                .collect();
            let g = patch::build_routing_graph(&cfg, &paths, seed);
            write(&out, &serialize_graph(&g), "build-graph")?;
        }
        Command::Demo {
            seed,
            out_dir,
            frames,
            frame_size,
        } => {
            let cfg = DemoConfig {
                seed,
                frames,
                frame_size,
                ..DemoConfig::default()
            };
            if let Some(&p) = cfg.patch_sizes.iter().find(|&&p| p > frame_size) {
                return fail("demo", format!("frame size {frame_size} is below the {p}-pixel benchmark patch"));
            }
            fs::create_dir_all(&out_dir).stage("demo")?;
            let s = run_demo(&cfg, &out_dir).map_err(|e| Failure {
                stage: e.stage,
                message: e.message,
            })?;
            println!(
                "{} patches vs {} baseline, {} fusion groups",
                s.split.patches,
                s.split.baseline_patches,
                s.fusion_groups.values().sum::<usize>()
            );
            for c in &s.sizes {
                println!(
                    "size {}: peak {} -> {} bytes, allocations {} -> {}",
                    c.size, c.naive.peak_bytes, c.planned.peak_bytes, c.naive.allocations, c.planned.allocations
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dyshape: {}: {}", f.stage, f.message);
            ExitCode::from(1)
        }
    }
}
