//! `nsr`: scene generation, training, mesh extraction, evaluation and warp
//! diagnostics.

mod check_warp;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use nsr_core::field::checkpoint::load_checkpoint;
use nsr_core::mesh::{
    chamfer_distance, marching_cubes, read_ply, sample_mesh, write_ply, BallClipped, Grid, MeshError, MIN_RESOLUTION,
};
use nsr_core::scene::{generate_scene, load_scene, read_points, GenerateConfig, ImageFormat, ShapeSpec};
use nsr_core::trainer::{RunOutcome, TrainConfig, Trainer};

use crate::check_warp::{check_warp, WarpCheckConfig};
use crate::config::ConfigFile;
use crate::manifest::RunManifest;

const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "nsr", version, about = "Neural surface reconstruction with feature-level consistency")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "NSR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic multi-view scene with consistent feature maps.
    GenScene(GenSceneArgs),
    /// Optimise a field against a scene.
    Train(TrainArgs),
    /// Extract the zero level set of a checkpoint as a PLY mesh.
    Mesh(MeshArgs),
    /// Chamfer distance between a mesh and ground-truth points.
    Eval(EvalArgs),
    /// Verify the homography warp and feature consistency on ground truth.
    CheckWarp(CheckWarpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Sphere,
    Box,
    Torus,
    Union,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Png,
    Raw,
}

#[derive(Debug, Args)]
struct GenSceneArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 12)]
    views: usize,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64", value_parser = parse_res)]
    res: (u32, u32),
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_feature_scale)]
    feature_scale: u32,
    /// Standard deviation of per-view feature noise.
    #[arg(long, default_value_t = 0.0)]
    feature_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "png")]
    image_format: FormatArg,
    /// Views whose features are replaced by an unrelated field.
    #[arg(long, value_delimiter = ',')]
    corrupt_views: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// none, pixel-sim, patch-sim, patch-ncc or patch-ssim.
    #[arg(long, value_parser = ["none", "pixel-sim", "patch-sim", "patch-ncc", "patch-ssim"])]
    loss: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Patch side length [default: 11].
    #[arg(long)]
    patch: Option<usize>,
    /// Source views kept from the candidates [default: 4].
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rays: Option<usize>,
    /// desk or paper [default: desk].
    #[arg(long)]
    preset: Option<String>,
    /// File of `key = value` settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(MIN_RESOLUTION as i64..))]
    res: u32,
    /// The field is intersected with a ball of this radius before meshing.
    #[arg(long, default_value_t = 1.0)]
    clip_radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// PLY mesh, or a PLY/XYZ point set.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Points drawn from each mesh surface.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene label of the report row [default: directory of --gt].
    #[arg(long)]
    scene: Option<String>,
    /// Loss label of the report row [default: from the training manifest].
    #[arg(long)]
    loss: Option<String>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckWarpArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 11)]
    patch: usize,
    /// Report threshold breaches without failing.
    #[arg(long)]
    lenient: bool,
}

fn parse_res(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn parse_feature_scale(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (1 | 2 | 4 | 8)) => Ok(v),
        _ => Err("expected one of 1, 2, 4, 8".into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::GenScene(a) => gen_scene(a, cli.threads),
        Command::Train(a) => train(a, cli.threads),
        Command::Mesh(a) => mesh(a),
        Command::Eval(a) => eval(a),
        Command::CheckWarp(a) => check_warp_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn gen_scene(a: GenSceneArgs, threads: Option<usize>) -> Result<(), String> {
    let name = match a.shape {
        ShapeArg::Sphere => "sphere",
        ShapeArg::Box => "box",
        ShapeArg::Torus => "torus",
        ShapeArg::Union => "union",
    };
    let cfg = GenerateConfig {
        shape: ShapeSpec::preset(name).expect("known preset"),
        n_views: a.views,
        width: a.res.0,
        height: a.res.1,
        channels: a.channels,
        feature_scale: a.feature_scale,
        feature_noise: a.feature_noise,
        seed: a.seed,
        image_format: match a.image_format {
            FormatArg::Png => ImageFormat::Png,
            FormatArg::Raw => ImageFormat::Raw,
        },
        corrupt_views: a.corrupt_views,
        ..Default::default()
    };
    let mut m = RunManifest::new("gen-scene", Some(a.seed), serde_json::json!({ "scene": cfg, "threads": threads }));
    m.begin("generate");
    generate_scene(&cfg, &a.out).map_err(|e| e.to_string())?;
    m.output("scene", &a.out.join("scene.json"));
    m.output("gt_points", &a.out.join("gt_points.xyz"));
    m.write(&a.out.join("manifest.json"))?;
    println!("wrote {} views to {}", cfg.n_views, a.out.display());
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve_train_config(a: &TrainArgs) -> Result<(TrainConfig, String), String> {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let preset = a.preset.as_deref().or(file.get("preset")).unwrap_or("desk");
    let mut cfg = config::preset(preset)?;
    for (k, v) in &file.entries {
        if k != "loss" {
            config::apply(&mut cfg, k, v)?;
        }
    }
    let flags = [
        ("steps", a.steps.map(|v| v.to_string())),
        ("patch", a.patch.map(|v| v.to_string())),
        ("topk", a.topk.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("rays", a.rays.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            config::apply(&mut cfg, k, &v)?;
        }
    }
    let loss = a.loss.as_deref().or(file.get("loss")).unwrap_or("patch-ncc");
    config::apply(&mut cfg, "loss", loss)?;
    // short runs keep a proportional warmup
    if file.get("warmup_steps").is_none() && cfg.warmup_steps > cfg.steps {
        cfg.warmup_steps = cfg.steps / 30;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((cfg, loss.to_string()))
}

fn train(a: TrainArgs, threads: Option<usize>) -> Result<(), String> {
    let (cfg, loss) = resolve_train_config(&a)?;
    let mut m = RunManifest::new(
        "train",
        Some(cfg.seed),
        serde_json::json!({ "train": cfg, "loss": loss, "scene": a.scene, "threads": threads }),
    );
    m.begin("load_scene");
    let scene = load_scene(&a.scene).map_err(|e| e.to_string())?;
    m.begin("train");
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    // a second handler cannot be installed; training still works without it
    let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
    let mut trainer = Trainer::new(&scene, cfg).map_err(|e| e.to_string())?;
    let report_every = (cfg.steps / 20).max(1);
    let outcome = trainer
        .run(&a.out, Some(&stop), |r| {
            if r.step % report_every == 0 || r.step + 1 == cfg.steps {
                eprintln!(
                    "step {:>6}/{}  L {:.5}  color {:.5}  eik {:.5}  feat {:.5}  lr {:.2e}",
                    r.step, cfg.steps, r.ema_total, r.ema_color, r.ema_eikonal, r.ema_feature, r.lr
                );
            }
        })
        .map_err(|e| e.to_string())?;
    m.output("metrics", &a.out.join("metrics.csv"));
    m.output("checkpoint", &a.out.join("checkpoint.nsrw"));
    if cfg.checkpoint_every > 0 {
        for s in (cfg.checkpoint_every..trainer.step_index()).step_by(cfg.checkpoint_every) {
            let name = format!("checkpoint_{s:06}.nsrw");
            m.output(&name, &a.out.join(&name));
        }
    }
    m.write(&a.out.join("manifest.json"))?;
    match outcome {
        RunOutcome::Finished => Ok(()),
        RunOutcome::Interrupted { at_step } => {
            Err(format!("interrupted at step {at_step}; checkpoint flushed to {}", a.out.display()))
        }
    }
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn mesh(a: MeshArgs) -> Result<(), String> {
    let mut m = RunManifest::new(
        "mesh",
        None,
        serde_json::json!({ "ckpt": a.ckpt, "res": a.res, "clip_radius": a.clip_radius }),
    );
    m.begin("load");
    let params = load_checkpoint(&a.ckpt).map_err(|e| format!("{}: {e}", a.ckpt.display()))?;
    m.begin("extract");
    let field = BallClipped { field: &params, radius: a.clip_radius };
    let mesh = match marching_cubes(&field, &Grid::unit(a.res as usize)) {
        Err(MeshError::EmptySurface) => {
            return Err(format!(
                "{}: the field has no zero crossing inside [-1, 1]^3 at resolution {}; \
                 the network may have collapsed to a constant sign",
                a.ckpt.display(),
                a.res
            ))
        }
        other => other.map_err(|e| e.to_string())?,
    };
    m.begin("write");
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    write_ply(&mesh, &a.out).map_err(|e| e.to_string())?;
    m.output("mesh", &a.out);
    m.write(&sibling_manifest(&a.out))?;
    println!("{}: {} vertices, {} triangles", a.out.display(), mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}

/// Surface samples of a meshed PLY, the vertices of a face-less PLY, or the
/// points of any other file.
fn load_point_set(path: &Path, samples: usize, seed: u64) -> Result<Vec<Vector3<f64>>, String> {
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let points = if is_ply {
        let mesh = read_ply(path).map_err(|e| e.to_string())?;
        if mesh.triangles.is_empty() {
            mesh.vertices
        } else {
            sample_mesh(&mesh, samples, seed).map_err(|e| format!("{}: {e}", path.display()))?
        }
    } else {
        read_points(path).map_err(|e| e.to_string())?
    };
    if points.is_empty() {
        return Err(format!("{}: no points", path.display()));
    }
    Ok(points)
}

fn loss_label(mesh: &Path) -> Option<String> {
    let dir = mesh.parent()?;
    let text = std::fs::read_to_string(dir.join("manifest.json")).ok()?;
    let json: serde_json::Value = serde_json::from_str(&text).ok()?;
    json["config"]["loss"].as_str().map(String::from)
}

fn eval(a: EvalArgs) -> Result<(), String> {
    let mut m = RunManifest::new("eval", Some(a.seed), serde_json::json!({ "mesh": a.mesh, "gt": a.gt, "samples": a.samples }));
    m.begin("load");
    let pred = load_point_set(&a.mesh, a.samples, a.seed)?;
    let gt = load_point_set(&a.gt, a.samples, a.seed ^ 1)?;
    m.begin("chamfer");
    let cd = chamfer_distance(&pred, &gt).map_err(|e| e.to_string())?;
    let scene = a.scene.clone().unwrap_or_else(|| {
        let dir = a.gt.parent().and_then(Path::file_name).map(|s| s.to_string_lossy().into_owned());
        dir.filter(|s| !s.is_empty()).unwrap_or_else(|| "-".into())
    });
    let loss = a.loss.clone().or_else(|| loss_label(&a.mesh)).unwrap_or_else(|| "-".into());
    let report = format!("scene,loss,acc,comp,mean\n{scene},{loss},{:.6},{:.6},{:.6}\n", cd.acc, cd.comp, cd.mean);
    print!("{report}");
    if let Some(out) = &a.out {
        std::fs::write(out, &report).map_err(|e| format!("{}: {e}", out.display()))?;
        m.output("report", out);
        m.write(&sibling_manifest(out))?;
    }
    Ok(())
}

fn check_warp_cmd(a: CheckWarpArgs) -> Result<(), String> {
    let scene = load_scene(&a.scene).map_err(|e| e.to_string())?;
    let cfg = WarpCheckConfig { samples: a.samples, seed: a.seed, patch_size: a.patch, ..Default::default() };
    let report = check_warp(&scene, &cfg)?;
    println!("pairs                  {}", report.pairs);
    println!("reprojection max (px)  {:.3e}", report.max_reprojection_px);
    println!("reprojection mean (px) {:.3e}", report.mean_reprojection_px);
    println!("feature loss median    {:.3e}", report.feature_loss_median);
    println!("feature loss p90       {:.3e}", report.feature_loss_p90);
    println!("feature loss max       {:.3e}", report.feature_loss_max);
    let breaches = report.breaches();
    for b in &breaches {
        println!("breach: {b}");
    }
    if breaches.is_empty() {
        println!("PASS");
        Ok(())
    } else if a.lenient {
        println!("PASS (lenient)");
        Ok(())
    } else {
        Err(format!("warp check failed: {}", breaches.join("; ")))
    }
}
