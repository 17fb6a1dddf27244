use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use surfelsplat::bundle::{load_bundle, save_bundle};
use surfelsplat::checkpoint::{CheckpointWriter, TraceRecord};
use surfelsplat::config::BaConfig;
use surfelsplat::io::{camera_json, pfm, ply, png};
use surfelsplat::{generate_synthetic, MetricsReport, SyntheticSceneSpec};
use surfelsplat_core::ba::{render_views, TwoViewObservations};
use surfelsplat_core::gradcheck::{run_gradcheck, GradcheckConfig};
use surfelsplat_core::{init_intrinsics, render, run_algorithm1, run_stage, BaState, CameraPose, Stage};

#[derive(Parser)]
#[command(name = "surfelsplat", version, about = "Gaussian-surfel splatting with two-view self-calibrating bundle adjustment")]
struct Cli {
    /// Worker threads for rendering; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides the seed of the spec, config or gradient check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-view problem bundle.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a surfel scene through a camera.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the depth map.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Recover intrinsics from one view (Intrinsics stage only).
    Calibrate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Starting camera; defaults to the 1.2x image-size focal rule.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the view-2 pose (Pose stage only).
    Pose {
        #[arg(long)]
        scene: PathBuf,
        /// Intrinsics plus starting pose.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full four-stage bundle adjustment on a bundle directory.
    Ba {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM between two PFM images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<BaConfig> {
    let mut cfg = match path {
        Some(p) => BaConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => BaConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSceneSpec = serde_json::from_reader(std::fs::File::open(spec_path).with_context(|| format!("opening {}", spec_path.display()))?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let bundle = generate_synthetic(&spec)?;
    save_bundle(out, &bundle)?;
    log::info!("bundle written to {} (overlap {:.3})", out.display(), bundle.overlap);
    Ok(())
}

fn render_cmd(scene: &Path, camera: &Path, out: &Path, depth: Option<&Path>, png_path: Option<&Path>) -> Result<()> {
    let scene = ply::load_ply(scene)?;
    let (k, pose) = camera_json::load_camera(camera)?;
    let r = render(&scene, &k, &pose, &Default::default())?;
    pfm::save_pfm(out, &r.color)?;
    if let Some(d) = depth {
        pfm::save_pfm(d, &r.depth)?;
    }
    if let Some(p) = png_path {
        png::save_png(p, &r.color)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StageSummary {
    stage: &'static str,
    initial_loss: f64,
    final_loss: f64,
}

fn calibrate(scene: &Path, image: &Path, iters: usize, camera: Option<&Path>, cfg: &BaConfig, out: &Path) -> Result<()> {
    let scene = ply::load_ply(scene)?;
    let observed = pfm::load_pfm(image)?;
    let k = match camera {
        Some(c) => camera_json::load_camera(c)?.0,
        None => init_intrinsics(observed.width() as u32, observed.height() as u32)?,
    };
    let schedule = cfg.schedule()?;
    let obs = TwoViewObservations { view1: observed.clone(), view2: observed };
    let state = BaState::new(scene, k, CameraPose::identity(), &schedule)?;
    let outcome = run_stage(state, &obs, &schedule, Stage::Intrinsics, iters)?;
    log::info!("intrinsics loss {:.6} -> {:.6}", outcome.initial_loss, outcome.final_loss);
    camera_json::save_camera(out, &outcome.state.intrinsics, None)?;
    Ok(())
}

fn pose_cmd(scene: &Path, camera: &Path, image: &Path, iters: usize, cfg: &BaConfig, out: &Path) -> Result<()> {
    let scene = ply::load_ply(scene)?;
    let (k, pose) = camera_json::load_camera(camera)?;
    let observed = pfm::load_pfm(image)?;
    let schedule = cfg.schedule()?;
    let obs = TwoViewObservations { view1: observed.clone(), view2: observed };
    let state = BaState::new(scene, k, pose, &schedule)?;
    let outcome = run_stage(state, &obs, &schedule, Stage::Pose, iters)?;
    match outcome.early_stop {
        Some(i) => log::info!("pose converged at iteration {i}"),
        None => log::info!("pose ran all {iters} iterations"),
    }
    camera_json::save_pose(out, &outcome.state.pose)?;
    Ok(())
}

#[derive(Serialize)]
struct BaSummary {
    stages: Vec<StageSummary>,
    final_loss: TraceRecord,
    pose_stop_iteration: Option<usize>,
    view1: MetricsReport,
    view2: MetricsReport,
    checkpoints: usize,
    checkpoint_failures: usize,
}

fn ba(bundle: &Path, cfg: &BaConfig, out: &Path) -> Result<()> {
    let b = load_bundle(bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
    let schedule = cfg.schedule()?;
    let obs = TwoViewObservations { view1: b.image1, view2: b.image2 };
    let state = BaState::new(b.init_scene, b.init_intrinsics, b.init_pose, &schedule)?;
    let writer = CheckpointWriter::new(out)?;
    let every = cfg.checkpoint_every;
    let result = run_algorithm1(state, &obs, &schedule, &mut |s, entry| {
        writer.trace(entry);
        if every > 0 && s.iteration % every == 0 {
            writer.snapshot(s);
        }
    });
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            let summary = writer.finish();
            bail!("bundle adjustment aborted: {e} ({} checkpoints written)", summary.snapshots);
        }
    };
    if let Some(last) = output.trace.last() {
        writer.trace(last);
    }
    let summary = writer.finish();
    ply::save_ply(&out.join("scene.ply"), &output.state.scene)?;
    camera_json::save_camera(&out.join("camera.json"), &output.state.intrinsics, Some(&output.state.pose))?;
    let renders = render_views(&output.state, &schedule.raster)?;
    pfm::save_pfm(&out.join("render1.pfm"), &renders.view1.color)?;
    pfm::save_pfm(&out.join("render2.pfm"), &renders.view2.color)?;
    let report = BaSummary {
        stages: output
            .stages
            .iter()
            .map(|(s, a, b)| StageSummary { stage: s.name(), initial_loss: *a, final_loss: *b })
            .collect(),
        final_loss: output.trace.last().expect("trace is never empty").into(),
        pose_stop_iteration: output.state.pose_stop_iteration,
        view1: MetricsReport::compare(&renders.view1.color, &obs.view1)?,
        view2: MetricsReport::compare(&renders.view2.color, &obs.view2)?,
        checkpoints: summary.snapshots,
        checkpoint_failures: summary.failures,
    };
    write_json(&out.join("summary.json"), &report)
}

#[derive(Serialize)]
struct GroupLine {
    param_group: &'static str,
    max_rel_err: f64,
    mean_rel_err: f64,
    excluded_fraction: f64,
    checked: usize,
    unverifiable: usize,
    passed: bool,
}

fn gradcheck(scenes: usize, seed: Option<u64>, out: Option<&Path>) -> Result<bool> {
    let cfg = GradcheckConfig { scenes, seed: seed.unwrap_or(0), ..Default::default() };
    let report = run_gradcheck(&cfg)?;
    let lines: Vec<GroupLine> = report
        .groups
        .iter()
        .map(|g| GroupLine {
            param_group: g.group.name(),
            max_rel_err: g.max_rel_err,
            mean_rel_err: g.mean_rel_err,
            excluded_fraction: g.excluded_fraction,
            checked: g.checked,
            unverifiable: g.unverifiable,
            passed: g.passed,
        })
        .collect();
    let text = serde_json::to_string_pretty(&lines)?;
    println!("{text}");
    if let Some(p) = out {
        write_json(p, &lines)?;
    }
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<bool> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("building thread pool")?;
    match cli.command {
        Command::Synth { spec, out } => synth(&spec, &out, cli.seed)?,
        Command::Render { scene, camera, out, depth, png } => render_cmd(&scene, &camera, &out, depth.as_deref(), png.as_deref())?,
        Command::Calibrate { scene, image, iters, camera, config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            calibrate(&scene, &image, iters, camera.as_deref(), &cfg, &out)?
        }
        Command::Pose { scene, camera, image, iters, config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            pose_cmd(&scene, &camera, &image, iters, &cfg, &out)?
        }
        Command::Ba { bundle, config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            ba(&bundle, &cfg, &out)?
        }
        Command::Gradcheck { scenes, out } => return gradcheck(scenes, cli.seed, out.as_deref()),
        Command::Metrics { a, b } => {
            let report = MetricsReport::compare(&pfm::load_pfm(&a)?, &pfm::load_pfm(&b)?)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
