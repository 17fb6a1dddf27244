//! End-to-end acceptance run. Every criterion is evaluated, one line is
//! printed per criterion, and the test fails if any of them failed.
//!
//! The report goes straight to stderr, so it shows even under the test
//! harness's output capture.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfelsplat::synth::{Perturbation, Preset, Texture};
use surfelsplat::{generate_synthetic, psnr, SyntheticSceneSpec};
use surfelsplat_core::ba::{render_views, TwoViewObservations};
use surfelsplat_core::gradcheck::{run_gradcheck, GradcheckConfig};
use surfelsplat_core::math::{Mat2, Mat3, Vec2, Vec3};
use surfelsplat_core::ssim::ssim;
use surfelsplat_core::{
    affine_jacobian, build_frame, covariance_world, geometric_loss, project_covariance, project_point, render,
    run_algorithm1, run_stage, se3_exp, se3_log, splat_alpha, transform_to_camera, warp_depth, BaState,
    CameraIntrinsics, CameraPose, GaussianSurfel, Image, OptimizationSchedule, RasterConfig, Stage, SurfelScene,
    TangentUpdate,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

// 1 -------------------------------------------------------------------------

fn gradients() -> Verdict {
    let start = Instant::now();
    let report = single_threaded(|| run_gradcheck(&GradcheckConfig::default())).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    let excluded = report.groups.iter().map(|g| g.excluded_fraction).fold(0.0, f64::max);
    let failing: Vec<_> = report.groups.iter().filter(|g| !g.passed).map(|g| g.group.name()).collect();
    check(
        report.groups.len() == 10 && report.passed && elapsed < Duration::from_secs(120),
        format!(
            "{} groups, worst rel err {worst:.2e}, worst exclusion {:.2}%, failing {failing:?}, {:.1?} on 1 thread",
            report.groups.len(),
            100.0 * excluded,
            elapsed
        ),
    )
}

// 2 -------------------------------------------------------------------------

/// Every weight recomputed as an explicit product over the surfels in front.
fn sequential_oracle(scene: &SurfelScene, k: &CameraIntrinsics, cfg: &RasterConfig) -> (Vec3, f64) {
    let pose = CameraPose::identity();
    let pixel = Vec2::new(0.5, 0.5);
    let mut stack = Vec::new();
    for (i, s) in scene.surfels().iter().enumerate() {
        let mu_c = transform_to_camera(&s.center, &pose);
        if mu_c.z <= k.near || mu_c.z >= k.far {
            continue;
        }
        let mean = project_point(&mu_c, k).unwrap();
        let cov = project_covariance(&covariance_world(s).unwrap(), &pose, &affine_jacobian(&mu_c, k).unwrap());
        let d = pixel - mean;
        let q = (d.transpose() * (cov + Mat2::identity() * cfg.cov_dilation).try_inverse().unwrap() * d)[0];
        if q > cfg.support_sigma * cfg.support_sigma || s.opacity * (-0.5 * q).exp() < cfg.alpha_cutoff {
            continue;
        }
        let alpha = splat_alpha(&cov, &mean, s.opacity, &pixel, cfg.cov_dilation).unwrap();
        stack.push((mu_c.z, i, alpha, s.color));
    }
    stack.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut color, mut depth) = (Vec3::zeros(), 0.0);
    for i in 0..stack.len() {
        let t: f64 = stack[..i].iter().map(|e| 1.0 - e.2).product();
        color += stack[i].3 * stack[i].2 * t;
        depth += stack[i].0 * stack[i].2 * t;
        if t * (1.0 - stack[i].2) < cfg.transmittance_floor {
            break;
        }
    }
    (color, depth)
}

fn blending() -> Verdict {
    let k = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
    let cfg = RasterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let surfels = (0..n)
            .map(|_| {
                let d = rng.random_range(1.0..6.0);
                let (u, v) = (rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0));
                GaussianSurfel {
                    color: Vec3::new(rng.random(), rng.random(), rng.random()),
                    center: k.unproject(u, v, d),
                    scale: Vec2::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)) * d,
                    normal: Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -1.0).normalize(),
                    opacity: rng.random_range(0.05..1.0),
                }
            })
            .collect();
        let scene = SurfelScene::new(surfels).unwrap();
        let out = render(&scene, &k, &CameraPose::identity(), &cfg).unwrap();
        let (c, d) = sequential_oracle(&scene, &k, &cfg);
        for ch in 0..3 {
            worst = worst.max((out.color.get(0, 0, ch) - c[ch]).abs());
        }
        worst = worst.max((out.depth.get(0, 0, 0) - d).abs());
    }
    let at = |d: f64| GaussianSurfel {
        color: Vec3::new(1.0, 1.0, 1.0),
        center: k.unproject(0.5, 0.5, d),
        scale: Vec2::new(0.5, 0.5) * d,
        normal: Vec3::new(0.0, 0.0, -1.0),
        opacity: 0.5,
    };
    let hand = render(&SurfelScene::new(vec![at(3.0), at(1.0)]).unwrap(), &k, &CameraPose::identity(), &cfg).unwrap();
    let (hc, hd) = (hand.color.get(0, 0, 0), hand.depth.get(0, 0, 0));
    check(
        worst < 1e-6 && hc == 0.75 && hd == 1.25,
        format!("1000 stacks, max |render - oracle| {worst:.1e}; hand case C {hc}, D {hd}"),
    )
}

// 3 -------------------------------------------------------------------------

fn intrinsics() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, sx, sy, dc) in [(0u64, 1.2, 1.15, 1.5), (1, 0.8, 0.85, -1.0), (2, 1.1, 1.2, 0.5), (3, 0.9, 0.8, -1.5), (4, 1.15, 0.88, 1.0)] {
        let spec = SyntheticSceneSpec { preset: Preset::TexturedBoxCorner, width: 64, height: 64, seed, ..Default::default() };
        let b = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let truth = b.intrinsics;
        let start = CameraIntrinsics { fx: truth.fx * sx, fy: truth.fy * sy, cx: truth.cx + dc, cy: truth.cy - dc, ..truth };
        let schedule = OptimizationSchedule::default();
        let obs = TwoViewObservations { view1: b.image1.clone(), view2: b.image1.clone() };
        let state = BaState::new(b.scene.clone(), start, CameraPose::identity(), &schedule).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let out = run_stage(state, &obs, &schedule, Stage::Intrinsics, 200).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        let k = out.state.intrinsics;
        let (efx, efy) = ((k.fx / truth.fx - 1.0).abs(), (k.fy / truth.fy - 1.0).abs());
        let (ecx, ecy) = ((k.cx - truth.cx).abs(), (k.cy - truth.cy).abs());
        let pass = efx < 0.01 && efy < 0.01 && ecx < 1.0 && ecy < 1.0 && elapsed < Duration::from_secs(30);
        ok &= pass;
        lines.push(format!(
            "seed {seed} (x{sx}/x{sy}): fx {:.3}% fy {:.3}% cx {ecx:.3}px cy {ecy:.3}px {:.1?}",
            100.0 * efx,
            100.0 * efy,
            elapsed
        ));
    }
    check(ok, lines.join("; "))
}

// 4 -------------------------------------------------------------------------

fn pose() -> Verdict {
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let spec = SyntheticSceneSpec {
            preset: Preset::TexturedBoxCorner,
            width: 64,
            height: 64,
            seed,
            perturbation: Some(Perturbation { focal: 0.0, principal: 0.0, rotation_deg: 5.0, translation: 0.02 }),
            ..Default::default()
        };
        let b = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let schedule = OptimizationSchedule::default();
        let obs = TwoViewObservations { view1: b.image2.clone(), view2: b.image2.clone() };
        let state = BaState::new(b.scene.clone(), b.intrinsics, b.init_pose, &schedule).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let out = run_stage(state, &obs, &schedule, Stage::Pose, 200).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        let rot = out.state.pose.rotation_angle_to(&b.pose).to_degrees();
        let trans = (out.state.pose.translation - b.pose.translation).norm() / b.scene_scale;
        if rot < 0.5 && trans < 0.005 && elapsed < Duration::from_secs(60) {
            passed += 1;
        }
        lines.push(format!("{rot:.3}deg/{:.3}%/{:.1?}", 100.0 * trans, elapsed));
    }
    check(passed >= 9, format!("{passed}/10 seeds within 0.5deg and 0.5%: {}", lines.join(" ")))
}

// 5 -------------------------------------------------------------------------

fn end_to_end() -> Verdict {
    let spec = SyntheticSceneSpec {
        preset: Preset::TexturedBoxCorner,
        width: 64,
        height: 64,
        texture: Texture::Perlin { frequency: 0.8, octaves: 2 },
        perturbation: Some(Perturbation { focal: 0.1, principal: 0.0, rotation_deg: 3.0, translation: 0.01 }),
        ..Default::default()
    };
    let b = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let schedule = OptimizationSchedule::default();
    let obs = TwoViewObservations { view1: b.image1.clone(), view2: b.image2.clone() };
    let state = BaState::new(b.init_scene.clone(), b.init_intrinsics, b.init_pose, &schedule).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let out = run_algorithm1(state, &obs, &schedule, &mut |_, _| {}).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let r = render_views(&out.state, &schedule.raster).map_err(|e| e.to_string())?;
    let p1 = psnr(&r.view1.color, &obs.view1).map_err(|e| e.to_string())?;
    let p2 = psnr(&r.view2.color, &obs.view2).map_err(|e| e.to_string())?;
    let geo = out.final_report.geometric / b.depth_range;
    let first = out.trace.first().expect("non-empty trace");
    let last = out.trace.last().expect("non-empty trace");
    let ratio = last.report.total / first.report.total;
    check(
        schedule.iterations == 100
            && last.iter == 100
            && p1 > 35.0
            && p2 > 35.0
            && geo < 0.01
            && ratio < 0.5
            && elapsed < Duration::from_secs(300),
        format!(
            "PSNR {p1:.2}/{p2:.2} dB, L_geo {:.3}% of depth range, loss(100)/loss(0) {ratio:.3}, {:.1?}",
            100.0 * geo,
            elapsed
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn ablation() -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSceneSpec {
            preset: Preset::TwoPlanes,
            seed,
            perturbation: Some(Perturbation { focal: 0.1, principal: 0.0, rotation_deg: 3.0, translation: 0.01 }),
            ..Default::default()
        };
        let b = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let obs = TwoViewObservations { view1: b.image1.clone(), view2: b.image2.clone() };
        let mut residual = [0.0; 2];
        for (slot, lambda) in [0.0, 0.01].into_iter().enumerate() {
            let mut schedule = OptimizationSchedule::default();
            schedule.weights.geometric = lambda;
            let state = BaState::new(b.init_scene.clone(), b.init_intrinsics, b.init_pose, &schedule).map_err(|e| e.to_string())?;
            let out = run_algorithm1(state, &obs, &schedule, &mut |_, _| {}).map_err(|e| e.to_string())?;
            residual[slot] = out.final_report.geometric;
        }
        let gain = 1.0 - residual[1] / residual[0];
        ok &= residual[1] <= residual[0] && gain >= 0.10;
        lines.push(format!("seed {seed}: {:.3e} -> {:.3e} ({:.1}%)", residual[0], residual[1], 100.0 * gain));
    }
    check(ok, lines.join("; "))
}

// 7 -------------------------------------------------------------------------

fn run_cli(threads: usize, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_surfelsplat"))
        .args(["--threads", &threads.to_string(), "--seed", "3"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every subcommand into `root` and returns the captured stdout.
fn cli_session(threads: usize, root: &Path, spec: &Path) -> Result<Vec<u8>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let bundle = root.join("bundle");
    let mut stdout = Vec::new();
    let mut run = |args: Vec<String>| -> Result<(), String> {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        stdout.extend(run_cli(threads, &args)?);
        Ok(())
    };
    run(vec!["synth".into(), "--spec".into(), s(spec), "--out".into(), s(&bundle)])?;
    run(vec![
        "render".into(), "--scene".into(), s(&bundle.join("init.ply")), "--camera".into(), s(&bundle.join("camera_init.json")),
        "--out".into(), s(&root.join("render.pfm")), "--depth".into(), s(&root.join("depth.pfm")), "--png".into(), s(&root.join("render.png")),
    ])?;
    run(vec![
        "calibrate".into(), "--scene".into(), s(&bundle.join("scene.ply")), "--image".into(), s(&bundle.join("I1.pfm")),
        "--camera".into(), s(&bundle.join("camera_init.json")), "--iters".into(), "20".into(), "--out".into(), s(&root.join("calibrated.json")),
    ])?;
    run(vec![
        "pose".into(), "--scene".into(), s(&bundle.join("scene.ply")), "--camera".into(), s(&bundle.join("camera_init.json")),
        "--image".into(), s(&bundle.join("I2.pfm")), "--iters".into(), "20".into(), "--out".into(), s(&root.join("pose.json")),
    ])?;
    run(vec!["ba".into(), "--bundle".into(), s(&bundle), "--out".into(), s(&root.join("ba"))])?;
    run(vec!["gradcheck".into(), "--scenes".into(), "2".into(), "--out".into(), s(&root.join("gradcheck.json"))])?;
    run(vec!["metrics".into(), "--a".into(), s(&root.join("render.pfm")), "--b".into(), s(&bundle.join("I1.pfm"))])?;
    Ok(stdout)
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = tmp.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"preset": "two-planes", "width": 32, "height": 32, "depth_noise": 0.01, "normal_noise": 0.02, "perturbation": {}}"#,
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("t1"), tmp.path().join("t4"));
    let out_a = cli_session(1, &a, &spec)?;
    let out_b = cli_session(4, &b, &spec)?;
    let (fa, fb) = (files(&a), files(&b));
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let differing: Vec<_> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    check(
        names(&fa) == names(&fb) && differing.is_empty() && out_a == out_b,
        format!("7 subcommands, {} output files + stdout compared across 1 and 4 threads, differing {differing:?}", fa.len()),
    )
}

// 8 -------------------------------------------------------------------------

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let cases = 2000;
    for _ in 0..cases {
        // covariance null space and sign of the second tangent
        let n = unit(&mut rng);
        let (sx, sy) = (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
        let s = GaussianSurfel { color: Vec3::zeros(), center: Vec3::zeros(), scale: Vec2::new(sx, sy), normal: n, opacity: 1.0 };
        let sigma = covariance_world(&s).unwrap();
        let tol = 1e-12 * sx.max(sy).powi(2);
        if (sigma * n).norm() > tol {
            failures.push("null space");
        }
        let f = build_frame(&n).unwrap();
        let d = Mat3::from_diagonal(&Vec3::new(sx * sx, sy * sy, 0.0));
        let mut r = f.rotation();
        r.set_column(1, &(-f.n2));
        if (r * d * r.transpose() - sigma).amax() > tol {
            failures.push("sign flip");
        }
        // SE(3) round trip
        let xi = TangentUpdate::new(unit(&mut rng) * rng.random_range(0.0..3.0), unit(&mut rng) * rng.random_range(0.0..2.0));
        let back = se3_log(&se3_exp(&xi));
        if (0..6).any(|i| (back.0[i] - xi.0[i]).abs() > 1e-8) {
            failures.push("exp/log");
        }
    }
    for _ in 0..20 {
        let (w, h) = (rng.random_range(11..40), rng.random_range(11..40));
        let mut img = || Image::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect());
        let (a, b) = (img(), img());
        if (ssim(&a, &a).unwrap() - 1.0).abs() > 1e-12 {
            failures.push("ssim identity");
        }
        if (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() > 1e-12 {
            failures.push("ssim symmetry");
        }
        let depth = Image::from_vec(w, h, 1, (0..w * h).map(|_| rng.random_range(0.5..10.0)).collect());
        let k = CameraIntrinsics::new(30.0, 28.0, w as f64 / 2.0, h as f64 / 2.0, w as u32, h as u32).unwrap();
        let warp = warp_depth(&depth, &k, &CameraPose::identity());
        let exact = warp.masked_count() == w * h
            && warp.depth.data().iter().zip(depth.data()).all(|(x, y)| (x - y).abs() <= 1e-12 * y);
        if !exact || geometric_loss(&depth, &warp).unwrap().value > 1e-12 {
            failures.push("warp identity");
        }
    }
    check(failures.is_empty(), format!("{} randomized cases, failures {failures:?}", 3 * cases + 4 * 20))
}

fn report(line: String) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradients),
        ("blending oracle", blending),
        ("intrinsic recovery", intrinsics),
        ("pose recovery", pose),
        ("end-to-end schedule", end_to_end),
        ("geometric-constraint ablation", ablation),
        ("determinism across threads", determinism),
        ("invariant suites", invariants),
    ];
    // start below the harness's "test acceptance ..." prefix
    report(String::new());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => report(format!("PASS {} {name}: {detail}", i + 1)),
            Err(detail) => {
                report(format!("FAIL {} {name}: {detail}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "criteria {failed:?} failed");
}
