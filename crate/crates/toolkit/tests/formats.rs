use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfelsplat::io::{camera_json, pfm, ply};
use surfelsplat_core::math::{Vec2, Vec3};
use surfelsplat_core::{se3_exp, CameraIntrinsics, GaussianSurfel, Image, SurfelScene, TangentUpdate};

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> SurfelScene {
    let surfels = (0..n)
        .map(|_| {
            let mut v = || rng.random_range(-1.0..1.0);
            let center = Vec3::new(v(), v(), 3.0 + v());
            let normal = Vec3::new(v(), v(), -2.0).normalize();
            GaussianSurfel {
                center,
                normal,
                color: Vec3::new(rng.random(), rng.random(), rng.random()),
                opacity: rng.random_range(0.05..0.99),
                scale: Vec2::new(rng.random_range(0.01..0.3), rng.random_range(0.01..0.3)),
            }
        })
        .collect();
    SurfelScene::new(surfels).unwrap()
}

#[test]
fn ply_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1, 17, 200] {
        let scene = random_scene(&mut rng, n);
        let path = dir.path().join(format!("s{n}.ply"));
        ply::save_ply(&path, &scene).unwrap();
        let back = ply::load_ply(&path).unwrap();
        assert_eq!(back.surfels(), scene.surfels());
        let again = dir.path().join("again.ply");
        ply::save_ply(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn pfm_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for channels in [1, 3] {
        // values representable in f32 survive exactly
        let data = (0..13 * 7 * channels).map(|_| rng.random::<f32>() as f64).collect();
        let img = Image::from_vec(13, 7, channels, data);
        let path = dir.path().join(format!("i{channels}.pfm"));
        pfm::save_pfm(&path, &img).unwrap();
        let back = pfm::load_pfm(&path).unwrap();
        assert_eq!(back, img);
        let again = dir.path().join("again.pfm");
        pfm::save_pfm(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn camera_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..20 {
        let k = CameraIntrinsics::new(
            rng.random_range(20.0..200.0),
            rng.random_range(20.0..200.0),
            rng.random_range(10.0..30.0),
            rng.random_range(10.0..30.0),
            40,
            32,
        )
        .unwrap();
        let mut v = || rng.random_range(-0.5..0.5);
        let pose = se3_exp(&TangentUpdate::new(Vec3::new(v(), v(), v()), Vec3::new(v(), v(), v())));
        let path = dir.path().join(format!("c{i}.json"));
        camera_json::save_camera(&path, &k, Some(&pose)).unwrap();
        let (k2, p2) = camera_json::load_camera(&path).unwrap();
        assert_eq!(k2, k);
        assert_eq!(p2, pose);
        let pose_path = dir.path().join(format!("p{i}.json"));
        camera_json::save_pose(&pose_path, &pose).unwrap();
        assert_eq!(camera_json::load_pose(&pose_path).unwrap(), pose);
        // a full camera file is also accepted where only a pose is wanted
        assert_eq!(camera_json::load_pose(&path).unwrap(), pose);
    }
}

#[test]
fn missing_files_report_the_path() {
    let err = ply::load_ply(std::path::Path::new("/nonexistent/scene.ply")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/scene.ply"), "{err}");
}
