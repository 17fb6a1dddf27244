//! On-disk layout of a two-view problem.
//!
//! ```text
//! I1.pfm I2.pfm        observed colors
//! D1.pfm D2.pfm        truth depths (synthetic bundles only)
//! init.ply             starting surfels, view-1 frame
//! camera_init.json     starting intrinsics and view-2 pose
//! scene.ply            truth surfels            (optional)
//! camera_truth.json    truth intrinsics + pose  (optional)
//! info.json            overlap, depth range, scene scale
//! ```
//!
//! Only `I1.pfm`, `I2.pfm` and `init.ply` are required to run bundle
//! adjustment. Without `camera_init.json` the intrinsics come from
//! [`init_intrinsics`] and the pose is the identity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surfelsplat_core::{init_intrinsics, CameraIntrinsics, CameraPose, Image, SurfelScene};

use crate::error::{Error, Result};
use crate::io::{camera_json, pfm, ply, png};
use crate::synth::SyntheticBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub overlap: f64,
    pub depth_range: f64,
    pub scene_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub scene: SurfelScene,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub image1: Image,
    pub image2: Image,
    pub depth1: Option<Image>,
    pub depth2: Option<Image>,
    pub init_scene: SurfelScene,
    pub init_intrinsics: CameraIntrinsics,
    pub init_pose: CameraPose,
    pub truth: Option<Truth>,
    pub info: Option<BundleInfo>,
}

pub fn save_bundle(dir: &Path, b: &SyntheticBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pfm::save_pfm(&dir.join("I1.pfm"), &b.image1)?;
    pfm::save_pfm(&dir.join("I2.pfm"), &b.image2)?;
    pfm::save_pfm(&dir.join("D1.pfm"), &b.depth1)?;
    pfm::save_pfm(&dir.join("D2.pfm"), &b.depth2)?;
    png::save_png(&dir.join("I1.png"), &b.image1)?;
    png::save_png(&dir.join("I2.png"), &b.image2)?;
    ply::save_ply(&dir.join("scene.ply"), &b.scene)?;
    ply::save_ply(&dir.join("init.ply"), &b.init_scene)?;
    camera_json::save_camera(&dir.join("camera_truth.json"), &b.intrinsics, Some(&b.pose))?;
    camera_json::save_camera(&dir.join("camera_init.json"), &b.init_intrinsics, Some(&b.init_pose))?;
    let info = BundleInfo { overlap: b.overlap, depth_range: b.depth_range, scene_scale: b.scene_scale };
    let json = serde_json::to_string_pretty(&info)? + "\n";
    let path = dir.join("info.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let spec = serde_json::to_string_pretty(&b.spec)? + "\n";
    let path = dir.join("spec.json");
    std::fs::write(&path, spec).map_err(|e| Error::io(&path, e))
}

fn optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let image1 = pfm::load_pfm(&dir.join("I1.pfm"))?;
    let image2 = pfm::load_pfm(&dir.join("I2.pfm"))?;
    let init_scene = ply::load_ply(&dir.join("init.ply"))?;
    let (init_intrinsics, init_pose) = match optional(&dir.join("camera_init.json"), camera_json::load_camera)? {
        Some(c) => c,
        None => (init_intrinsics(image1.width() as u32, image1.height() as u32)?, CameraPose::identity()),
    };
    let truth = match (
        optional(&dir.join("scene.ply"), ply::load_ply)?,
        optional(&dir.join("camera_truth.json"), camera_json::load_camera)?,
    ) {
        (Some(scene), Some((intrinsics, pose))) => Some(Truth { scene, intrinsics, pose }),
        _ => None,
    };
    let info = optional(&dir.join("info.json"), |p| Ok(serde_json::from_reader(crate::io::open(p)?)?))?;
    Ok(LoadedBundle {
        image1,
        image2,
        depth1: optional(&dir.join("D1.pfm"), pfm::load_pfm)?,
        depth2: optional(&dir.join("D2.pfm"), pfm::load_pfm)?,
        init_scene,
        init_intrinsics,
        init_pose,
        truth,
        info,
    })
}
