//! Camera files.
//!
//! ```json
//! {"fx": 38.4, "fy": 38.4, "cx": 16.0, "cy": 16.0, "width": 32, "height": 32,
//!  "near": 0.01, "far": 100.0,
//!  "pose": {"rotation": [1,0,0, 0,1,0, 0,0,1], "translation": [0,0,0]}}
//! ```
//!
//! `pose` is optional on read (identity). A pose-only file holds just the
//! `{rotation, translation}` object. Floats are printed in shortest
//! round-trip form, so every value reads back bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surfelsplat_core::camera::{DEFAULT_FAR, DEFAULT_NEAR};
use surfelsplat_core::math::{Mat3, Vec3};
use surfelsplat_core::{CameraIntrinsics, CameraPose};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl PoseFile {
    pub fn from_pose(p: &CameraPose) -> Self {
        let r = &p.rotation;
        Self {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        Ok(CameraPose::new(Mat3::from_row_slice(&self.rotation), Vec3::from(self.translation))?)
    }
}

fn default_near() -> f64 {
    DEFAULT_NEAR
}

fn default_far() -> f64 {
    DEFAULT_FAR
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseFile>,
}

impl CameraFile {
    pub fn new(k: &CameraIntrinsics, pose: Option<&CameraPose>) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            near: k.near,
            far: k.far,
            pose: pose.map(PoseFile::from_pose),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?.with_clip(self.near, self.far)?)
    }

    pub fn pose(&self) -> Result<CameraPose> {
        self.pose.as_ref().map_or(Ok(CameraPose::identity()), PoseFile::to_pose)
    }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    super::write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        std::io::Write::write_all(w, b"\n")
    })
}

pub fn save_camera(path: &Path, k: &CameraIntrinsics, pose: Option<&CameraPose>) -> Result<()> {
    save_json(path, &CameraFile::new(k, pose))
}

pub fn load_camera(path: &Path) -> Result<(CameraIntrinsics, CameraPose)> {
    let file: CameraFile = serde_json::from_reader(super::open(path)?)?;
    Ok((file.intrinsics()?, file.pose()?))
}

pub fn save_pose(path: &Path, pose: &CameraPose) -> Result<()> {
    save_json(path, &PoseFile::from_pose(pose))
}

/// Reads a pose-only file, or the `pose` of a full camera file.
pub fn load_pose(path: &Path) -> Result<CameraPose> {
    let value: serde_json::Value = serde_json::from_reader(super::open(path)?)?;
    if value.get("fx").is_some() {
        return serde_json::from_value::<CameraFile>(value)?.pose();
    }
    serde_json::from_value::<PoseFile>(value)?.to_pose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use surfelsplat_core::{se3_exp, TangentUpdate};

    #[test]
    fn json_round_trip_is_bit_exact() {
        let k = CameraIntrinsics::new(38.4 + 1e-13, 1.0 / 3.0, 16.1, 15.9, 32, 30).unwrap().with_clip(0.1, 50.0).unwrap();
        let pose = se3_exp(&TangentUpdate::new(Vec3::new(0.01, -0.2, 0.3), Vec3::new(0.1, 1e-17, -3.0)));
        let text = serde_json::to_string(&CameraFile::new(&k, Some(&pose))).unwrap();
        let back: CameraFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.intrinsics().unwrap(), k);
        assert_eq!(back.pose().unwrap(), pose);
    }

    #[test]
    fn optional_fields_default() {
        let back: CameraFile = serde_json::from_str(r#"{"fx":10,"fy":10,"cx":4,"cy":4,"width":8,"height":8}"#).unwrap();
        assert_eq!(back.pose().unwrap(), CameraPose::identity());
        assert_eq!(back.intrinsics().unwrap().far, DEFAULT_FAR);
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let p = PoseFile { rotation: [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], translation: [0.0; 3] };
        assert!(p.to_pose().is_err());
    }
}
