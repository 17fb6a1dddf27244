//! Differentiable Gaussian-surfel splatting with camera self-calibration.
//!
//! The crate renders RGB and depth from flat (rank-2) Gaussian surfels,
//! back-propagates image-space loss gradients to surfel parameters, camera
//! intrinsics and an SE(3) pose, and runs a staged two-view bundle adjustment
//! (intrinsics, then surfels, then pose, then everything jointly).
//!
//! Everything here is pure computation over `alloc` containers. File formats,
//! synthetic scene generation and the command line live in the companion
//! `surfelsplat` crate.
//!
//! With the default `parallel` feature, rendering and the backward pass split
//! the image into tiles and process them on the rayon pool. Reductions always
//! run in tile-major order, so results are bit-identical for any thread count.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(rust_2018_idioms)]
// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ba;
pub mod camera;
pub mod error;
pub mod gradcheck;
pub mod gradients;
pub mod image;
pub mod math;
pub mod objective;
pub mod optim;
pub mod raster;
pub mod ssim;
pub mod surfel;

pub use ba::{
    init_intrinsics, run_algorithm1, run_stage, AlgorithmOutput, BaState, OptimizationSchedule,
    Stage, StageOutcome,
};
pub use camera::{
    affine_jacobian, project_covariance, project_point, projection_matrix, se3_exp, se3_log,
    transform_to_camera, CameraIntrinsics, CameraPose, ProjectedGaussian, TangentUpdate,
};
pub use error::{Error, Result};
pub use gradients::{backward, GradientBuffers, SurfelGradient};
pub use image::Image;
pub use objective::{
    geometric_loss, normal_prior_loss, photometric_loss, warp_depth, DepthWarp, GeometricLoss,
    LossReport, LossWeights, NormalPriorLoss, PhotometricLoss,
};
pub use raster::{render, splat_alpha, RasterConfig, RenderOutput};
pub use surfel::{build_frame, covariance_world, GaussianSurfel, SurfelFrame, SurfelScene};
