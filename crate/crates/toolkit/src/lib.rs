//! Everything around `surfelsplat-core` that touches the outside world:
//! PLY/PFM/camera-JSON files, synthetic two-view problems, surfel
//! initialization from depth, image metrics, run configuration, asynchronous
//! checkpoints and the `surfelsplat` command line.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod init;
pub mod io;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
pub use init::{init_surfels_from_depth, InitOptions};
pub use metrics::{psnr, MetricsReport};
pub use synth::{generate_synthetic, Preset, SyntheticBundle, SyntheticSceneSpec, Texture};
