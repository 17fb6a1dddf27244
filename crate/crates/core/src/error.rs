use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid normal: {0}")]
    InvalidNormal(&'static str),

    #[error("invalid surfel {index}: {reason}")]
    InvalidSurfel { index: usize, reason: &'static str },

    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),

    #[error("invalid raster config: {0}")]
    InvalidConfig(&'static str),

    #[error("image dimensions differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),

    #[error("render output does not match the scene/camera passed to backward ({0})")]
    StaleRender(&'static str),

    #[error("non-finite gradient in {group} at iteration {iteration}")]
    NonFiniteGradient { group: &'static str, iteration: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("depth map has no valid pixels")]
    EmptyDepth,
}
