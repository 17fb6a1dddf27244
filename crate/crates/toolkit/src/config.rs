//! Bundle-adjustment run configuration, read from TOML or JSON.
//!
//! Every field is optional; missing ones take the library defaults.
//!
//! ```toml
//! seed = 7
//! iterations = 100
//! boundaries = [10, 20, 40]
//! lr_focal = 1.0
//! optimizer = "adam"
//! checkpoint_every = 10
//!
//! [weights]
//! ssim = 0.6
//! geometric = 0.01
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use surfelsplat_core::ba::GaussianRates;
use surfelsplat_core::optim::OptimizerKind;
use surfelsplat_core::{LossWeights, OptimizationSchedule, RasterConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightsConfig {
    pub ssim: f64,
    pub photometric_view1: f64,
    pub photometric_view2: f64,
    pub geometric: f64,
    pub normal_prior: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            ssim: w.ssim,
            photometric_view1: w.photometric_view1,
            photometric_view2: w.photometric_view2,
            geometric: w.geometric,
            normal_prior: w.normal_prior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianRatesConfig {
    pub color: f64,
    pub center: f64,
    pub log_scale: f64,
    pub normal: f64,
    pub opacity: f64,
}

impl Default for GaussianRatesConfig {
    fn default() -> Self {
        let r = OptimizationSchedule::default().lr_gaussian;
        Self { color: r.color, center: r.center, log_scale: r.log_scale, normal: r.normal, opacity: r.opacity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    pub tile_size: usize,
    pub alpha_cutoff: f64,
    pub transmittance_floor: f64,
    pub cov_dilation: f64,
    pub support_sigma: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        let r = RasterConfig::default();
        Self {
            tile_size: r.tile_size,
            alpha_cutoff: r.alpha_cutoff,
            transmittance_floor: r.transmittance_floor,
            cov_dilation: r.cov_dilation,
            support_sigma: r.support_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaConfig {
    pub seed: u64,
    pub iterations: usize,
    pub boundaries: [usize; 3],
    pub lr_focal: f64,
    pub lr_principal: f64,
    pub lr_gaussian: GaussianRatesConfig,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub pose_epsilon: f64,
    pub optimizer: Optimizer,
    pub weights: WeightsConfig,
    pub raster: RasterSettings,
    /// Checkpoint period in iterations; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for BaConfig {
    fn default() -> Self {
        let s = OptimizationSchedule::default();
        Self {
            seed: 0,
            iterations: s.iterations,
            boundaries: s.boundaries,
            lr_focal: s.lr_focal,
            lr_principal: s.lr_principal,
            lr_gaussian: GaussianRatesConfig::default(),
            lr_rotation: s.lr_rotation,
            lr_translation: s.lr_translation,
            pose_epsilon: s.pose_epsilon,
            optimizer: Optimizer::Adam,
            weights: WeightsConfig::default(),
            raster: RasterSettings::default(),
            checkpoint_every: 10,
        }
    }
}

impl BaConfig {
    /// Picks the parser from the extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<OptimizationSchedule> {
        let g = self.lr_gaussian;
        let w = self.weights;
        let r = self.raster;
        let schedule = OptimizationSchedule {
            iterations: self.iterations,
            boundaries: self.boundaries,
            lr_focal: self.lr_focal,
            lr_principal: self.lr_principal,
            lr_gaussian: GaussianRates { color: g.color, center: g.center, log_scale: g.log_scale, normal: g.normal, opacity: g.opacity },
            lr_rotation: self.lr_rotation,
            lr_translation: self.lr_translation,
            pose_epsilon: self.pose_epsilon,
            optimizer: match self.optimizer {
                Optimizer::Adam => OptimizerKind::Adam,
                Optimizer::GradientDescent => OptimizerKind::GradientDescent,
            },
            weights: LossWeights {
                ssim: w.ssim,
                photometric_view1: w.photometric_view1,
                photometric_view2: w.photometric_view2,
                geometric: w.geometric,
                normal_prior: w.normal_prior,
            },
            raster: RasterConfig {
                tile_size: r.tile_size,
                alpha_cutoff: r.alpha_cutoff,
                transmittance_floor: r.transmittance_floor,
                cov_dilation: r.cov_dilation,
                support_sigma: r.support_sigma,
            },
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        assert_eq!(BaConfig::default().schedule().unwrap(), OptimizationSchedule::default());
        let empty: BaConfig = toml::from_str("").unwrap();
        assert_eq!(empty, BaConfig::default());
    }

    #[test]
    fn toml_and_json_agree() {
        let t: BaConfig = toml::from_str("seed = 3\nlr_focal = 0.5\noptimizer = \"gradient-descent\"\n[weights]\ngeometric = 0.0\n").unwrap();
        let j: BaConfig =
            serde_json::from_str(r#"{"seed": 3, "lr_focal": 0.5, "optimizer": "gradient-descent", "weights": {"geometric": 0.0}}"#).unwrap();
        assert_eq!(t, j);
        let s = t.schedule().unwrap();
        assert_eq!(s.weights.geometric, 0.0);
        assert_eq!(s.weights.ssim, 0.6);
        assert_eq!(s.optimizer, OptimizerKind::GradientDescent);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_schedules() {
        assert!(toml::from_str::<BaConfig>("iters = 5").is_err());
        let bad = BaConfig { boundaries: [30, 20, 40], ..Default::default() };
        assert!(bad.schedule().is_err());
    }
}
