//! One TOML file configures every stage. All tables and keys are optional;
//! missing ones take their defaults.
//!
//! ```toml
//! [scene]       # width, height, high_rate_len, subsample, l_min, l_rng, rng_seed, motion_smoothness, ...
//! [sensor]      # thresholds, t_ref, mismatch_sigma, noise_rate, cutoff_hz, flush_on_bias_change, rng_seed
//! [controller]  # num_thresholds, channels, kernel, gru_kernel, prev_mask_features, init_seed
//! [recon]       # num_thresholds, base_channels, init_seed
//! [train]       # lr, lr_halve_at, total_iters, batch, bins, crop, tau_sm, lambda_max, seed, mask_source, ...
//! [toy]         # height, width, bins, subsample, scenes, amplitudes, speed, thresholds
//! [experiment]  # policies = ["fixed:0", "random", "learned:0.5", "governed:0.3"], seeds, hotswap_match
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControllerConfig;
use crate::harness::{ExperimentSpec, ToyCorpus};
use crate::recon::ReconConfig;
use crate::scene::SceneConfig;
use crate::sensor::SensorConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub scene: SceneConfig,
    pub sensor: SensorConfig,
    pub controller: ControllerConfig,
    pub recon: ReconConfig,
    pub train: TrainConfig,
    pub toy: ToyCorpus,
    pub experiment: ExperimentSpec,
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serialises")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.controller.validate()?;
        self.train.validate()?;
        self.experiment.validate()?;
        let nc = self.sensor.num_thresholds();
        if self.controller.num_thresholds != nc || self.recon.num_thresholds != nc {
            return Err(Error::Config(format!(
                "controller ({}) and reconstructor ({}) must cover the sensor's {nc} thresholds",
                self.controller.num_thresholds, self.recon.num_thresholds
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(LabConfig::from_toml("").unwrap(), LabConfig::default());
    }

    #[test]
    fn roundtrip_keeps_hash() {
        let cfg = LabConfig::from_toml("[train]\nlr = 0.001\nmask_source = \"mixed\"\n").unwrap();
        let back = LabConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), LabConfig::default().hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn unknown_keys_and_mismatches_are_rejected() {
        assert!(LabConfig::from_toml("[trian]\nlr = 1\n").is_err());
        assert!(LabConfig::from_toml("[sensor]\nthresholds = [1.15, 1.7]\n").is_err());
        let ok = "[sensor]\nthresholds = [1.15, 1.7]\n[controller]\nnum_thresholds = 2\n[recon]\nnum_thresholds = 2\n";
        assert!(LabConfig::from_toml(ok).is_ok());
    }

    #[test]
    fn policies_parse_from_strings() {
        let cfg = LabConfig::from_toml("[experiment]\npolicies = [\"fixed:1\", \"governed:0.4\"]\nseeds = [3]\n").unwrap();
        assert_eq!(cfg.experiment.policies[1].to_string(), "governed:0.4");
    }
}
