//! Alternating optimisation of the reconstructor (θ) and the controller (ψ).
//!
//! θ-steps run the reconstructor on hard-fused event tensors. ψ-steps roll
//! the controller with Gumbel-Softmax masks, fuse the per-threshold stacks
//! with those relaxed masks, and back-propagate the image loss plus the
//! λ-weighted rate term through a frozen reconstructor.

mod data;
mod steps;

pub use data::Sample;
pub use steps::{control_objective, control_step, recon_step, rollout_selection, ObjectiveParts};

use std::path::Path;

use evslab_autograd::{write_archive, Adam, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::Controller;
use crate::recon::ReconNet;
use crate::{error::config, Result, CADENCE};

/// Where the hard masks of θ-steps come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// The current controller at a random λ.
    #[default]
    Controller,
    /// Random-Dirichlet control.
    Random,
    /// Alternate between the two, one sample at a time.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halve_at: usize,
    pub total_iters: usize,
    pub batch: usize,
    /// Sequence length `T_l` in bins.
    pub bins: usize,
    /// Side of the square spatial crop.
    pub crop: usize,
    pub tau_sm: f64,
    pub lambda_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub mask_source: MaskSource,
    /// Concentration of the random-control baseline.
    pub dirichlet_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            lr_halve_at: 40_000,
            total_iters: 75_000,
            batch: 7,
            bins: 64,
            crop: 96,
            tau_sm: 0.5f64.exp(),
            lambda_max: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 5_000,
            mask_source: MaskSource::Controller,
            dirichlet_alpha: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.tau_sm, self.beta1, self.beta2, self.eps, self.dirichlet_alpha];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || !(self.lambda_max >= 0.0) {
            return Err(config("learning rate, temperature, Adam constants and alpha must be positive"));
        }
        if self.batch == 0 || self.bins == 0 || self.crop == 0 {
            return Err(config("batch, bins and crop must be positive"));
        }
        if !self.bins.is_multiple_of(CADENCE) {
            return Err(config(format!("T_l = {} must be a multiple of {CADENCE}", self.bins)));
        }
        Ok(())
    }

    /// Learning rate in effect at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter >= self.lr_halve_at {
            self.lr * 0.5
        } else {
            self.lr
        }
    }
}

/// Loss terms of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub image_loss: f64,
    /// `Σ_t B(C̃_t)`.
    pub rate_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    /// θ-step image loss.
    pub image_loss: f64,
    /// ψ-step rate term.
    pub rate_loss: f64,
    pub lambda: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub controller: Controller,
    pub recon: ReconNet,
    pub log: Vec<LogRow>,
}

/// SHA-256 over parameter names, shapes and values.
pub fn param_hash(p: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in p.zip_entries() {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Write both networks as weight archives under `dir`.
pub fn save_checkpoint(dir: &Path, tag: &str, controller: &Controller, recon: &ReconNet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = |v: serde_json::Value| v.as_object().cloned().unwrap_or_default();
    write_archive(
        &dir.join(format!("controller{tag}.bin")),
        controller.params(),
        meta(serde_json::to_value(controller.config()).expect("serialisable")),
    )?;
    write_archive(
        &dir.join(format!("recon{tag}.bin")),
        recon.params(),
        meta(serde_json::to_value(recon.config()).expect("serialisable")),
    )?;
    Ok(())
}

/// Interleave one θ-step and one ψ-step per iteration.
pub fn alternate_train(
    dataset: &[Sample],
    cfg: &TrainConfig,
    mut controller: Controller,
    mut recon: ReconNet,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(config("training dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_r = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_c = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut log = Vec::with_capacity(cfg.total_iters);
    for iter in 0..cfg.total_iters {
        let lr = cfg.lr_at(iter);
        opt_r.lr = lr;
        opt_c.lr = lr;
        let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<Sample>> {
            (0..cfg.batch)
                .map(|_| dataset[rng.random_range(0..dataset.len())].random_crop(cfg.bins, cfg.crop, rng))
                .collect()
        };
        let batch = draw(&mut rng)?;
        let image_loss = recon_step(&mut recon, &mut opt_r, &controller, &batch, cfg, &mut rng)?;
        let batch = draw(&mut rng)?;
        let report = control_step(&mut controller, &recon, &mut opt_c, &batch, cfg, &mut rng)?;
        log.push(LogRow {
            iter,
            image_loss,
            rate_loss: report.rate_loss,
            lambda: report.lambda,
            lr,
        });
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(dir, &format!("_{:06}", iter + 1), &controller, &recon)?;
            }
        }
    }
    Ok(TrainOutcome { controller, recon, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_halves_on_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(39_999), 5e-4);
        assert_eq!(cfg.lr_at(40_000), 2.5e-4);
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { bins: 10, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }
}
