use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{featurize, one_hot, sample_mask, ControlProbs, Controller, ControllerState, Observation, Policy};
use crate::{error::config, Error, Result};

/// The same threshold on every column, always.
#[derive(Clone, Debug)]
pub struct FixedPolicy {
    pub index: usize,
}

impl Policy for FixedPolicy {
    fn name(&self) -> String {
        format!("fixed:{}", self.index)
    }

    fn reset(&mut self) {}

    fn decide(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        Ok(vec![self.index; obs.width()])
    }
}

/// Draws a threshold distribution from a symmetric Dirichlet once per
/// sequence, then samples every column independently from it at every window.
#[derive(Clone, Debug)]
pub struct RandomDirichletPolicy {
    pub alpha: f64,
    pub num_thresholds: usize,
    dist: Option<Vec<f64>>,
}

impl RandomDirichletPolicy {
    pub fn new(alpha: f64, num_thresholds: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() || num_thresholds == 0 {
            return Err(config(format!("Dirichlet needs finite alpha > 0 and N_c >= 1, got {alpha}, {num_thresholds}")));
        }
        Ok(Self { alpha, num_thresholds, dist: None })
    }

    /// Sequence-level distribution, once drawn.
    pub fn distribution(&self) -> Option<&[f64]> {
        self.dist.as_deref()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let gamma = Gamma::new(self.alpha, 1.0).expect("validated alpha");
        loop {
            let g: Vec<f64> = (0..self.num_thresholds).map(|_| gamma.sample(rng)).collect();
            let s: f64 = g.iter().sum();
            // tiny alpha can underflow every component
            if s > 0.0 && s.is_finite() {
                return g.iter().map(|v| v / s).collect();
            }
        }
    }
}

impl Policy for RandomDirichletPolicy {
    fn name(&self) -> String {
        format!("random:{}", self.alpha)
    }

    fn reset(&mut self) {
        self.dist = None;
    }

    fn decide(&mut self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.dist.is_none() {
            self.dist = Some(self.draw(rng));
        }
        let dist = self.dist.as_ref().expect("drawn");
        let w = obs.width();
        let mut p = crate::Tensor::zeros(&[self.num_thresholds, w]);
        for (j, &q) in dist.iter().enumerate() {
            p.data_mut()[j * w..(j + 1) * w].iter_mut().for_each(|v| *v = q);
        }
        sample_mask(&p, rng)
    }
}

/// One global threshold index stepped up when the smoothed rate exceeds the
/// target and down when it falls below.
#[derive(Clone, Debug)]
pub struct RateProportionalPolicy {
    /// Mean events per pixel per bin.
    pub target: f64,
    pub num_thresholds: usize,
    /// Weight of the newest observation in the moving average.
    pub smoothing: f64,
    ema: Option<f64>,
    index: usize,
}

impl RateProportionalPolicy {
    pub fn new(target: f64, num_thresholds: usize) -> Result<Self> {
        if !(target >= 0.0) || num_thresholds == 0 {
            return Err(config("rate-proportional policy needs a non-negative target and N_c >= 1"));
        }
        Ok(Self {
            target,
            num_thresholds,
            smoothing: 0.8,
            ema: None,
            index: 0,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

impl Policy for RateProportionalPolicy {
    fn name(&self) -> String {
        format!("prop:{}", self.target)
    }

    fn reset(&mut self) {
        self.ema = None;
        self.index = 0;
    }

    fn decide(&mut self, obs: &Observation<'_>, _rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if obs.bin > 0 {
            let r = obs.rate();
            let e = match self.ema {
                None => r,
                Some(prev) => (1.0 - self.smoothing) * prev + self.smoothing * r,
            };
            self.ema = Some(e);
            if e > self.target {
                self.index = (self.index + 1).min(self.num_thresholds - 1);
            } else if e < self.target {
                self.index = self.index.saturating_sub(1);
            }
        }
        Ok(vec![self.index; obs.width()])
    }
}

/// The recurrent controller at a given rate weight λ, sampling hard masks.
#[derive(Clone, Debug)]
pub struct LearnedPolicy {
    pub controller: Controller,
    pub lambda: f64,
    state: ControllerState,
}

impl LearnedPolicy {
    pub fn new(controller: Controller, lambda: f64) -> Self {
        Self { controller, lambda, state: ControllerState::default() }
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Probabilities the controller would output at `lambda`, without
    /// advancing its recurrent state.
    pub fn probe(&self, obs: &Observation<'_>, lambda: f64) -> Result<(ControlProbs, ControllerState)> {
        let cfg = self.controller.config();
        let nc = cfg.num_thresholds;
        if let Some(&j) = obs.prev_selection.iter().find(|&&j| j >= nc) {
            return Err(Error::Contract(format!("previous selection index {j} outside {nc} thresholds")));
        }
        // nothing was selected before the first bin
        let mask = cfg.prev_mask_features.then(|| {
            if obs.bin == 0 {
                crate::Tensor::zeros(&[nc, obs.width()])
            } else {
                one_hot(obs.prev_selection, nc)
            }
        });
        let features = featurize(obs.d_prev, obs.c_prev, mask.as_ref(), lambda)?;
        self.controller.forward(&features, &self.state)
    }

    /// Advance the recurrent state to one returned by [`probe`](Self::probe).
    pub fn commit(&mut self, state: ControllerState) {
        self.state = state;
    }
}

impl Policy for LearnedPolicy {
    fn name(&self) -> String {
        format!("learned:{}", self.lambda)
    }

    fn reset(&mut self) {
        self.state = ControllerState::default();
    }

    fn decide(&mut self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let (p, s) = self.probe(obs, self.lambda)?;
        self.commit(s);
        sample_mask(p.tensor(), rng)
    }
}
