use evslab_autograd::{Graph, ParamSet, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::BASE_FEATURES;
use super::ControlProbs;
use crate::init::uniform_fan_in;
use crate::{error::config, Error, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub num_thresholds: usize,
    /// Width of both conv layers and of the recurrent state.
    pub channels: usize,
    pub kernel: usize,
    pub gru_kernel: usize,
    /// Feed the previous mask as `N_c` extra input channels.
    pub prev_mask_features: bool,
    pub init_seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            num_thresholds: 5,
            channels: 32,
            kernel: 5,
            gru_kernel: 3,
            prev_mask_features: true,
            init_seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn in_channels(&self) -> usize {
        BASE_FEATURES + if self.prev_mask_features { self.num_thresholds } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_thresholds < 1 || self.channels < 1 {
            return Err(config("controller needs at least one threshold and one channel"));
        }
        if self.kernel.is_multiple_of(2) || self.gru_kernel.is_multiple_of(2) {
            return Err(config("controller kernels must be odd"));
        }
        Ok(())
    }
}

// parameter slots, in push order
const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const WZ: usize = 4;
const BZ: usize = 5;
const WR: usize = 6;
const BR: usize = 7;
const WC: usize = 8;
const BC: usize = 9;
const WO: usize = 10;
const BO: usize = 11;

/// Two 1D convolutions, a convolutional GRU over columns, and a 1×1 head to
/// per-column threshold logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    cfg: ControllerConfig,
    params: ParamSet,
}

/// Recurrent activations `[channels, W]`; `None` before the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ControllerState {
    pub hidden: Option<Tensor>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (ci, ch, k, kg, nc) = (cfg.in_channels(), cfg.channels, cfg.kernel, cfg.gru_kernel, cfg.num_thresholds);
        let mut p = ParamSet::new();
        p.push("ctrl.conv1.w", uniform_fan_in(&[ch, ci, k], ci * k, 1.0, &mut rng));
        p.push("ctrl.conv1.b", Tensor::zeros(&[ch]));
        p.push("ctrl.conv2.w", uniform_fan_in(&[ch, ch, k], ch * k, 1.0, &mut rng));
        p.push("ctrl.conv2.b", Tensor::zeros(&[ch]));
        for gate in ["z", "r", "c"] {
            p.push(format!("ctrl.gru.{gate}.w"), uniform_fan_in(&[ch, 2 * ch, kg], 2 * ch * kg, 0.5, &mut rng));
            p.push(format!("ctrl.gru.{gate}.b"), Tensor::zeros(&[ch]));
        }
        p.push("ctrl.head.w", uniform_fan_in(&[nc, ch, 1], ch, 0.1, &mut rng));
        p.push("ctrl.head.b", Tensor::zeros(&[nc]));
        Ok(Self { cfg, params: p })
    }

    /// Rebuild from stored parameters, checking names and shapes.
    pub fn from_params(cfg: ControllerConfig, params: &ParamSet) -> Result<Self> {
        let mut c = Self::new(cfg)?;
        c.params.load_from(params).map_err(Error::Config)?;
        if !c.params.all_finite() {
            return Err(Error::Numeric("controller weights contain non-finite values".into()));
        }
        Ok(c)
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// One recurrent step on the graph. `p` are the bound parameters,
    /// `features` is `[in_channels, W]`. Returns logits `[N_c, W]` and the new hidden state.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], features: Var, hidden: Option<Var>) -> Result<(Var, Var)> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 2 || shape[0] != self.cfg.in_channels() {
            return Err(Error::Contract(format!(
                "controller expects [{}, W] features, got {shape:?}",
                self.cfg.in_channels()
            )));
        }
        let w = shape[1];
        let h = match hidden {
            Some(h) => h,
            None => g.constant(Tensor::zeros(&[self.cfg.channels, w])),
        };
        let x = g.conv1d(features, p[W1], Some(p[B1]))?;
        let x = g.relu(x);
        let x = g.conv1d(x, p[W2], Some(p[B2]))?;
        let x = g.relu(x);
        let xh = g.concat0(&[x, h])?;
        let z = g.conv1d(xh, p[WZ], Some(p[BZ]))?;
        let z = g.sigmoid(z);
        let r = g.conv1d(xh, p[WR], Some(p[BR]))?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let xrh = g.concat0(&[x, rh])?;
        let cand = g.conv1d(xrh, p[WC], Some(p[BC]))?;
        let cand = g.tanh(cand);
        let diff = g.sub(cand, h)?;
        let step = g.mul(z, diff)?;
        let h_new = g.add(h, step)?;
        let logits = g.conv1d(h_new, p[WO], Some(p[BO]))?;
        Ok((logits, h_new))
    }

    /// Value-only step returning per-column probabilities.
    pub fn forward(&self, features: &Tensor, state: &ControllerState) -> Result<(ControlProbs, ControllerState)> {
        if !self.params.all_finite() {
            return Err(Error::Numeric("controller weights contain non-finite values".into()));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(features.clone());
        let h = state.hidden.as_ref().map(|t| g.constant(t.clone()));
        let (logits, h_new) = self.forward_graph(&mut g, &p, f, h)?;
        let probs = g.softmax0(logits)?;
        let out = ControlProbs::new(g.value(probs).clone())?;
        Ok((out, ControllerState { hidden: Some(g.value(h_new).clone()) }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ControllerConfig {
        ControllerConfig { num_thresholds: 3, channels: 4, ..ControllerConfig::default() }
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut c = Controller::new(small()).unwrap();
        for t in c.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let f = Tensor::full(&[13, 6], 0.7);
        let (p, _) = c.forward(&f, &ControllerState::default()).unwrap();
        assert!(p.tensor().data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn identical_columns_give_identical_probs() {
        let c = Controller::new(small()).unwrap();
        let f = Tensor::full(&[13, 24], 0.4);
        let (p, _) = c.forward(&f, &ControllerState::default()).unwrap();
        // interior columns see identical receptive fields
        for j in 0..3 {
            let row = &p.tensor().data()[j * 24..(j + 1) * 24];
            assert_eq!(row[11], row[12]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let c = Controller::new(small()).unwrap();
        let f = Tensor::new(&[13, 5], (0..65).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (p1, s1) = c.forward(&f, &ControllerState::default()).unwrap();
        let (p2, s2) = c.forward(&f, &ControllerState::default()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
        let (p3, _) = c.forward(&f, &s1).unwrap();
        let (p4, _) = c.forward(&f, &s2).unwrap();
        assert_eq!(p3, p4);
    }

    #[test]
    fn non_finite_weights_are_numeric_errors() {
        let mut c = Controller::new(small()).unwrap();
        c.params_mut().tensors_mut()[0].data_mut()[0] = f64::NAN;
        let f = Tensor::zeros(&[13, 4]);
        assert!(matches!(c.forward(&f, &ControllerState::default()), Err(Error::Numeric(_))));
    }

    #[test]
    fn feature_channel_count_is_checked() {
        let c = Controller::new(small()).unwrap();
        assert!(matches!(c.forward(&Tensor::zeros(&[10, 4]), &ControllerState::default()), Err(Error::Contract(_))));
    }
}
