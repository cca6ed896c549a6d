use evslab_autograd::{Graph, ParamSet, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Reconstruct;
use crate::init::uniform_fan_in;
use crate::{error::config, Error, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub num_thresholds: usize,
    /// Channels after the first encoder block; the bottleneck has twice as many.
    pub base_channels: usize,
    pub init_seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            num_thresholds: 5,
            base_channels: 20,
            init_seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn in_channels(&self) -> usize {
        self.num_thresholds + 1
    }
}

const E1W: usize = 0;
const E1B: usize = 1;
const E2W: usize = 2;
const E2B: usize = 3;
const GZW: usize = 4;
const GZB: usize = 5;
const GRW: usize = 6;
const GRB: usize = 7;
const GCW: usize = 8;
const GCB: usize = 9;
const D1W: usize = 10;
const D1B: usize = 11;
const D2W: usize = 12;
const D2B: usize = 13;
const HW: usize = 14;
const HB: usize = 15;

/// Two strided encoder blocks, a convolutional GRU bottleneck, two
/// upsampling decoder blocks with skips, and a sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconNet {
    cfg: ReconConfig,
    params: ParamSet,
}

/// Bottleneck activations `[2·base, ⌈H/4⌉, ⌈W/4⌉]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconState {
    pub hidden: Option<Tensor>,
}

/// Stack `[H, W]` events and the `[N_c, W]` mask broadcast over rows into `[N_c + 1, H, W]`.
pub fn recon_input_graph(g: &mut Graph, d: Var, mask: Var) -> Result<Var> {
    let (h, w) = match g.shape(d) {
        [h, w] => (*h, *w),
        s => return Err(Error::Contract(format!("D̃ must be [H, W], got {s:?}"))),
    };
    if g.shape(mask).len() != 2 || g.shape(mask)[1] != w {
        return Err(Error::Contract(format!("mask {:?} does not match width {w}", g.shape(mask))));
    }
    let d3 = g.reshape(d, &[1, h, w])?;
    let m3 = g.broadcast_rows(mask, h)?;
    Ok(g.concat0(&[d3, m3])?)
}

impl ReconNet {
    pub fn new(cfg: ReconConfig) -> Result<Self> {
        if cfg.base_channels == 0 || cfg.num_thresholds == 0 {
            return Err(config("reconstructor needs base_channels >= 1 and N_c >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (ci, c1) = (cfg.in_channels(), cfg.base_channels);
        let c2 = 2 * c1;
        let mut p = ParamSet::new();
        let mut conv = |p: &mut ParamSet, name: &str, co: usize, cin: usize, k: usize, gain: f64| {
            p.push(format!("recon.{name}.w"), uniform_fan_in(&[co, cin, k, k], cin * k * k, gain, &mut rng));
            p.push(format!("recon.{name}.b"), Tensor::zeros(&[co]));
        };
        conv(&mut p, "enc1", c1, ci, 3, 1.0);
        conv(&mut p, "enc2", c2, c1, 3, 1.0);
        for gate in ["z", "r", "c"] {
            conv(&mut p, &format!("gru.{gate}"), c2, 2 * c2, 3, 0.5);
        }
        conv(&mut p, "dec1", c1, c2 + c1, 3, 1.0);
        conv(&mut p, "dec2", c1, c1 + ci, 3, 1.0);
        conv(&mut p, "head", 1, c1, 1, 0.5);
        Ok(Self { cfg, params: p })
    }

    pub fn from_params(cfg: ReconConfig, params: &ParamSet) -> Result<Self> {
        let mut n = Self::new(cfg)?;
        n.params.load_from(params).map_err(Error::Config)?;
        if !n.params.all_finite() {
            return Err(Error::Numeric("reconstructor weights contain non-finite values".into()));
        }
        Ok(n)
    }

    pub fn config(&self) -> &ReconConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// One step on the graph. `input` is `[N_c + 1, H, W]`; frames are
    /// zero-padded to multiples of 4 internally. Returns the `[H, W]` frame
    /// and the new hidden state.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], input: Var, hidden: Option<Var>) -> Result<(Var, Var)> {
        let (ci, h, w) = match g.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::Contract(format!("input must be [C, H, W], got {s:?}"))),
        };
        if ci != self.cfg.in_channels() {
            return Err(Error::Contract(format!("input has {ci} channels, expected {}", self.cfg.in_channels())));
        }
        if h == 0 || w == 0 {
            return Err(Error::Contract("empty frame".into()));
        }
        let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
        let input = if (ph, pw) == (h, w) { input } else { g.fit_hw(input, ph, pw)? };
        let c2 = 2 * self.cfg.base_channels;
        let e1 = g.conv2d(input, p[E1W], Some(p[E1B]), 2, (1, 1))?;
        let e1 = g.relu(e1);
        let e2 = g.conv2d(e1, p[E2W], Some(p[E2B]), 2, (1, 1))?;
        let e2 = g.relu(e2);
        let hs = match hidden {
            Some(v) => v,
            None => g.constant(Tensor::zeros(&[c2, ph / 4, pw / 4])),
        };
        let xh = g.concat0(&[e2, hs])?;
        let z = g.conv2d(xh, p[GZW], Some(p[GZB]), 1, (1, 1))?;
        let z = g.sigmoid(z);
        let r = g.conv2d(xh, p[GRW], Some(p[GRB]), 1, (1, 1))?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, hs)?;
        let xrh = g.concat0(&[e2, rh])?;
        let cand = g.conv2d(xrh, p[GCW], Some(p[GCB]), 1, (1, 1))?;
        let cand = g.tanh(cand);
        let diff = g.sub(cand, hs)?;
        let upd = g.mul(z, diff)?;
        let h_new = g.add(hs, upd)?;
        let u1 = g.upsample2x(h_new)?;
        let u1 = g.concat0(&[u1, e1])?;
        let d1 = g.conv2d(u1, p[D1W], Some(p[D1B]), 1, (1, 1))?;
        let d1 = g.relu(d1);
        let u2 = g.upsample2x(d1)?;
        let u2 = g.concat0(&[u2, input])?;
        let d2 = g.conv2d(u2, p[D2W], Some(p[D2B]), 1, (1, 1))?;
        let d2 = g.relu(d2);
        let out = g.conv2d(d2, p[HW], Some(p[HB]), 1, (0, 0))?;
        let out = g.sigmoid(out);
        let out = if (ph, pw) == (h, w) { out } else { g.fit_hw(out, h, w)? };
        let frame = g.reshape(out, &[h, w])?;
        Ok((frame, h_new))
    }

    /// Value-only step.
    pub fn forward(&self, d: &Tensor, mask: &Tensor, state: &ReconState) -> Result<(Tensor, ReconState)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let vd = g.constant(d.clone());
        let vm = g.constant(mask.clone());
        let input = recon_input_graph(&mut g, vd, vm)?;
        let h = state.hidden.as_ref().map(|t| g.constant(t.clone()));
        let (frame, h_new) = self.forward_graph(&mut g, &p, input, h)?;
        Ok((g.value(frame).clone(), ReconState { hidden: Some(g.value(h_new).clone()) }))
    }
}

/// [`ReconNet`] with its own recurrent state.
#[derive(Clone, Debug)]
pub struct RecurrentReconstructor {
    pub net: ReconNet,
    state: ReconState,
}

impl RecurrentReconstructor {
    pub fn new(net: ReconNet) -> Self {
        Self { net, state: ReconState::default() }
    }

    pub fn state(&self) -> &ReconState {
        &self.state
    }
}

impl Reconstruct for RecurrentReconstructor {
    fn reset(&mut self) {
        self.state = ReconState::default();
    }

    fn step(&mut self, d: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (f, s) = self.net.forward(d, mask, &self.state)?;
        self.state = s;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::one_hot;

    fn small() -> ReconConfig {
        ReconConfig { num_thresholds: 2, base_channels: 3, init_seed: 4 }
    }

    fn pattern(h: usize, w: usize, phase: f64) -> Tensor {
        Tensor::new(&[h, w], (0..h * w).map(|i| ((i as f64) * 0.61 + phase).sin()).collect()).unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let net = ReconNet::new(small()).unwrap();
        let (f, s) = net.forward(&pattern(8, 12, 0.0), &one_hot(&[0; 12], 2), &ReconState::default()).unwrap();
        assert_eq!(f.shape(), &[8, 12]);
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(s.hidden.unwrap().shape(), &[6, 2, 3]);
    }

    #[test]
    fn zero_weights_give_half_grey() {
        let mut net = ReconNet::new(small()).unwrap();
        for t in net.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (f, _) = net.forward(&pattern(4, 4, 1.0), &one_hot(&[1; 4], 2), &ReconState::default()).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn deterministic_and_markov() {
        let net = ReconNet::new(small()).unwrap();
        let m = one_hot(&[0, 1, 0, 1, 1, 0, 0, 1], 2);
        let inputs: Vec<Tensor> = (0..4).map(|k| pattern(8, 8, k as f64)).collect();
        let run = |n: usize| {
            let mut r = RecurrentReconstructor::new(net.clone());
            let mut last = None;
            for d in &inputs[..n] {
                last = Some(r.step(d, &m).unwrap());
            }
            (last.unwrap(), r.state().clone())
        };
        assert_eq!(run(4), run(4));
        // replaying a prefix reproduces the state exactly
        let (_, s2) = run(2);
        let (f_a, _) = net.forward(&inputs[2], &m, &s2).unwrap();
        let mut r = RecurrentReconstructor::new(net.clone());
        r.step(&inputs[0], &m).unwrap();
        r.step(&inputs[1], &m).unwrap();
        assert_eq!(r.step(&inputs[2], &m).unwrap(), f_a);
    }

    #[test]
    fn channel_contract_and_unaligned_sizes() {
        let net = ReconNet::new(small()).unwrap();
        let bad_mask = one_hot(&[0; 8], 3);
        assert!(matches!(net.forward(&pattern(8, 8, 0.0), &bad_mask, &ReconState::default()), Err(Error::Contract(_))));
        let (f, s) = net.forward(&pattern(6, 1, 0.0), &one_hot(&[0], 2), &ReconState::default()).unwrap();
        assert_eq!(f.shape(), &[6, 1]);
        assert_eq!(s.hidden.unwrap().shape(), &[6, 2, 1]);
    }

    #[test]
    fn default_size_is_about_a_hundred_thousand_parameters() {
        let n = ReconNet::new(ReconConfig::default()).unwrap().params().num_scalars();
        assert!((80_000..130_000).contains(&n), "{n}");
    }
}
