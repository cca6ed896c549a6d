//! Per-column threshold selection: probability tensors, mask sampling, the
//! learned recurrent controller and the baseline policies.
//!
//! Rates throughout are mean `C` per pixel per bin.

mod baselines;
mod features;
mod gumbel;
mod net;
mod rollout;

pub use baselines::{FixedPolicy, LearnedPolicy, RandomDirichletPolicy, RateProportionalPolicy};
pub use features::{featurize, featurize_graph, BASE_FEATURES};
pub use gumbel::{gumbel_softmax, gumbel_softmax_graph, sample_gumbel};
pub use net::{Controller, ControllerConfig, ControllerState};
pub use rollout::{rollout_on_stacks, Rollout};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor, CADENCE};

const SIMPLEX_TOL: f64 = 1e-6;

/// `[N_c, W]` per-column categorical distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProbs(Tensor);

impl ControlProbs {
    pub fn new(p: Tensor) -> Result<Self> {
        let [nc, w] = p.shape() else {
            return Err(Error::Distribution(format!("probabilities must be [N_c, W], got {:?}", p.shape())));
        };
        for x in 0..*w {
            let col: Vec<f64> = (0..*nc).map(|j| p.data()[j * w + x]).collect();
            if col.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Distribution(format!("column {x} has invalid mass {col:?}")));
            }
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Distribution(format!("column {x} sums to {s}")));
            }
        }
        Ok(Self(p))
    }

    pub fn uniform(nc: usize, w: usize) -> Self {
        Self(Tensor::full(&[nc, w], 1.0 / nc as f64))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn num_thresholds(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn get(&self, j: usize, x: usize) -> f64 {
        self.0.data()[j * self.width() + x]
    }

    /// Column-averaged probability of every threshold.
    pub fn column_mean(&self) -> Vec<f64> {
        let w = self.width();
        (0..self.num_thresholds())
            .map(|j| self.0.data()[j * w..(j + 1) * w].iter().sum::<f64>() / w as f64)
            .collect()
    }

    /// Expected threshold index averaged over columns.
    pub fn expected_index(&self) -> f64 {
        self.column_mean().iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }
}

/// Whether thresholds may change at this bin.
pub fn cadence_gate(bin: usize) -> bool {
    bin.is_multiple_of(CADENCE)
}

/// Independent categorical draw for every column.
pub fn sample_mask<R: Rng + ?Sized>(p: &Tensor, rng: &mut R) -> Result<Vec<usize>> {
    let probs = ControlProbs::new(p.clone())?;
    let (nc, w) = (probs.num_thresholds(), probs.width());
    Ok((0..w)
        .map(|x| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for j in 0..nc {
                acc += probs.get(j, x);
                if u < acc {
                    return j;
                }
            }
            // rounding left `u` above the cumulative sum: take the last nonzero entry
            (0..nc).rev().find(|&j| probs.get(j, x) > 0.0).unwrap_or(nc - 1)
        })
        .collect())
}

/// `[N_c, W]` one-hot tensor of a column selection.
pub fn one_hot(selection: &[usize], nc: usize) -> Tensor {
    let w = selection.len();
    let mut t = Tensor::zeros(&[nc, w]);
    for (x, &j) in selection.iter().enumerate() {
        t.data_mut()[j * w + x] = 1.0;
    }
    t
}

/// What a policy sees at a decision bin: the fused tensors of the previous
/// bin (zeros before the first bin) and the selection active during it.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub bin: usize,
    pub d_prev: &'a Tensor,
    pub c_prev: &'a Tensor,
    pub prev_selection: &'a [usize],
}

impl Observation<'_> {
    pub fn width(&self) -> usize {
        self.prev_selection.len()
    }

    /// Mean events per pixel in the previous bin.
    pub fn rate(&self) -> f64 {
        if self.c_prev.is_empty() {
            0.0
        } else {
            self.c_prev.sum() / self.c_prev.len() as f64
        }
    }
}

/// A threshold-selection rule, consulted at every cadence bin.
pub trait Policy {
    fn name(&self) -> String;
    /// Forget per-sequence state before a new sequence.
    fn reset(&mut self);
    fn decide(&mut self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;
    /// Sees the fused count of every bin once it is complete.
    fn observe(&mut self, _bin: usize, _c: &Tensor, _selection: &[usize]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cadence_every_fourth_bin() {
        let open: Vec<usize> = (0..8).filter(|&b| cadence_gate(b)).collect();
        assert_eq!(open, vec![0, 4]);
        assert!(!cadence_gate(1) && !cadence_gate(2) && !cadence_gate(3));
    }

    #[test]
    fn degenerate_column_always_picks_its_mass() {
        let mut p = Tensor::zeros(&[5, 3]);
        for x in 0..3 {
            p.data_mut()[x] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_mask(&p, &mut rng).unwrap(), vec![0, 0, 0]);
        }
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let nc = 5;
        let p = ControlProbs::uniform(nc, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        for _ in 0..100 {
            for j in sample_mask(p.tensor(), &mut rng).unwrap() {
                counts[j] += 1;
            }
        }
        let n = 100_000.0;
        let q = 1.0 / nc as f64;
        let sd = (n * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - n * q).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let p = ControlProbs::uniform(3, 40);
        let a = sample_mask(p.tensor(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mask(p.tensor(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_columns_are_distribution_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nan = Tensor::new(&[2, 1], vec![f64::NAN, 1.0]).unwrap();
        let neg = Tensor::new(&[2, 1], vec![-0.5, 1.5]).unwrap();
        let short = Tensor::new(&[2, 1], vec![0.2, 0.2]).unwrap();
        for p in [nan, neg, short] {
            assert!(matches!(sample_mask(&p, &mut rng), Err(Error::Distribution(_))));
        }
    }

    #[test]
    fn one_hot_roundtrip() {
        let t = one_hot(&[2, 0, 1], 3);
        assert_eq!(crate::binning::mask_indices(&t).unwrap(), vec![2, 0, 1]);
    }
}
