use rand_chacha::ChaCha8Rng;

use super::{cadence_gate, Observation, Policy};
use crate::{Error, Result, Tensor};

/// A policy run over precomputed per-threshold tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Threshold index per bin and column.
    pub selection: Vec<Vec<usize>>,
    /// Fused `[T, H, W]` tensors.
    pub d: Tensor,
    pub c: Tensor,
}

/// Replay `policy` on per-threshold `[T, H, W]` stacks: at every cadence bin
/// it sees the previous fused bin and picks the columns for the next window.
pub fn rollout_on_stacks(policy: &mut dyn Policy, d_stack: &[Tensor], c_stack: &[Tensor], rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let shape = d_stack
        .first()
        .ok_or_else(|| Error::Contract("empty threshold stack".into()))?
        .shape()
        .to_vec();
    let [bins, h, w] = shape[..] else {
        return Err(Error::Contract(format!("stack entries must be [T, H, W], got {shape:?}")));
    };
    if d_stack.len() != c_stack.len() || d_stack.iter().chain(c_stack).any(|t| t.shape() != shape) {
        return Err(Error::Contract("threshold stacks disagree in shape".into()));
    }
    policy.reset();
    let plane = h * w;
    let mut selection: Vec<Vec<usize>> = Vec::with_capacity(bins);
    let mut d = vec![0.0; bins * plane];
    let mut c = vec![0.0; bins * plane];
    let mut current = vec![0; w];
    let zeros = Tensor::zeros(&[h, w]);
    for t in 0..bins {
        if cadence_gate(t) {
            let (dp, cp) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                let r = (t - 1) * plane..t * plane;
                (Tensor::new(&[h, w], d[r.clone()].to_vec())?, Tensor::new(&[h, w], c[r].to_vec())?)
            };
            let obs = Observation { bin: t, d_prev: &dp, c_prev: &cp, prev_selection: &current };
            let next = policy.decide(&obs, rng)?;
            if next.len() != w || next.iter().any(|&j| j >= d_stack.len()) {
                return Err(Error::Contract(format!("policy {} returned an invalid selection", policy.name())));
            }
            current = next;
        }
        for i in 0..plane {
            let j = current[i % w];
            d[t * plane + i] = d_stack[j].data()[t * plane + i];
            c[t * plane + i] = c_stack[j].data()[t * plane + i];
        }
        policy.observe(t, &Tensor::new(&[h, w], c[t * plane..(t + 1) * plane].to_vec())?, &current);
        selection.push(current.clone());
    }
    Ok(Rollout {
        selection,
        d: Tensor::new(&shape, d)?,
        c: Tensor::new(&shape, c)?,
    })
}
