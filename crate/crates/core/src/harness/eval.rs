use crate::control::{one_hot, rollout_on_stacks, Policy};
use crate::metrics::{quality, QualityReport};
use crate::recon::Reconstruct;
use crate::sensor::seeded_stream;
use crate::trainer::Sample;
use crate::{Error, Result};

/// Outcome of one policy over a set of scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEval {
    pub policy: String,
    /// Mean fused count per pixel per bin.
    pub rate: f64,
    pub quality: QualityReport,
}

/// Roll `policy` over every sample's pre-simulated stacks and reconstruct
/// the fused stream. Sample `i` draws from stream `i` of `seed`.
pub fn evaluate_stacks(policy: &mut dyn Policy, recon: &mut dyn Reconstruct, samples: &[Sample], seed: u64) -> Result<PolicyEval> {
    if samples.is_empty() {
        return Err(Error::Config("no evaluation scenes".into()));
    }
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let (mut count, mut pixels) = (0.0, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = seeded_stream(seed, i as u64);
        let r = rollout_on_stacks(policy, &s.d, &s.c, &mut rng)?;
        count += r.c.sum();
        pixels += r.c.len();
        recon.reset();
        for (t, sel) in r.selection.iter().enumerate() {
            preds.push(recon.step(&r.d.index0(t), &one_hot(sel, s.num_thresholds()))?);
            gts.push(s.gt_frame(t));
        }
    }
    Ok(PolicyEval {
        policy: policy.name(),
        rate: count / pixels as f64,
        quality: quality(&preds, &gts)?,
    })
}

/// Mean count per pixel per bin of threshold `j` held fixed.
pub fn fixed_rate(samples: &[Sample], j: usize) -> f64 {
    let total: f64 = samples.iter().map(|s| s.c[j].sum()).sum();
    let n: usize = samples.iter().map(|s| s.c[j].len()).sum();
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
