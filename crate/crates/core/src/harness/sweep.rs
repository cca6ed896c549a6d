use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_stacks, fixed_rate, PolicyEval};
use crate::control::{Controller, FixedPolicy, LearnedPolicy, Policy, RandomDirichletPolicy, RateProportionalPolicy};
use crate::governor::{GovernedPolicy, LAMBDA_SEARCH_MAX};
use crate::recon::{ReconNet, Reconstruct, RecurrentReconstructor};
use crate::trainer::Sample;
use crate::{error::config, Error, Result};

/// A threshold policy by name: `fixed:J`, `random`, `random:ALPHA`,
/// `prop:RATE`, `learned:LAMBDA` or `governed:ALPHA`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Fixed(usize),
    Random(f64),
    Proportional(f64),
    Learned(f64),
    Governed(f64),
}

impl PolicySpec {
    pub fn needs_controller(&self) -> bool {
        matches!(self, Self::Learned(_) | Self::Governed(_))
    }

    pub fn build(&self, num_thresholds: usize, controller: Option<&Controller>) -> Result<Box<dyn Policy>> {
        let learned = || controller.cloned().ok_or_else(|| config(format!("policy `{self}` needs controller weights")));
        Ok(match *self {
            Self::Fixed(j) if j >= num_thresholds => return Err(config(format!("fixed index {j} outside {num_thresholds} thresholds"))),
            Self::Fixed(j) => Box::new(FixedPolicy { index: j }),
            Self::Random(a) => Box::new(RandomDirichletPolicy::new(a, num_thresholds)?),
            Self::Proportional(r) => Box::new(RateProportionalPolicy::new(r, num_thresholds)?),
            Self::Learned(l) => Box::new(LearnedPolicy::new(learned()?, l)),
            Self::Governed(a) => Box::new(GovernedPolicy::new(LearnedPolicy::new(learned()?, 0.0), a)?),
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(j) => write!(f, "fixed:{j}"),
            Self::Random(a) => write!(f, "random:{a}"),
            Self::Proportional(r) => write!(f, "prop:{r}"),
            Self::Learned(l) => write!(f, "learned:{l}"),
            Self::Governed(a) => write!(f, "governed:{a}"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = |default: Option<f64>| -> Result<f64> {
            if arg.is_empty() {
                return default.ok_or_else(|| config(format!("policy `{s}` needs an argument")));
            }
            arg.parse::<f64>().map_err(|_| config(format!("bad argument in policy `{s}`")))
        };
        match kind {
            "fixed" => arg.parse().map(Self::Fixed).map_err(|_| config(format!("bad index in policy `{s}`"))),
            "random" => Ok(Self::Random(num(Some(1.0))?)),
            "prop" => Ok(Self::Proportional(num(None)?)),
            "learned" => Ok(Self::Learned(num(None)?)),
            "governed" => Ok(Self::Governed(num(None)?)),
            _ => Err(config(format!("unknown policy `{s}`"))),
        }
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

/// What a sweep runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub policies: Vec<PolicySpec>,
    pub seeds: Vec<u64>,
    /// Index of the fixed threshold whose rate learned policies are matched
    /// to in the hot-swap table.
    pub hotswap_match: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            policies: vec![
                PolicySpec::Fixed(0),
                PolicySpec::Fixed(1),
                PolicySpec::Fixed(2),
                PolicySpec::Fixed(3),
                PolicySpec::Fixed(4),
                PolicySpec::Random(1.0),
            ],
            seeds: vec![0],
            hotswap_match: 2,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(config("experiment lists no policies"));
        }
        if self.seeds.is_empty() {
            return Err(config("experiment lists no seeds"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub seed: u64,
    pub rate: f64,
    /// Percent of the lowest fixed threshold's rate.
    pub norm_rate: f64,
    pub image_loss: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub l1: f64,
    /// Filled in by whoever writes the table.
    #[serde(default)]
    pub config_hash: String,
}

impl SweepRow {
    fn new(e: &PolicyEval, seed: u64, anchor: f64) -> Self {
        Self {
            policy: e.policy.clone(),
            seed,
            rate: e.rate,
            norm_rate: if anchor > 0.0 { 100.0 * e.rate / anchor } else { 0.0 },
            image_loss: e.quality.loss,
            ssim: e.quality.ssim,
            psnr: e.quality.psnr,
            l1: e.quality.l1,
            config_hash: String::new(),
        }
    }
}

/// Every policy on every seed over pre-simulated samples.
pub fn sweep_rate_quality(
    spec: &ExperimentSpec,
    samples: &[Sample],
    controller: Option<&Controller>,
    recon: &mut dyn Reconstruct,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let nc = samples.first().ok_or_else(|| config("no evaluation scenes"))?.num_thresholds();
    let anchor = fixed_rate(samples, 0);
    let mut rows = Vec::new();
    for p in &spec.policies {
        let mut policy = p.build(nc, controller)?;
        for &seed in &spec.seeds {
            let e = evaluate_stacks(policy.as_mut(), recon, samples, seed)?;
            rows.push(SweepRow { policy: p.to_string(), ..SweepRow::new(&e, seed, anchor) });
        }
    }
    Ok(rows)
}

/// Mean `(norm_rate, image_loss)` per policy, in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<(String, f64, f64)> {
    let mut out: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.0 == r.policy) {
            Some(o) => {
                o.1 += r.norm_rate;
                o.2 += r.image_loss;
                o.3 += 1;
            }
            None => out.push((r.policy.clone(), r.norm_rate, r.image_loss, 1)),
        }
    }
    out.into_iter().map(|(p, r, q, n)| (p, r / n as f64, q / n as f64)).collect()
}

/// Constant λ at which the learned policy's mean rate on `samples` meets
/// `target`, by bisection on `[0, LAMBDA_SEARCH_MAX]` assuming the rate
/// falls with λ.
pub fn match_lambda(controller: &Controller, recon: &mut dyn Reconstruct, samples: &[Sample], target: f64, seed: u64) -> Result<f64> {
    let mut rate = |l: f64| -> Result<f64> {
        Ok(evaluate_stacks(&mut LearnedPolicy::new(controller.clone(), l), recon, samples, seed)?.rate)
    };
    let (mut lo, mut hi) = (0.0, LAMBDA_SEARCH_MAX);
    if rate(lo)? <= target {
        return Ok(lo);
    }
    if rate(hi)? >= target {
        return Ok(hi);
    }
    for _ in 0..16 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotswapRow {
    pub name: String,
    pub lambda: Option<f64>,
    pub rate: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub l1: f64,
}

/// The learned controller with each reconstructor, at the λ matching the
/// rate of fixed threshold `match_index`, next to that fixed threshold with
/// the first reconstructor.
pub fn hotswap_eval(
    controller: &Controller,
    recons: &[(&str, &ReconNet)],
    samples: &[Sample],
    match_index: usize,
    seed: u64,
) -> Result<Vec<HotswapRow>> {
    let (_, first) = recons.first().ok_or_else(|| config("hot-swap needs a reconstructor"))?;
    if samples.is_empty() || match_index >= samples[0].num_thresholds() {
        return Err(config(format!("no fixed threshold {match_index} to match")));
    }
    let row = |name: String, lambda, e: PolicyEval| HotswapRow {
        name,
        lambda,
        rate: e.rate,
        ssim: e.quality.ssim,
        psnr: e.quality.psnr,
        l1: e.quality.l1,
    };
    let mut rr = RecurrentReconstructor::new((*first).clone());
    let fixed = evaluate_stacks(&mut FixedPolicy { index: match_index }, &mut rr, samples, seed)?;
    let target = fixed.rate;
    let mut rows = vec![row(format!("fixed:{match_index}"), None, fixed)];
    for (name, net) in recons {
        let mut rr = RecurrentReconstructor::new((*net).clone());
        let lambda = match_lambda(controller, &mut rr, samples, target, seed)?;
        let e = evaluate_stacks(&mut LearnedPolicy::new(controller.clone(), lambda), &mut rr, samples, seed)?;
        rows.push(row(format!("learned+{name}"), Some(lambda), e));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_roundtrip() {
        for s in ["fixed:3", "random:1", "prop:0.25", "learned:0.5", "governed:0.1"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
        assert_eq!("random".parse::<PolicySpec>().unwrap(), PolicySpec::Random(1.0));
        assert!("learned".parse::<PolicySpec>().is_err());
        assert!("oracle:1".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn learned_policies_need_weights() {
        assert!(matches!(PolicySpec::Learned(0.5).build(2, None), Err(Error::Config(_))));
        assert!(PolicySpec::Fixed(2).build(2, None).is_err());
        assert!(PolicySpec::Fixed(1).build(2, None).is_ok());
    }

    #[test]
    fn empty_experiments_are_rejected() {
        assert!(ExperimentSpec { policies: vec![], ..Default::default() }.validate().is_err());
        assert!(ExperimentSpec { seeds: vec![], ..Default::default() }.validate().is_err());
    }
}
