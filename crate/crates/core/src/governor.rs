//! Fixed target event rate: per-threshold rate estimates γ and an online
//! search for the rate weight λ* at which the controller's expected rate
//! meets the target α.

use rand_chacha::ChaCha8Rng;

use crate::control::{sample_mask, ControlProbs, LearnedPolicy, Observation, Policy};
use crate::{Error, Result, Tensor};

/// Weight of the previous estimate in the γ update.
pub const GAMMA_KEEP: f64 = 0.2;
pub const LAMBDA_SEARCH_MAX: f64 = 2.5;
pub const GRID_POINTS: usize = 32;
const GOLDEN_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GovernorState {
    /// Mean count per pixel per bin of every threshold, over selected columns.
    pub gamma: Vec<f64>,
    pub lambda_star: f64,
    pub alpha: f64,
    /// Whether each threshold has been selected on some column yet.
    pub observed: Vec<bool>,
}

impl GovernorState {
    pub fn new(num_thresholds: usize, alpha: f64) -> Result<Self> {
        if num_thresholds == 0 || !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("invalid governor target {alpha} for {num_thresholds} thresholds")));
        }
        Ok(Self { gamma: vec![0.0; num_thresholds], lambda_star: LAMBDA_SEARCH_MAX, alpha, observed: vec![false; num_thresholds] })
    }

    /// Fold one bin of counts `c` `[H, W]` into γ. Thresholds with no selected
    /// column keep their estimate.
    pub fn update_gamma(&mut self, c: &Tensor, selection: &[usize]) -> Result<()> {
        let [h, w] = c.shape() else {
            return Err(Error::Contract(format!("count frame must be [H, W], got {:?}", c.shape())));
        };
        if selection.len() != *w || selection.iter().any(|&j| j >= self.gamma.len()) {
            return Err(Error::Contract("selection does not match the count frame".into()));
        }
        let nc = self.gamma.len();
        let mut sum = vec![0.0; nc];
        let mut cols = vec![0usize; nc];
        for (x, &j) in selection.iter().enumerate() {
            cols[j] += 1;
            sum[j] += (0..*h).map(|y| c.data()[y * w + x]).sum::<f64>();
        }
        for j in 0..nc {
            if cols[j] > 0 {
                let rate = sum[j] / (cols[j] * h) as f64;
                self.gamma[j] = GAMMA_KEEP * self.gamma[j] + (1.0 - GAMMA_KEEP) * rate;
                self.observed[j] = true;
            }
        }
        Ok(())
    }

    /// Rate estimates with every never-selected threshold raised to the
    /// largest estimate of an observed higher threshold, since counts never
    /// rise with Δ.
    pub fn effective_gamma(&self) -> Vec<f64> {
        let mut out = self.gamma.clone();
        let mut floor: f64 = 0.0;
        for j in (0..out.len()).rev() {
            if self.observed[j] {
                floor = floor.max(out[j]);
            } else {
                out[j] = floor;
            }
        }
        out
    }

    /// `Σ_j mean_x P^j γ_j` over [`effective_gamma`](Self::effective_gamma).
    pub fn expected_rate(&self, p: &ControlProbs) -> f64 {
        p.column_mean().iter().zip(self.effective_gamma()).map(|(p, g)| p * g).sum()
    }
}

/// The best of `GRID_POINTS` evenly spaced λ on `[0, LAMBDA_SEARCH_MAX]`,
/// first index on ties. Returns `(index, λ, objective)`.
pub fn grid_search(mut objective: impl FnMut(f64) -> Result<f64>) -> Result<(usize, f64, f64)> {
    let mut best = (0, 0.0, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let l = grid_lambda(i);
        let v = objective(l)?;
        if v < best.2 {
            best = (i, l, v);
        }
    }
    Ok(best)
}

fn grid_lambda(i: usize) -> f64 {
    LAMBDA_SEARCH_MAX * i as f64 / (GRID_POINTS - 1) as f64
}

/// Minimise `|α − rate(λ)|` over `[0, LAMBDA_SEARCH_MAX]`: grid search, then
/// golden-section refinement inside the bracket around the best grid point.
/// The refined point replaces the grid point only when strictly better.
pub fn solve_lambda(alpha: f64, mut rate: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut objective = |l: f64| -> Result<f64> {
        let r = rate(l)?;
        if !r.is_finite() {
            return Err(Error::Numeric(format!("expected rate {r} at λ = {l}")));
        }
        Ok((alpha - r).abs())
    };
    let (i, l0, v0) = grid_search(&mut objective)?;
    let (mut a, mut b) = (grid_lambda(i.saturating_sub(1)), grid_lambda((i + 1).min(GRID_POINTS - 1)));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d)?;
        }
    }
    let l1 = 0.5 * (a + b);
    let v1 = objective(l1)?;
    Ok(if v1 < v0 { l1 } else { l0 })
}

/// A controller that can be queried at any λ before committing to one.
pub trait LambdaProbe {
    fn reset(&mut self);
    fn num_thresholds(&self) -> usize;
    /// Probabilities at `lambda`, leaving recurrent state untouched.
    fn probe(&self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs>;
    /// Probabilities at `lambda`, advancing recurrent state.
    fn commit(&mut self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs>;
}

impl LambdaProbe for LearnedPolicy {
    fn reset(&mut self) {
        Policy::reset(self);
    }

    fn num_thresholds(&self) -> usize {
        self.controller.config().num_thresholds
    }

    fn probe(&self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs> {
        Ok(LearnedPolicy::probe(self, obs, lambda)?.0)
    }

    fn commit(&mut self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs> {
        let (p, s) = LearnedPolicy::probe(self, obs, lambda)?;
        LearnedPolicy::commit(self, s);
        Ok(p)
    }
}

/// Spatially uniform probabilities interpolated linearly in λ from `at_zero`
/// (λ = 0) to `at_max` (λ = `LAMBDA_SEARCH_MAX`), clamped outside.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearController {
    pub at_zero: Vec<f64>,
    pub at_max: Vec<f64>,
}

impl LambdaProbe for LinearController {
    fn reset(&mut self) {}

    fn num_thresholds(&self) -> usize {
        self.at_zero.len()
    }

    fn probe(&self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs> {
        let s = (lambda / LAMBDA_SEARCH_MAX).clamp(0.0, 1.0);
        let w = obs.width();
        let data = self
            .at_zero
            .iter()
            .zip(&self.at_max)
            .flat_map(|(a, b)| std::iter::repeat_n(a + s * (b - a), w))
            .collect();
        ControlProbs::new(Tensor::new(&[self.at_zero.len(), w], data)?)
    }

    fn commit(&mut self, obs: &Observation<'_>, lambda: f64) -> Result<ControlProbs> {
        LambdaProbe::probe(self, obs, lambda)
    }
}

/// One cadence step: fold the bins of the last window into γ, solve for λ*,
/// advance the controller at λ* and draw the next mask.
pub fn govern_step<P: LambdaProbe + ?Sized>(
    state: &mut GovernorState,
    controller: &mut P,
    obs: &Observation<'_>,
    window: &[(Tensor, Vec<usize>)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    for (c, sel) in window {
        state.update_gamma(c, sel)?;
    }
    // without rate estimates start from the sparsest setting
    if state.observed.iter().any(|&o| o) {
        let probe: &P = controller;
        state.lambda_star = solve_lambda(state.alpha, |l| Ok(state.expected_rate(&probe.probe(obs, l)?)))?;
    }
    let p = controller.commit(obs, state.lambda_star)?;
    sample_mask(p.tensor(), rng)
}

/// A controller regulated to a target rate, usable wherever a [`Policy`] is.
#[derive(Clone, Debug)]
pub struct GovernedPolicy<P> {
    pub controller: P,
    pub state: GovernorState,
    window: Vec<(Tensor, Vec<usize>)>,
    /// λ* chosen at every decision.
    pub lambda_log: Vec<f64>,
}

impl<P: LambdaProbe> GovernedPolicy<P> {
    pub fn new(controller: P, alpha: f64) -> Result<Self> {
        let state = GovernorState::new(controller.num_thresholds(), alpha)?;
        Ok(Self { controller, state, window: Vec::new(), lambda_log: Vec::new() })
    }
}

impl<P: LambdaProbe> Policy for GovernedPolicy<P> {
    fn name(&self) -> String {
        format!("governed:{}", self.state.alpha)
    }

    fn reset(&mut self) {
        self.controller.reset();
        self.state = GovernorState::new(self.state.gamma.len(), self.state.alpha).expect("validated at construction");
        self.window.clear();
        self.lambda_log.clear();
    }

    fn decide(&mut self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let window = std::mem::take(&mut self.window);
        let mask = govern_step(&mut self.state, &mut self.controller, obs, &window, rng)?;
        self.lambda_log.push(self.state.lambda_star);
        Ok(mask)
    }

    fn observe(&mut self, _bin: usize, c: &Tensor, selection: &[usize]) {
        self.window.push((c.clone(), selection.to_vec()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::rollout_on_stacks;
    use rand::SeedableRng;

    fn frame(h: usize, w: usize, v: f64) -> Tensor {
        Tensor::full(&[h, w], v)
    }

    #[test]
    fn first_update_is_eighty_percent() {
        let mut s = GovernorState::new(2, 1.0).unwrap();
        s.update_gamma(&frame(3, 4, 2.5), &[0; 4]).unwrap();
        assert!((s.gamma[0] - 0.8 * 2.5).abs() < 1e-15);
        assert_eq!(s.gamma[1], 0.0);
    }

    #[test]
    fn constant_rate_converges_geometrically() {
        let r = 3.0;
        let mut s = GovernorState::new(1, 1.0).unwrap();
        for t in 1..=12 {
            s.update_gamma(&frame(2, 2, r), &[0, 0]).unwrap();
            assert!((s.gamma[0] - r).abs() - GAMMA_KEEP.powi(t) * r < 1e-12);
        }
    }

    #[test]
    fn gamma_is_normalised_per_selected_column() {
        // column 0 uses threshold 0 at rate 4, the other three threshold 1 at rate 1
        let mut c = frame(5, 4, 1.0);
        for y in 0..5 {
            c.data_mut()[y * 4] = 4.0;
        }
        let mut s = GovernorState::new(2, 1.0).unwrap();
        s.update_gamma(&c, &[0, 1, 1, 1]).unwrap();
        assert!((s.gamma[0] - 3.2).abs() < 1e-12);
        assert!((s.gamma[1] - 0.8).abs() < 1e-12);
        // same field at twice the resolution
        let mut s2 = GovernorState::new(2, 1.0).unwrap();
        let mut c2 = frame(10, 8, 1.0);
        for y in 0..10 {
            c2.data_mut()[y * 8] = 4.0;
            c2.data_mut()[y * 8 + 1] = 4.0;
        }
        s2.update_gamma(&c2, &[0, 0, 1, 1, 1, 1, 1, 1]).unwrap();
        assert_eq!(s.gamma, s2.gamma);
    }

    #[test]
    fn unobserved_thresholds_take_the_monotone_bound() {
        let mut s = GovernorState::new(3, 1.0).unwrap();
        assert_eq!(s.effective_gamma(), vec![0.0; 3]);
        s.update_gamma(&frame(2, 2, 0.5), &[1; 2]).unwrap();
        assert_eq!(s.effective_gamma(), vec![0.4, 0.4, 0.0]);
        s.update_gamma(&frame(2, 2, 2.0), &[0; 2]).unwrap();
        assert_eq!(s.effective_gamma(), vec![1.6, 0.4, 0.0]);
    }

    #[test]
    fn constant_objective_picks_zero() {
        let gamma = [10.0, 5.0, 0.0];
        let l = solve_lambda(1.0, |_| Ok(gamma[2] * 0.0 + gamma[1])).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn linear_response_is_inverted() {
        let rate = |l: f64| Ok(10.0 - 8.0 * l / LAMBDA_SEARCH_MAX);
        let l = solve_lambda(6.0, rate).unwrap();
        // closed form: 10 - 3.2 λ = 6
        assert!((l - 1.25).abs() < 1e-2, "{l}");
    }

    #[test]
    fn unreachable_target_clips_to_boundary() {
        let rate = |l: f64| Ok(10.0 - 3.0 * l);
        assert_eq!(solve_lambda(50.0, rate).unwrap(), 0.0);
        let l = solve_lambda(-1.0, rate).unwrap();
        assert!((l - LAMBDA_SEARCH_MAX).abs() < 1e-5, "{l}");
    }

    #[test]
    fn refinement_never_worse_than_grid() {
        let rate = |l: f64| Ok((3.0 * l).sin() * 4.0 + l);
        for alpha in [-2.0, 0.3, 1.7, 4.4] {
            let (_, lg, vg) = grid_search(|l| Ok((alpha - rate(l)?).abs())).unwrap();
            // exhaustive grid agrees with the search
            let exhaustive = (0..GRID_POINTS).map(|i| (alpha - rate(grid_lambda(i)).unwrap()).abs()).fold(f64::INFINITY, f64::min);
            assert_eq!(vg, exhaustive);
            let l = solve_lambda(alpha, rate).unwrap();
            assert!((alpha - rate(l).unwrap()).abs() <= vg, "{alpha}: {l} vs {lg}");
        }
    }

    #[test]
    fn controller_errors_propagate() {
        let r = solve_lambda(1.0, |_| Err(Error::Numeric("boom".into())));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    fn stacks(bins: usize, rates: &[f64]) -> (Vec<Tensor>, Vec<Tensor>) {
        let c: Vec<Tensor> = rates.iter().map(|&r| Tensor::full(&[bins, 4, 200], r)).collect();
        (c.clone(), c)
    }

    #[test]
    fn static_scene_stays_at_zero() {
        let (d, c) = stacks(16, &[0.0, 0.0]);
        let ctrl = LinearController { at_zero: vec![1.0, 0.0], at_max: vec![0.0, 1.0] };
        let mut pol = GovernedPolicy::new(ctrl, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        rollout_on_stacks(&mut pol, &d, &c, &mut rng).unwrap();
        // the first decision has no estimates and starts sparse
        assert_eq!(pol.lambda_log[0], LAMBDA_SEARCH_MAX);
        assert!(pol.lambda_log[1..].iter().all(|&l| l == 0.0));
    }

    #[test]
    fn governed_rate_tracks_target() {
        let bins = 64;
        let (d, c) = stacks(bins, &[1.0, 0.2]);
        let ctrl = LinearController { at_zero: vec![1.0, 0.0], at_max: vec![0.0, 1.0] };
        let alpha = 0.5;
        let mut pol = GovernedPolicy::new(ctrl, alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = rollout_on_stacks(&mut pol, &d, &c, &mut rng).unwrap();
        let plane = 800;
        let rate: f64 = r.c.data()[20 * plane..].iter().sum::<f64>() / ((bins - 20) * plane) as f64;
        assert!((rate - alpha).abs() < 0.05 * alpha, "{rate}");
    }

    #[test]
    fn doubling_target_does_not_lower_rate() {
        let bins = 48;
        let (d, c) = stacks(bins, &[1.0, 0.2]);
        let mean_rate = |alpha: f64| {
            let ctrl = LinearController { at_zero: vec![1.0, 0.0], at_max: vec![0.0, 1.0] };
            let mut pol = GovernedPolicy::new(ctrl, alpha).unwrap();
            let r = rollout_on_stacks(&mut pol, &d, &c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            r.c.sum()
        };
        assert!(mean_rate(0.6) >= mean_rate(0.3));
    }
}
