use crate::binning::{BinnedTensors, Binner, ColumnDeltas};
use crate::control::{one_hot, Observation, Policy};
use crate::recon::Reconstruct;
use crate::scene::IlluminanceSequence;
use crate::sensor::{seeded_stream, Event, SensorConfig, SimTiming, Simulator};
use crate::{error::config, Result, Tensor, CADENCE};

/// A closed-loop run against the live sensor model.
#[derive(Clone, Debug)]
pub struct LiveRun {
    pub events: Vec<Event>,
    /// Column assignment of every control window.
    pub schedule: Vec<Vec<usize>>,
    pub binned: BinnedTensors,
    /// Mean count per pixel of every bin.
    pub rates: Vec<f64>,
}

impl LiveRun {
    /// Selection active during bin `t`.
    pub fn selection(&self, t: usize) -> &[usize] {
        &self.schedule[t / CADENCE]
    }

    pub fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len().max(1) as f64
    }

    /// Reconstruct every bin from the fused stream.
    pub fn reconstruct(&self, recon: &mut dyn Reconstruct, num_thresholds: usize) -> Result<Vec<Tensor>> {
        recon.reset();
        (0..self.binned.bins())
            .map(|t| recon.step(&self.binned.d_frame(t), &one_hot(self.selection(t), num_thresholds)))
            .collect()
    }
}

/// Drive the sensor with `policy`: at every cadence bin the policy sees the
/// previous bin as the sensor produced it and sets the columns for the next
/// window. Policy draws come from `seed`.
pub fn run_live(scene: &IlluminanceSequence, sensor: &SensorConfig, q: usize, policy: &mut dyn Policy, seed: u64) -> Result<LiveRun> {
    let (h, w) = scene.dims().ok_or_else(|| config("empty scene"))?;
    if q == 0 || !scene.len().is_multiple_of(q) {
        return Err(config(format!("scene length {} is not a multiple of q = {q}", scene.len())));
    }
    sensor.validate()?;
    let bins = scene.len() / q;
    let timing = SimTiming::for_subsample(q);
    let windows = timing.windows_for(scene.len());
    let frames = &scene.frames;
    let mut sim = Simulator::new(sensor, &frames[0], timing)?;
    let mut binner = Binner::new(bins, h, w, timing.bin_width())?;
    let mut rng = seeded_stream(seed, 0);
    policy.reset();
    let mut events = Vec::new();
    let mut schedule: Vec<Vec<usize>> = Vec::with_capacity(windows);
    let mut current = vec![0; w];
    let deltas = |sel: &[usize]| -> Vec<f64> { sel.iter().map(|&j| sensor.thresholds[j]).collect() };
    let zeros = Tensor::zeros(&[h, w]);
    for m in 0..windows {
        let t = m * CADENCE;
        let (d_prev, c_prev) = if t == 0 { (zeros.clone(), zeros.clone()) } else { binner.frame(t - 1, &deltas(&current)) };
        let obs = Observation { bin: t, d_prev: &d_prev, c_prev: &c_prev, prev_selection: &current };
        let next = policy.decide(&obs, &mut rng)?;
        if next.len() != w || next.iter().any(|&j| j >= sensor.num_thresholds()) {
            return Err(config(format!("policy {} returned an invalid selection", policy.name())));
        }
        sim.set_columns(&next)?;
        current = next;
        schedule.push(current.clone());
        let first = m * timing.frames_per_window + 1;
        let last = ((m + 1) * timing.frames_per_window).min(frames.len() - 1);
        for frame in &frames[first..=last] {
            let evs = sim.advance(frame)?;
            binner.extend(&evs)?;
            events.extend(evs);
        }
        for b in t..(t + CADENCE).min(bins) {
            let (_, c) = binner.frame(b, &deltas(&current));
            policy.observe(b, &c, &current);
        }
    }
    // a single-frame scene has no window but still one bin
    if schedule.is_empty() {
        schedule.push(current);
    }
    let binned = binner.finish(ColumnDeltas::from_schedule(&schedule, &sensor.thresholds, bins)?)?;
    let rates = (0..bins).map(|t| binned.c_frame(t).sum() / (h * w) as f64).collect();
    Ok(LiveRun { events, schedule, binned, rates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::bin_events;
    use crate::control::FixedPolicy;
    use crate::scene::{patterns, scale_illuminance};
    use crate::sensor::{constant_schedule, simulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> IlluminanceSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = patterns::moving_edge(6, 10, 48, &mut rng)
            .iter()
            .map(|f| scale_illuminance(f, 100.0, 1000.0).unwrap())
            .collect();
        IlluminanceSequence { frames, l_min: 100.0, l_rng: 1000.0 }
    }

    #[test]
    fn fixed_policy_matches_offline_simulation() {
        let cfg = SensorConfig { thresholds: vec![1.15, 1.4], rng_seed: 3, ..SensorConfig::default() };
        let s = scene();
        let run = run_live(&s, &cfg, 3, &mut FixedPolicy { index: 1 }, 0).unwrap();
        let timing = SimTiming::for_subsample(3);
        let offline = simulate(&s.frames, &constant_schedule(timing.windows_for(48), 10, 1), &cfg, timing).unwrap();
        assert_eq!(run.events, offline);
        let b = bin_events(&offline, 6, timing.bin_width(), ColumnDeltas::constant(16, 10, 1.4)).unwrap();
        assert_eq!(run.binned.d(), b.d());
        assert_eq!(run.rates.len(), 16);
    }
}
