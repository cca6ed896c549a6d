//! Event-pixel simulator with per-column target thresholds.
//!
//! Each pixel low-pass filters its log illuminance and emits an event when the
//! filtered signal moves more than its effective threshold away from the
//! reference level stored at its last event. Effective thresholds carry a
//! static lognormal mismatch around `ln Δ`. A refractory period blocks
//! emission after every event, background activity adds Poisson events, and
//! switching a column's threshold flushes that column's references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::{error::config, Error, Result, Tensor, BIN_RATE_HZ, CADENCE};

/// Thresholds used throughout the paper-scale setup.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [1.15, 1.25, 1.4, 1.7, 2.2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    /// Seconds.
    pub tau: f64,
    pub x: u16,
    pub y: u16,
    /// +1 (ON) or -1 (OFF).
    pub polarity: i8,
}

impl Event {
    /// Ordering used for every emitted stream: time, then row, column, polarity.
    pub fn stream_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.tau
            .total_cmp(&other.tau)
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(self.polarity.cmp(&other.polarity))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Target contrast ratios, strictly increasing and all above 1.
    pub thresholds: Vec<f64>,
    /// Refractory period in seconds.
    pub t_ref: f64,
    /// Std of the per-pixel multiplicative perturbation of `ln Δ` (in log space).
    pub mismatch_sigma: f64,
    /// Background activity, events per second per pixel.
    pub noise_rate: f64,
    /// Photoreceptor low-pass cutoff in Hz; infinite disables the filter.
    pub cutoff_hz: f64,
    pub flush_on_bias_change: bool,
    pub rng_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            t_ref: 1e-4,
            mismatch_sigma: 0.1,
            noise_rate: 0.1,
            cutoff_hz: 200.0,
            flush_on_bias_change: true,
            rng_seed: 0,
        }
    }
}

impl SensorConfig {
    /// Noise-free, mismatch-free, unfiltered pixel without refractory period.
    pub fn ideal(thresholds: Vec<f64>) -> Self {
        Self {
            thresholds,
            t_ref: 0.0,
            mismatch_sigma: 0.0,
            noise_rate: 0.0,
            cutoff_hz: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn num_thresholds(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(config("at least one threshold is required"));
        }
        if self.thresholds.iter().any(|&d| !(d > 1.0) || !d.is_finite()) {
            return Err(config(format!("thresholds must be finite and > 1: {:?}", self.thresholds)));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config(format!("thresholds must be strictly increasing: {:?}", self.thresholds)));
        }
        if !(self.t_ref >= 0.0) || !(self.mismatch_sigma >= 0.0) || !(self.noise_rate >= 0.0) {
            return Err(config("t_ref, mismatch_sigma and noise_rate must be non-negative"));
        }
        if !(self.cutoff_hz > 0.0) {
            return Err(config("cutoff_hz must be positive (use inf to disable the filter)"));
        }
        Ok(())
    }
}

/// Frame spacing and control-window length of a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTiming {
    /// Seconds between consecutive high-rate frames.
    pub frame_dt: f64,
    /// High-rate frames per control window.
    pub frames_per_window: usize,
}

impl SimTiming {
    /// Timing for a sequence subsampled by `q` to the reconstruction rate.
    pub fn for_subsample(q: usize) -> Self {
        Self {
            frame_dt: 1.0 / (BIN_RATE_HZ * q as f64),
            frames_per_window: CADENCE * q,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.frame_dt * self.frames_per_window as f64 / CADENCE as f64
    }

    /// Control windows needed to cover `frames` high-rate frames.
    pub fn windows_for(&self, frames: usize) -> usize {
        frames.div_ceil(self.frames_per_window)
    }
}

#[derive(Clone, Debug)]
pub struct SensorState {
    width: usize,
    height: usize,
    ref_log: Vec<f64>,
    filt_log: Vec<f64>,
    next_active: Vec<f64>,
    /// Effective ON/OFF log thresholds, one map per threshold index.
    eff_on: Vec<Vec<f64>>,
    eff_off: Vec<Vec<f64>>,
    columns: Vec<usize>,
    cfg: SensorConfig,
}

fn log_frame(frame: &Tensor) -> Result<Vec<f64>> {
    frame
        .data()
        .iter()
        .map(|&e| {
            if e > 0.0 && e.is_finite() {
                Ok(e.ln())
            } else {
                Err(Error::Domain(format!("illuminance {e} is not strictly positive")))
            }
        })
        .collect()
}

/// Create the pixel array from the first frame. Every column starts on threshold index 0.
pub fn init_sensor<R: Rng + ?Sized>(cfg: &SensorConfig, first_frame: &Tensor, rng: &mut R) -> Result<SensorState> {
    cfg.validate()?;
    let [height, width] = first_frame.shape() else {
        return Err(Error::Data(format!("frame must be [h, w], got {:?}", first_frame.shape())));
    };
    let (height, width) = (*height, *width);
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(config("sensor dimensions exceed 65535"));
    }
    let n = width * height;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut eff_on = Vec::with_capacity(cfg.thresholds.len());
    let mut eff_off = Vec::with_capacity(cfg.thresholds.len());
    for &delta in &cfg.thresholds {
        let base = delta.ln();
        let draw = |rng: &mut R| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let g: f64 = normal.sample(rng);
                    if cfg.mismatch_sigma == 0.0 {
                        base
                    } else {
                        base * (cfg.mismatch_sigma * g).exp()
                    }
                })
                .collect()
        };
        eff_on.push(draw(rng));
        eff_off.push(draw(rng));
    }
    let filt_log = log_frame(first_frame)?;
    Ok(SensorState {
        width,
        height,
        ref_log: filt_log.clone(),
        filt_log,
        next_active: vec![f64::NEG_INFINITY; n],
        eff_on,
        eff_off,
        columns: vec![0; width],
        cfg: cfg.clone(),
    })
}

impl SensorState {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn config(&self) -> &SensorConfig {
        &self.cfg
    }

    /// Current threshold index of every column.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn ref_log(&self) -> &[f64] {
        &self.ref_log
    }

    pub fn filt_log(&self) -> &[f64] {
        &self.filt_log
    }

    /// Effective ON threshold map for threshold index `j`.
    pub fn eff_on(&self, j: usize) -> &[f64] {
        &self.eff_on[j]
    }

    pub fn eff_off(&self, j: usize) -> &[f64] {
        &self.eff_off[j]
    }

    /// Overwrite one pixel's reference level.
    pub fn set_ref_log(&mut self, x: usize, y: usize, value: f64) {
        self.ref_log[y * self.width + x] = value;
    }

    /// Switch columns to new threshold indices. Returns the columns that
    /// changed; with flushing enabled their references snap to the filtered
    /// signal, discarding any pending crossing.
    pub fn set_column_thresholds(&mut self, assignment: &[usize]) -> Result<Vec<usize>> {
        if assignment.len() != self.width {
            return Err(config(format!("assignment has {} columns, sensor has {}", assignment.len(), self.width)));
        }
        if let Some(&j) = assignment.iter().find(|&&j| j >= self.cfg.thresholds.len()) {
            return Err(config(format!("threshold index {j} out of range 0..{}", self.cfg.thresholds.len())));
        }
        let mut changed = Vec::new();
        for (x, &j) in assignment.iter().enumerate() {
            if self.columns[x] == j {
                continue;
            }
            self.columns[x] = j;
            changed.push(x);
            if self.cfg.flush_on_bias_change {
                for y in 0..self.height {
                    let i = y * self.width + x;
                    self.ref_log[i] = self.filt_log[i];
                }
            }
        }
        Ok(changed)
    }

    fn filter_gain(&self, dt: f64) -> f64 {
        if self.cfg.cutoff_hz.is_infinite() {
            1.0
        } else {
            1.0 - (-2.0 * std::f64::consts::PI * self.cfg.cutoff_hz * dt).exp()
        }
    }

    /// Advance every pixel across `[t0, t0 + dt]` towards `frame` and return the
    /// emitted events in stream order.
    pub fn step<R: Rng + ?Sized>(&mut self, frame: &Tensor, t0: f64, dt: f64, rng: &mut R) -> Result<Vec<Event>> {
        if frame.shape() != [self.height, self.width] {
            return Err(Error::Data(format!(
                "frame {:?} does not match sensor [{}, {}]",
                frame.shape(),
                self.height,
                self.width
            )));
        }
        if !(dt > 0.0) {
            return Err(config(format!("substep dt must be positive, got {dt}")));
        }
        let target = log_frame(frame)?;
        let noise = self.draw_noise(t0, dt, rng);
        let gain = self.filter_gain(dt);
        let t1 = t0 + dt;
        let mut events = Vec::new();
        let mut noise_at = noise.iter().peekable();
        for i in 0..self.width * self.height {
            let (x, y) = (i % self.width, i / self.width);
            let a = self.filt_log[i];
            let b = a + gain * (target[i] - a);
            self.filt_log[i] = b;
            let j = self.columns[x];
            let (on, off) = (self.eff_on[j][i], self.eff_off[j][i]);
            let mut pixel_noise = Vec::new();
            while let Some(&&(pi, t, s)) = noise_at.peek() {
                if pi != i {
                    break;
                }
                pixel_noise.push((t, s));
                noise_at.next();
            }
            let seg = Segment { t0, t1, a, b };
            let px = Pixel {
                ref_log: &mut self.ref_log[i],
                next_active: &mut self.next_active[i],
                on,
                off,
                t_ref: self.cfg.t_ref,
            };
            px.run(&seg, &pixel_noise, |tau, s| {
                events.push(Event {
                    tau,
                    x: x as u16,
                    y: y as u16,
                    polarity: s,
                })
            });
        }
        events.sort_by(Event::stream_cmp);
        Ok(events)
    }

    /// Background events for one substep, sorted by (pixel, time).
    fn draw_noise<R: Rng + ?Sized>(&self, t0: f64, dt: f64, rng: &mut R) -> Vec<(usize, f64, i8)> {
        let n = self.width * self.height;
        let mean = self.cfg.noise_rate * dt * n as f64;
        if mean <= 0.0 {
            return Vec::new();
        }
        let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let mut out: Vec<(usize, f64, i8)> = (0..count)
            .map(|_| {
                let pixel = rng.random_range(0..n);
                let t = t0 + dt * rng.random::<f64>();
                let s = if rng.random::<bool>() { 1 } else { -1 };
                (pixel, t, s)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out
    }
}

/// Linear filtered-log trajectory over one substep.
struct Segment {
    t0: f64,
    t1: f64,
    a: f64,
    b: f64,
}

impl Segment {
    fn at(&self, t: f64) -> f64 {
        if self.t1 == self.t0 {
            return self.b;
        }
        self.a + (self.b - self.a) * (t - self.t0) / (self.t1 - self.t0)
    }

    /// Earliest `t >= from` with signal `>= level` (`up`) or `<= level` (`!up`).
    fn first_reach(&self, from: f64, level: f64, up: bool) -> Option<f64> {
        if from > self.t1 {
            return None;
        }
        let v = self.at(from);
        if (up && v >= level) || (!up && v <= level) {
            return Some(from);
        }
        let span = self.b - self.a;
        let reaches = if up { span > 0.0 && self.b >= level } else { span < 0.0 && self.b <= level };
        reaches.then(|| (self.t0 + (level - self.a) / span * (self.t1 - self.t0)).clamp(from, self.t1))
    }
}

struct Pixel<'a> {
    ref_log: &'a mut f64,
    next_active: &'a mut f64,
    on: f64,
    off: f64,
    t_ref: f64,
}

impl Pixel<'_> {
    fn run(self, seg: &Segment, noise: &[(f64, i8)], mut emit: impl FnMut(f64, i8)) {
        let mut noise = noise.iter().peekable();
        loop {
            let earliest = seg.t0.max(*self.next_active);
            while noise.peek().is_some_and(|(t, _)| *t < earliest) {
                noise.next();
            }
            let t_on = seg.first_reach(earliest, *self.ref_log + self.on, true);
            let t_off = seg.first_reach(earliest, *self.ref_log - self.off, false);
            let signal = match (t_on, t_off) {
                (Some(a), Some(b)) => Some(if a <= b { (a, 1) } else { (b, -1) }),
                (Some(a), None) => Some((a, 1)),
                (None, Some(b)) => Some((b, -1)),
                (None, None) => None,
            };
            let next_noise = noise.peek().map(|&&(t, s)| (t, s));
            let (tau, s) = match (signal, next_noise) {
                (Some(sg), Some(nz)) if nz.0 < sg.0 => {
                    noise.next();
                    nz
                }
                (Some(sg), _) => sg,
                (None, Some(nz)) => {
                    noise.next();
                    nz
                }
                (None, None) => break,
            };
            if s > 0 {
                *self.ref_log += self.on;
            } else {
                *self.ref_log -= self.off;
            }
            *self.next_active = tau + self.t_ref;
            emit(tau, s);
        }
    }
}

/// Incremental simulator: owns the pixel state and the noise stream.
pub struct Simulator {
    state: SensorState,
    noise_rng: ChaCha8Rng,
    timing: SimTiming,
    last_frame: usize,
}

/// Independent generator streams derived from one seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Simulator {
    pub fn new(cfg: &SensorConfig, first_frame: &Tensor, timing: SimTiming) -> Result<Self> {
        if !(timing.frame_dt > 0.0) || timing.frames_per_window == 0 {
            return Err(config("frame_dt must be positive and frames_per_window >= 1"));
        }
        let mut mismatch_rng = seeded_stream(cfg.rng_seed, 0);
        let state = init_sensor(cfg, first_frame, &mut mismatch_rng)?;
        Ok(Self {
            state,
            noise_rng: seeded_stream(cfg.rng_seed, 1),
            timing,
            last_frame: 0,
        })
    }

    pub fn state(&self) -> &SensorState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SensorState {
        &mut self.state
    }

    pub fn timing(&self) -> SimTiming {
        self.timing
    }

    /// Index of the last frame consumed.
    pub fn frame_index(&self) -> usize {
        self.last_frame
    }

    pub fn set_columns(&mut self, assignment: &[usize]) -> Result<Vec<usize>> {
        self.state.set_column_thresholds(assignment)
    }

    /// Consume the next high-rate frame.
    pub fn advance(&mut self, frame: &Tensor) -> Result<Vec<Event>> {
        let t0 = self.last_frame as f64 * self.timing.frame_dt;
        let events = self.state.step(frame, t0, self.timing.frame_dt, &mut self.noise_rng)?;
        self.last_frame += 1;
        Ok(events)
    }
}

/// Simulate a whole illuminance video under a per-window column schedule.
pub fn simulate(video: &[Tensor], schedule: &[Vec<usize>], cfg: &SensorConfig, timing: SimTiming) -> Result<Vec<Event>> {
    let windows = timing.windows_for(video.len());
    if schedule.len() != windows {
        return Err(config(format!(
            "schedule has {} windows, {} frames need {}",
            schedule.len(),
            video.len(),
            windows
        )));
    }
    let Some(first) = video.first() else {
        return Ok(Vec::new());
    };
    let mut sim = Simulator::new(cfg, first, timing)?;
    let mut out = Vec::new();
    for (k, frame) in video.iter().enumerate().skip(1) {
        let start = k - 1;
        if start % timing.frames_per_window == 0 {
            sim.set_columns(&schedule[start / timing.frames_per_window])?;
        }
        out.extend(sim.advance(frame)?);
    }
    Ok(out)
}

/// Every window assigns threshold index `j` to every column.
pub fn constant_schedule(windows: usize, width: usize, j: usize) -> Vec<Vec<usize>> {
    vec![vec![j; width]; windows]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::patterns;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn single_pixel(cfg: &SensorConfig, log_values: &[f64], dt: f64) -> Vec<Event> {
        let frames: Vec<Tensor> = log_values.iter().map(|v| Tensor::new(&[1, 1], vec![v.exp()]).unwrap()).collect();
        let mut st = init_sensor(cfg, &frames[0], &mut rng()).unwrap();
        let mut out = Vec::new();
        for (k, f) in frames.iter().enumerate().skip(1) {
            out.extend(st.step(f, (k - 1) as f64 * dt, dt, &mut rng()).unwrap());
        }
        out
    }

    #[test]
    fn zero_mismatch_gives_exact_log_thresholds() {
        let cfg = SensorConfig { mismatch_sigma: 0.0, ..SensorConfig::default() };
        let st = init_sensor(&cfg, &Tensor::full(&[4, 5], 100.0), &mut rng()).unwrap();
        for (j, d) in DEFAULT_THRESHOLDS.iter().enumerate() {
            assert!(st.eff_on(j).iter().chain(st.eff_off(j)).all(|&e| e == d.ln()));
        }
    }

    #[test]
    fn lognormal_mismatch_mean_matches_moment() {
        let sigma: f64 = 0.1;
        let cfg = SensorConfig { mismatch_sigma: sigma, thresholds: vec![1.4], ..SensorConfig::default() };
        let st = init_sensor(&cfg, &Tensor::full(&[250, 400], 100.0), &mut rng()).unwrap();
        let ratio: Vec<f64> = st.eff_on(0).iter().map(|e| e / 1.4f64.ln()).collect();
        let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
        let expect = (sigma * sigma / 2.0).exp();
        assert!((mean / expect - 1.0).abs() < 0.01, "{mean} vs {expect}");
    }

    #[test]
    fn mismatch_depends_on_seed_only() {
        let frame = Tensor::full(&[6, 6], 100.0);
        let a = init_sensor(&SensorConfig::default(), &frame, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_sensor(&SensorConfig::default(), &frame, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = init_sensor(&SensorConfig::default(), &frame, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.eff_on(2), b.eff_on(2));
        assert_ne!(a.eff_on(2), c.eff_on(2));
    }

    #[test]
    fn constant_scene_without_noise_is_silent() {
        let cfg = SensorConfig { noise_rate: 0.0, ..SensorConfig::default() };
        let frames = vec![Tensor::full(&[8, 8], 700.0); 30];
        let timing = SimTiming::for_subsample(2);
        let ev = simulate(&frames, &constant_schedule(timing.windows_for(30), 8, 0), &cfg, timing).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn ramp_of_two_thresholds_fires_twice() {
        let d: f64 = 1.3;
        let cfg = SensorConfig::ideal(vec![d]);
        let ev = single_pixel(&cfg, &[0.0, 2.0 * d.ln() + 1e-9], 0.01);
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.polarity == 1));
        assert!((ev[0].tau - 0.005).abs() < 1e-9 && (ev[1].tau - 0.01).abs() < 1e-9);
    }

    #[test]
    fn refractory_caps_large_step_to_one_event() {
        let d: f64 = 1.25;
        let cfg = SensorConfig { t_ref: 0.02, ..SensorConfig::ideal(vec![d]) };
        let ev = single_pixel(&cfg, &[0.0, 10.0 * d.ln()], 0.01);
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn refractory_spacing_holds_on_moving_scene() {
        let cfg = SensorConfig { t_ref: 2e-3, noise_rate: 0.0, ..SensorConfig::default() };
        let mut r = rng();
        let frames: Vec<Tensor> = patterns::moving_edge(12, 16, 40, &mut r).iter().map(|f| f.map(|l| 100.0 + 4000.0 * l)).collect();
        let timing = SimTiming::for_subsample(10);
        let ev = simulate(&frames, &constant_schedule(timing.windows_for(40), 16, 0), &cfg, timing).unwrap();
        assert!(!ev.is_empty());
        let mut last = std::collections::HashMap::new();
        for e in &ev {
            if let Some(prev) = last.insert((e.x, e.y), e.tau) {
                assert!(e.tau - prev >= cfg.t_ref - 1e-12);
            }
        }
    }

    #[test]
    fn flushed_column_is_silent_after_switch_down() {
        let cfg = SensorConfig { noise_rate: 0.0, mismatch_sigma: 0.0, cutoff_hz: f64::INFINITY, ..SensorConfig::default() };
        let frame = Tensor::full(&[4, 3], 1000.0);
        let mut st = init_sensor(&cfg, &frame, &mut rng()).unwrap();
        st.set_column_thresholds(&[4, 4, 4]).unwrap();
        // stale reference between ln 1.15 and ln 2.2 below the signal
        for y in 0..4 {
            st.set_ref_log(1, y, 1000f64.ln() - 0.5);
        }
        let changed = st.set_column_thresholds(&[4, 0, 4]).unwrap();
        assert_eq!(changed, vec![1]);
        let ev = st.step(&frame, 0.0, 0.01, &mut rng()).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn unflushed_stale_reference_fires_once_per_pixel() {
        let d: f64 = 1.15;
        let cfg = SensorConfig { flush_on_bias_change: false, ..SensorConfig::ideal(vec![d, 2.2]) };
        let frame = Tensor::full(&[3, 2], 500.0);
        let mut st = init_sensor(&cfg, &frame, &mut rng()).unwrap();
        st.set_column_thresholds(&[1, 1]).unwrap();
        for y in 0..3 {
            st.set_ref_log(0, y, 500f64.ln() - 1.5 * d.ln());
        }
        st.set_column_thresholds(&[0, 1]).unwrap();
        let ev = st.step(&frame, 0.0, 0.01, &mut rng()).unwrap();
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.x == 0 && e.polarity == 1));
    }

    #[test]
    fn unchanged_assignment_is_a_no_op() {
        let frame = Tensor::full(&[2, 3], 10.0);
        let mut st = init_sensor(&SensorConfig::default(), &frame, &mut rng()).unwrap();
        let before = st.ref_log().to_vec();
        assert!(st.set_column_thresholds(&[0, 0, 0]).unwrap().is_empty());
        assert_eq!(st.ref_log(), &before[..]);
        assert!(matches!(st.set_column_thresholds(&[0, 5, 0]), Err(Error::Config(_))));
        assert!(matches!(st.set_column_thresholds(&[0, 0]), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_non_positive_illuminance() {
        let frame = Tensor::full(&[2, 2], 10.0);
        let mut st = init_sensor(&SensorConfig::default(), &frame, &mut rng()).unwrap();
        let bad = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(st.step(&bad, 0.0, 0.1, &mut rng()), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_video_and_schedule_mismatch() {
        let timing = SimTiming::for_subsample(1);
        assert!(simulate(&[], &[], &SensorConfig::default(), timing).unwrap().is_empty());
        let frames = vec![Tensor::full(&[8, 8], 1.0); 9];
        assert!(matches!(simulate(&frames, &[vec![0; 8]], &SensorConfig::default(), timing), Err(Error::Config(_))));
    }

    #[test]
    fn constant_schedule_equals_unswitched_sensor() {
        let mut r = rng();
        let frames: Vec<Tensor> = patterns::moving_edge(10, 12, 24, &mut r).iter().map(|f| f.map(|l| 200.0 + 3000.0 * l)).collect();
        let cfg = SensorConfig::default();
        let timing = SimTiming::for_subsample(3);
        let via_schedule = simulate(&frames, &constant_schedule(timing.windows_for(24), 12, 0), &cfg, timing).unwrap();
        let mut sim = Simulator::new(&cfg, &frames[0], timing).unwrap();
        let direct: Vec<Event> = frames[1..].iter().flat_map(|f| sim.advance(f).unwrap()).collect();
        assert_eq!(via_schedule, direct);
    }
}
