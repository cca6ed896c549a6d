use rand::Rng;

use crate::binning::{bin_events, ColumnDeltas};
use crate::scene::IlluminanceSequence;
use crate::sensor::{constant_schedule, simulate, SensorConfig, SimTiming};
use crate::{error::config, Error, Result, Tensor};

/// One training sequence: per-threshold binned stacks and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `D^{Δ_j}` as `[T, H, W]`, one per threshold.
    pub d: Vec<Tensor>,
    pub c: Vec<Tensor>,
    /// Brightness at every bin centre, `[T, H, W]`.
    pub gt: Tensor,
}

fn window(t: &Tensor, t0: usize, bins: usize, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let (hh, ww) = (s[1], s[2]);
    let mut out = Vec::with_capacity(bins * h * w);
    for b in t0..t0 + bins {
        for y in y0..y0 + h {
            let start = (b * hh + y) * ww + x0;
            out.extend_from_slice(&t.data()[start..start + w]);
        }
    }
    Tensor::new(&[bins, h, w], out).expect("window shape")
}

impl Sample {
    pub fn new(d: Vec<Tensor>, c: Vec<Tensor>, gt: Tensor) -> Result<Self> {
        if d.is_empty() || d.len() != c.len() {
            return Err(Error::Contract("need one D and one C per threshold".into()));
        }
        if gt.shape().len() != 3 || d.iter().chain(&c).any(|t| t.shape() != gt.shape()) {
            return Err(Error::Contract("stacks and ground truth must share one [T, H, W] shape".into()));
        }
        Ok(Self { d, c, gt })
    }

    /// Simulate every fixed threshold on `scene` and bin at the reconstruction rate.
    pub fn simulate(scene: &IlluminanceSequence, sensor: &SensorConfig, q: usize) -> Result<Self> {
        let (h, w) = scene.dims().ok_or_else(|| config("empty scene"))?;
        if q == 0 || !scene.len().is_multiple_of(q) {
            return Err(config(format!("scene length {} is not a multiple of q = {q}", scene.len())));
        }
        let bins = scene.len() / q;
        let timing = SimTiming::for_subsample(q);
        let windows = timing.windows_for(scene.len());
        let mut d = Vec::new();
        let mut c = Vec::new();
        for (j, &delta) in sensor.thresholds.iter().enumerate() {
            let events = simulate(&scene.frames, &constant_schedule(windows, w, j), sensor, timing)?;
            let b = bin_events(&events, h, timing.bin_width(), ColumnDeltas::constant(bins, w, delta))?;
            d.push(b.d());
            c.push(b.c());
        }
        let gt: Vec<f64> = (0..bins).flat_map(|t| scene.brightness(q * t).into_data()).collect();
        Self::new(d, c, Tensor::new(&[bins, h, w], gt)?)
    }

    pub fn bins(&self) -> usize {
        self.gt.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.gt.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.gt.shape()[2]
    }

    pub fn num_thresholds(&self) -> usize {
        self.d.len()
    }

    /// Total reference (lowest-threshold) count over all bins.
    pub fn ref_total(&self) -> f64 {
        self.c[0].sum()
    }

    pub fn gt_frame(&self, t: usize) -> Tensor {
        self.gt.index0(t)
    }

    /// Hard-fused `(D̃_t, C̃_t)` for a per-column selection.
    pub fn fused_bin(&self, t: usize, selection: &[usize]) -> (Tensor, Tensor) {
        let (h, w) = (self.height(), self.width());
        let plane = h * w;
        let mut d = Vec::with_capacity(plane);
        let mut c = Vec::with_capacity(plane);
        for i in 0..plane {
            let j = selection[i % w];
            d.push(self.d[j].data()[t * plane + i]);
            c.push(self.c[j].data()[t * plane + i]);
        }
        (Tensor::new(&[h, w], d).expect("plane"), Tensor::new(&[h, w], c).expect("plane"))
    }

    /// Spatio-temporal window.
    pub fn crop(&self, t0: usize, bins: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if t0 + bins > self.bins() || y0 + h > self.height() || x0 + w > self.width() || bins == 0 || h == 0 || w == 0 {
            return Err(config("crop window outside the sample"));
        }
        let f = |t: &Tensor| window(t, t0, bins, y0, x0, h, w);
        Ok(Self {
            d: self.d.iter().map(f).collect(),
            c: self.c.iter().map(f).collect(),
            gt: f(&self.gt),
        })
    }

    /// Random `bins`-long window with a square crop of side `min(size, H, W)`.
    pub fn random_crop<R: Rng + ?Sized>(&self, bins: usize, size: usize, rng: &mut R) -> Result<Self> {
        if bins > self.bins() {
            return Err(config(format!("sample has {} bins, {bins} requested", self.bins())));
        }
        let (h, w) = (size.min(self.height()), size.min(self.width()));
        let t0 = rng.random_range(0..=self.bins() - bins);
        let y0 = rng.random_range(0..=self.height() - h);
        let x0 = rng.random_range(0..=self.width() - w);
        self.crop(t0, bins, y0, x0, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{patterns, scale_illuminance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> IlluminanceSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = patterns::moving_edge(8, 12, 24, &mut rng)
            .iter()
            .map(|f| scale_illuminance(f, 200.0, 2000.0).unwrap())
            .collect();
        IlluminanceSequence { frames, l_min: 200.0, l_rng: 2000.0 }
    }

    #[test]
    fn simulated_stacks_are_ordered_by_threshold() {
        let cfg = SensorConfig { thresholds: vec![1.15, 1.7], noise_rate: 0.0, ..SensorConfig::default() };
        let s = Sample::simulate(&scene(), &cfg, 3).unwrap();
        assert_eq!(s.gt.shape(), &[8, 8, 12]);
        assert!(s.c[0].sum() > s.c[1].sum());
        assert_eq!(s.gt_frame(2), scene().brightness(6));
    }

    #[test]
    fn fused_bin_copies_columns() {
        let cfg = SensorConfig { thresholds: vec![1.15, 1.7], ..SensorConfig::default() };
        let s = Sample::simulate(&scene(), &cfg, 3).unwrap();
        let sel: Vec<usize> = (0..12).map(|x| x % 2).collect();
        let (d, _) = s.fused_bin(3, &sel);
        for i in 0..96 {
            assert_eq!(d.data()[i], s.d[i % 2].data()[3 * 96 + i]);
        }
    }

    #[test]
    fn crops_stay_aligned() {
        let cfg = SensorConfig { thresholds: vec![1.15, 1.7], ..SensorConfig::default() };
        let s = Sample::simulate(&scene(), &cfg, 3).unwrap();
        let c = s.crop(2, 4, 1, 3, 4, 5).unwrap();
        assert_eq!(c.gt.shape(), &[4, 4, 5]);
        assert_eq!(c.gt.data()[0], s.gt.data()[(2 * 8 + 1) * 12 + 3]);
        assert!(s.crop(6, 4, 0, 0, 8, 12).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.random_crop(8, 100, &mut rng).unwrap(), s);
    }
}
