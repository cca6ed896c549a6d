//! Ground-truth illuminance video from still images.
//!
//! A brightness image `L` in `[0, 1]` becomes illuminance `E = L_rng * L + L_min`
//! and is then moved by a smooth random affine walk at the high simulation
//! rate. Reconstruction targets are every `q`-th frame.

pub mod patterns;
mod warp;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{error::config, Error, Result, Tensor};
pub use warp::{symmetric_index, warp_bicubic, Affine};

/// Ranges from which per-sequence illuminance offset and span are drawn, in lux.
pub const L_MIN_RANGE: (f64, f64) = (50.0, 5_000.0);
pub const L_RNG_RANGE: (f64, f64) = (100.0, 20_000.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Frames at the simulation rate, `T_h = q * T_l`.
    pub high_rate_len: usize,
    /// Subsampling factor `q` between simulation and reconstruction rates.
    pub subsample: usize,
    pub l_min: f64,
    pub l_rng: f64,
    pub rng_seed: u64,
    /// Scales every per-step affine increment; 0 freezes the scene.
    pub motion_smoothness: f64,
    /// Per-step bounds on the affine velocity.
    pub max_shift: f64,
    pub max_rotation: f64,
    pub max_log_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            high_rate_len: 640,
            subsample: 10,
            l_min: 500.0,
            l_rng: 5_000.0,
            rng_seed: 0,
            motion_smoothness: 1.0,
            max_shift: 0.5,
            max_rotation: 0.004,
            max_log_scale: 0.002,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(config(format!("scene must be at least 8x8, got {}x{}", self.width, self.height)));
        }
        if self.subsample == 0 {
            return Err(config("subsample factor q must be >= 1"));
        }
        if !self.high_rate_len.is_multiple_of(self.subsample) {
            return Err(config(format!(
                "T_h = {} is not a multiple of q = {}",
                self.high_rate_len, self.subsample
            )));
        }
        if !(self.l_min > 0.0 && self.l_rng > 0.0) {
            return Err(config("L_min and L_rng must be positive"));
        }
        if self.motion_smoothness < 0.0 || !self.motion_smoothness.is_finite() {
            return Err(config("motion_smoothness must be a finite non-negative number"));
        }
        Ok(())
    }

    pub fn low_rate_len(&self) -> usize {
        self.high_rate_len / self.subsample.max(1)
    }
}

/// Illuminance frames in lux, plus the affine brightness mapping that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminanceSequence {
    pub frames: Vec<Tensor>,
    pub l_min: f64,
    pub l_rng: f64,
}

impl IlluminanceSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.shape()[0], f.shape()[1]))
    }

    /// Brightness `(E - L_min) / L_rng` of frame `t`, clamped to `[0, 1]`.
    pub fn brightness(&self, t: usize) -> Tensor {
        self.frames[t].map(|e| ((e - self.l_min) / self.l_rng).clamp(0.0, 1.0))
    }
}

/// `E = L_rng * L + L_min` elementwise.
pub fn scale_illuminance(brightness: &Tensor, l_min: f64, l_rng: f64) -> Result<Tensor> {
    if !(l_min > 0.0 && l_rng > 0.0) {
        return Err(Error::Domain(format!("L_min={l_min}, L_rng={l_rng} must be positive")));
    }
    if let Some(v) = brightness.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("brightness {v} outside [0, 1]")));
    }
    Ok(brightness.map(|l| l_rng * l + l_min))
}

/// Draw `(L_min, L_rng)` uniformly from the standard ranges.
pub fn sample_illuminance_range<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    (
        rng.random_range(L_MIN_RANGE.0..L_MIN_RANGE.1),
        rng.random_range(L_RNG_RANGE.0..L_RNG_RANGE.1),
    )
}

/// Cumulative poses for `cfg.high_rate_len` frames: a clipped random walk on
/// the affine velocity, integrated into the pose. Pose 0 is the identity.
pub fn random_affine_schedule<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Vec<Affine> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let bounds = [cfg.max_shift, cfg.max_shift, cfg.max_rotation, cfg.max_log_scale];
    let mut vel = [0.0f64; 4];
    for (v, b) in vel.iter_mut().zip(bounds) {
        *v = b * rng.random_range(-1.0..1.0);
    }
    let mut pose = Affine::default();
    let mut out = Vec::with_capacity(cfg.high_rate_len);
    for t in 0..cfg.high_rate_len {
        if t > 0 {
            for (v, b) in vel.iter_mut().zip(bounds) {
                *v = (*v + 0.1 * b * normal.sample(rng)).clamp(-b, b);
            }
            let k = cfg.motion_smoothness;
            pose.tx += k * vel[0];
            pose.ty += k * vel[1];
            pose.rotation += k * vel[2];
            pose.log_scale += k * vel[3];
        }
        out.push(pose);
    }
    out
}

/// Warp `e0` by each pose, clamping bicubic overshoot to the source range.
pub fn warp_sequence(e0: &Tensor, poses: &[Affine]) -> Vec<Tensor> {
    let lo = e0.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e0.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    poses
        .iter()
        .map(|p| {
            if p.is_identity() {
                e0.clone()
            } else {
                warp_bicubic(e0, p).map(|v| v.clamp(lo, hi))
            }
        })
        .collect()
}

pub fn gen_motion_sequence<R: Rng + ?Sized>(e0: &Tensor, cfg: &SceneConfig, rng: &mut R) -> Result<IlluminanceSequence> {
    cfg.validate()?;
    if e0.shape() != [cfg.height, cfg.width] {
        return Err(config(format!(
            "image is {:?}, config expects [{}, {}]",
            e0.shape(),
            cfg.height,
            cfg.width
        )));
    }
    if e0.data().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("illuminance must be finite and strictly positive".into()));
    }
    let poses = random_affine_schedule(cfg, rng);
    Ok(IlluminanceSequence {
        frames: warp_sequence(e0, &poses),
        l_min: cfg.l_min,
        l_rng: cfg.l_rng,
    })
}

/// Frames `0, q, 2q, ...`.
pub fn subsample_ground_truth(seq: &IlluminanceSequence, q: usize) -> Result<IlluminanceSequence> {
    if q == 0 || !seq.len().is_multiple_of(q) {
        return Err(config(format!("sequence of {} frames cannot be subsampled by {q}", seq.len())));
    }
    Ok(IlluminanceSequence {
        frames: seq.frames.iter().step_by(q).cloned().collect(),
        l_min: seq.l_min,
        l_rng: seq.l_rng,
    })
}

/// Load an 8-bit grayscale image as brightness in `[0, 1]`, resized to cover
/// `height x width` and centre-cropped.
pub fn load_brightness(path: &Path, height: usize, width: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (iw, ih) = img.dimensions();
    let scale = (width as f64 / iw as f64).max(height as f64 / ih as f64);
    let (rw, rh) = (
        ((iw as f64 * scale).ceil() as u32).max(width as u32),
        ((ih as f64 * scale).ceil() as u32).max(height as u32),
    );
    let resized = if (rw, rh) == (iw, ih) {
        img
    } else {
        image::imageops::resize(&img, rw, rh, image::imageops::FilterType::Triangle)
    };
    let (ox, oy) = ((rw as usize - width) / 2, (rh as usize - height) / 2);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            data.push(resized.get_pixel((ox + x) as u32, (oy + y) as u32).0[0] as f64 / 255.0);
        }
    }
    Ok(Tensor::new(&[height, width], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(th: usize, q: usize) -> SceneConfig {
        SceneConfig {
            width: 12,
            height: 10,
            high_rate_len: th,
            subsample: q,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn scaling_matches_affine_formula() {
        let zeros = Tensor::zeros(&[2, 2]);
        assert!(scale_illuminance(&zeros, 50.0, 100.0).unwrap().data().iter().all(|&e| e == 50.0));
        let ones = Tensor::full(&[2, 2], 1.0);
        assert!(scale_illuminance(&ones, 50.0, 100.0).unwrap().data().iter().all(|&e| e == 150.0));
        let half = Tensor::full(&[1, 1], 0.5);
        assert_eq!(scale_illuminance(&half, 5000.0, 20000.0).unwrap().item(), 15000.0);
    }

    #[test]
    fn scaling_rejects_out_of_range_brightness() {
        let bad = Tensor::new(&[1, 2], vec![0.5, 1.2]).unwrap();
        assert!(matches!(scale_illuminance(&bad, 1.0, 1.0), Err(Error::Domain(_))));
        let ok = Tensor::full(&[1, 1], 0.5);
        assert!(matches!(scale_illuminance(&ok, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn frozen_motion_repeats_first_frame() {
        let mut c = cfg(20, 10);
        c.motion_smoothness = 0.0;
        let e0 = Tensor::new(&[10, 12], (0..120).map(|i| 100.0 + i as f64).collect()).unwrap();
        let seq = gen_motion_sequence(&e0, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(seq.len(), 20);
        assert!(seq.frames.iter().all(|f| *f == e0));
    }

    #[test]
    fn integer_translation_of_constant_field_is_constant() {
        let e0 = Tensor::full(&[10, 12], 321.0);
        let poses: Vec<Affine> = (0..5).map(|t| Affine::translation(t as f64, 0.0)).collect();
        for f in warp_sequence(&e0, &poses) {
            assert!(f.data().iter().all(|&v| v == 321.0));
        }
    }

    #[test]
    fn step_edge_advances_one_column_per_frame() {
        let (h, w) = (8, 24);
        let edge0 = 6;
        let e0 = Tensor::new(&[h, w], (0..h * w).map(|i| if i % w < edge0 { 100.0 } else { 900.0 }).collect()).unwrap();
        let poses: Vec<Affine> = (0..8).map(|t| Affine::translation(t as f64, 0.0)).collect();
        for (t, f) in warp_sequence(&e0, &poses).iter().enumerate() {
            // brute-force oracle: integer shift of the source columns
            for y in 0..h {
                for x in 3..w - 3 {
                    let src = x as isize - t as isize;
                    if src < 2 {
                        continue;
                    }
                    let expect = e0.data()[y * w + src as usize];
                    assert_eq!(f.data()[y * w + x], expect, "frame {t} col {x}");
                }
            }
            let first_bright = (t..w).find(|&x| f.data()[x] > 500.0).unwrap();
            assert_eq!(first_bright, edge0 + t);
        }
    }

    #[test]
    fn subsampling_picks_phase_zero() {
        let frames: Vec<Tensor> = (0..6).map(|i| Tensor::scalar(i as f64)).collect();
        let seq = IlluminanceSequence { frames, l_min: 1.0, l_rng: 1.0 };
        let sub = subsample_ground_truth(&seq, 3).unwrap();
        assert_eq!(sub.frames.iter().map(Tensor::item).collect::<Vec<_>>(), vec![0.0, 3.0]);
        assert_eq!(subsample_ground_truth(&seq, 1).unwrap(), seq);
        assert!(matches!(subsample_ground_truth(&seq, 4), Err(Error::Config(_))));

        let frames: Vec<Tensor> = (0..100).map(|i| Tensor::scalar(i as f64)).collect();
        let seq = IlluminanceSequence { frames, l_min: 1.0, l_rng: 1.0 };
        let sub = subsample_ground_truth(&seq, 10).unwrap();
        assert_eq!(sub.frames.iter().map(Tensor::item).collect::<Vec<_>>(), (0..10).map(|i| (10 * i) as f64).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(20, 10).validate().is_ok());
        assert!(matches!(cfg(25, 10).validate(), Err(Error::Config(_))));
        assert!(matches!(cfg(20, 0).validate(), Err(Error::Config(_))));
        let mut c = cfg(20, 10);
        c.width = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_sequence() {
        let c = cfg(30, 10);
        let e0 = Tensor::new(&[10, 12], (0..120).map(|i| 200.0 + ((i * 37) % 17) as f64 * 40.0).collect()).unwrap();
        let a = gen_motion_sequence(&e0, &c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_motion_sequence(&e0, &c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let d = gen_motion_sequence(&e0, &c, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert!(a.frames.iter().all(|f| f.data().iter().all(|&v| v >= 200.0)));
    }
}
