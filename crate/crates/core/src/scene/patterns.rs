//! Procedural brightness videos used for calibration and tests. Every
//! function returns brightness frames in `[0, 1]` at the simulation rate.

use std::f64::consts::PI;

use rand::Rng;

use crate::Tensor;

fn render(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            data.push(f(x as f64, y as f64).clamp(0.0, 1.0));
        }
    }
    Tensor::new(&[h, w], data).expect("h*w samples")
}

/// A soft straight edge sweeping across the frame at constant speed, with
/// random orientation, contrast and speed.
pub fn moving_edge<R: Rng + ?Sized>(h: usize, w: usize, frames: usize, rng: &mut R) -> Vec<Tensor> {
    let angle = rng.random_range(-0.5..0.5f64);
    let (lo, hi) = (rng.random_range(0.05..0.25), rng.random_range(0.6..0.95));
    let speed = rng.random_range(0.15..0.35) * w as f64 / frames.max(1) as f64 * 2.0;
    let start = rng.random_range(0.1..0.3) * w as f64;
    let (sn, cs) = angle.sin_cos();
    (0..frames)
        .map(|t| {
            let pos = start + speed * t as f64;
            render(h, w, |x, y| {
                let d = cs * x + sn * (y - h as f64 / 2.0) - pos;
                lo + (hi - lo) / (1.0 + (-d / 0.6).exp())
            })
        })
        .collect()
}

/// Sum of random gratings translating at a constant velocity; the event
/// statistics are stationary in time.
pub fn drifting_texture<R: Rng + ?Sized>(h: usize, w: usize, frames: usize, velocity: (f64, f64), rng: &mut R) -> Vec<Tensor> {
    let comps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let period = rng.random_range(6.0..16.0);
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.05..0.12);
            (2.0 * PI * theta.cos() / period, 2.0 * PI * theta.sin() / period, phase, amp)
        })
        .collect();
    (0..frames)
        .map(|t| {
            let (ox, oy) = (velocity.0 * t as f64, velocity.1 * t as f64);
            render(h, w, |x, y| {
                0.5 + comps
                    .iter()
                    .map(|(kx, ky, ph, a)| a * (kx * (x - ox) + ky * (y - oy) + ph).sin())
                    .sum::<f64>()
            })
        })
        .collect()
}

/// Vertical bands of differing texture contrast drifting downwards, so a
/// column keeps its character over time. Returns the frames and the
/// per-column texture amplitude.
pub fn banded_texture<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    frames: usize,
    amplitudes: &[f64],
    speed: f64,
    rng: &mut R,
) -> (Vec<Tensor>, Vec<f64>) {
    let mut col_amp = Vec::with_capacity(w);
    while col_amp.len() < w {
        let band = rng.random_range(3..=w.div_ceil(3).max(4));
        let a = amplitudes[rng.random_range(0..amplitudes.len())];
        col_amp.extend(std::iter::repeat_n(a, band));
    }
    col_amp.truncate(w);
    let base: Vec<f64> = (0..w).map(|_| rng.random_range(0.35..0.65)).collect();
    let phases: Vec<(f64, f64)> = (0..w).map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI))).collect();
    let period = rng.random_range(5.0..9.0);
    let out = (0..frames)
        .map(|t| {
            let shift = speed * t as f64;
            render(h, w, |x, y| {
                let c = x as usize;
                let (p1, p2) = phases[c];
                let k = 2.0 * PI / period;
                let tex = 0.7 * (k * (y - shift) + p1).sin() + 0.3 * (2.3 * k * (y - shift) + p2).sin();
                base[c] + col_amp[c] * tex
            })
        })
        .collect();
    (out, col_amp)
}

/// Same frame repeated.
pub fn static_scene(frame: &Tensor, frames: usize) -> Vec<Tensor> {
    vec![frame.clone(); frames]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patterns_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut all = moving_edge(16, 20, 10, &mut rng);
        all.extend(drifting_texture(16, 20, 10, (0.3, 0.1), &mut rng));
        all.extend(banded_texture(16, 20, 10, &[0.0, 0.1, 0.3], 0.5, &mut rng).0);
        for f in &all {
            assert_eq!(f.shape(), &[16, 20]);
            assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bands_cover_every_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, amp) = banded_texture(8, 33, 2, &[0.05, 0.2], 0.5, &mut rng);
        assert_eq!(amp.len(), 33);
        assert!(amp.iter().all(|a| *a == 0.05 || *a == 0.2));
    }
}
