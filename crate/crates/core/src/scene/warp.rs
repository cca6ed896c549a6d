//! Bicubic resampling under affine maps with symmetric boundary extension.

use crate::Tensor;

/// Affine pose relative to the source image: translation in pixels, rotation
/// in radians and log-scale, all about the image centre.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Affine {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
    pub log_scale: f64,
}

impl Affine {
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            tx,
            ty,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Source coordinate sampled by output pixel `(x, y)`.
    fn source(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (dx, dy) = (x - cx - self.tx, y - cy - self.ty);
        if self.rotation == 0.0 && self.log_scale == 0.0 {
            return (dx + cx, dy + cy);
        }
        let inv_s = (-self.log_scale).exp();
        let (sn, cs) = self.rotation.sin_cos();
        // inverse rotation, then inverse scale
        let sx = (cs * dx + sn * dy) * inv_s;
        let sy = (-sn * dx + cs * dy) * inv_s;
        (sx + cx, sy + cy)
    }
}

/// Mirror an integer index into `[0, n)`, repeating the edge sample
/// (`-1 -> 0`, `-2 -> 1`, `n -> n-1`).
pub fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Keys cubic convolution kernel, a = -0.5.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    const A: f64 = -0.5;
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        (((t - 5.0) * t + 8.0) * t - 4.0) * A
    } else {
        0.0
    }
}

fn cubic_weights(frac: f64) -> [f64; 4] {
    if frac == 0.0 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    [keys(frac + 1.0), keys(frac), keys(1.0 - frac), keys(2.0 - frac)]
}

/// Resample `img: [h, w]` under `pose`.
pub fn warp_bicubic(img: &Tensor, pose: &Affine) -> Tensor {
    if pose.is_identity() {
        return img.clone();
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = pose.source(x as f64, y as f64, cx, cy);
            let (fx, fy) = (sx.floor(), sy.floor());
            let wx = cubic_weights(sx - fx);
            let wy = cubic_weights(sy - fy);
            let (ix, iy) = (fx as isize, fy as isize);
            let mut acc = 0.0;
            for (j, wyj) in wy.iter().enumerate() {
                if *wyj == 0.0 {
                    continue;
                }
                let row = symmetric_index(iy - 1 + j as isize, h) * w;
                let mut racc = 0.0;
                for (i, wxi) in wx.iter().enumerate() {
                    if *wxi != 0.0 {
                        racc += wxi * src[row + symmetric_index(ix - 1 + i as isize, w)];
                    }
                }
                acc += wyj * racc;
            }
            out[y * w + x] = acc;
        }
    }
    Tensor::new(&[h, w], out).expect("shape preserved")
}
