//! Image-quality metrics on `[H, W]` frames in `[0, 1]`, plus the
//! differentiable image loss used in training.

use evslab_autograd::{Graph, Var};

use crate::{Error, Result, Tensor};

pub const SSIM_WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Reported PSNR for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;

fn dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    match (a.shape(), b.shape()) {
        ([h, w], [h2, w2]) if h == h2 && w == w2 && *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(Error::Contract(format!("frames {:?} and {:?} differ", a.shape(), b.shape()))),
    }
}

fn window(h: usize, w: usize) -> usize {
    SSIM_WINDOW.min(h).min(w)
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    dims(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    dims(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// PSNR for unit data range, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over all valid uniform windows of side 7 (smaller for tiny frames).
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (h, w) = dims(a, b)?;
    let k = window(h, w);
    let n = (k * k) as f64;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + k {
                for x in x0..x0 + k {
                    let (p, q) = (ad[y * w + x], bd[y * w + x]);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of two `[H, W]` graph nodes, built from box filters.
pub fn ssim_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (h, w) = match (g.shape(a), g.shape(b)) {
        ([h, w], s) if s == [*h, *w] => (*h, *w),
        (sa, sb) => return Err(Error::Contract(format!("frames {sa:?} and {sb:?} differ"))),
    };
    let k = window(h, w);
    let ma = g.box_filter(a, k)?;
    let mb = g.box_filter(b, k)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let maa = g.box_filter(aa, k)?;
    let mbb = g.box_filter(bb, k)?;
    let mab = g.box_filter(ab, k)?;
    let ma2 = g.mul(ma, ma)?;
    let mb2 = g.mul(mb, mb)?;
    let mamb = g.mul(ma, mb)?;
    let va = g.sub(maa, ma2)?;
    let vb = g.sub(mbb, mb2)?;
    let cov = g.sub(mab, mamb)?;
    let num_l = g.affine(mamb, 2.0, C1);
    let num_c = g.affine(cov, 2.0, C2);
    let num = g.mul(num_l, num_c)?;
    let den_l = g.add(ma2, mb2)?;
    let den_l = g.affine(den_l, 1.0, C1);
    let den_c = g.add(va, vb)?;
    let den_c = g.affine(den_c, 1.0, C2);
    let den = g.mul(den_l, den_c)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// `0.5·L1 + 0.5·(1 − SSIM)` of one frame pair on the graph.
pub fn frame_loss_graph(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let ad = g.abs(d);
    let l1 = g.mean(ad);
    let s = ssim_graph(g, pred, gt)?;
    let dis = g.affine(s, -0.5, 0.5);
    let half_l1 = g.scale(l1, 0.5);
    Ok(g.add(half_l1, dis)?)
}

/// Image loss of one frame pair without a graph.
pub fn frame_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(0.5 * l1(pred, gt)? + 0.5 * (1.0 - ssim(pred, gt)?))
}

/// Mean frame loss over a sequence.
pub fn image_loss(pred: &[Tensor], gt: &[Tensor]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Contract(format!("{} predictions for {} ground-truth frames", pred.len(), gt.len())));
    }
    let mut total = 0.0;
    for (p, q) in pred.iter().zip(gt) {
        total += frame_loss(p, q)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub ssim: f64,
    pub psnr: f64,
    pub l1: f64,
    pub loss: f64,
}

/// Sequence means of every metric.
pub fn quality(pred: &[Tensor], gt: &[Tensor]) -> Result<QualityReport> {
    let loss = image_loss(pred, gt)?;
    let n = pred.len() as f64;
    let mut r = QualityReport { loss, ..Default::default() };
    for (p, q) in pred.iter().zip(gt) {
        r.ssim += ssim(p, q)? / n;
        r.psnr += psnr(p, q)? / n;
        r.l1 += l1(p, q)? / n;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize) -> Tensor {
        Tensor::new(&[h, w], (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect()).unwrap()
    }

    #[test]
    fn identical_frames() {
        let a = checker(9, 11);
        assert_eq!(image_loss(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn inverted_binary_image_has_unit_l1() {
        let a = checker(8, 8);
        let b = a.map(|v| 1.0 - v);
        assert_eq!(l1(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn constant_pair_has_unit_ssim() {
        let a = Tensor::full(&[10, 10], 0.3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(frame_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_matches_closed_form() {
        let a = Tensor::full(&[4, 4], 0.5);
        let b = Tensor::full(&[4, 4], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn graph_and_direct_ssim_agree() {
        let a = Tensor::new(&[9, 12], (0..108).map(|i| ((i * 37 % 101) as f64) / 100.0).collect()).unwrap();
        let b = Tensor::new(&[9, 12], (0..108).map(|i| ((i * 53 % 97) as f64) / 96.0).collect()).unwrap();
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let s = ssim_graph(&mut g, va, vb).unwrap();
        assert!((g.value(s).item() - ssim(&a, &b).unwrap()).abs() < 1e-12);
        let l = frame_loss_graph(&mut g, va, vb).unwrap();
        assert!((g.value(l).item() - frame_loss(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tiny_frames_shrink_the_window() {
        let a = checker(3, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(ssim(&checker(4, 4), &checker(4, 5)).is_err());
        assert!(image_loss(&[], &[]).is_err());
    }
}
