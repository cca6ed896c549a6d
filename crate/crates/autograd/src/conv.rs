//! Direct 2D cross-correlation kernels. Layouts: input `[ci, h, w]`,
//! weight `[co, ci, kh, kw]`, output `[co, oh, ow]`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad_h - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad_w - self.kw) / self.stride + 1
    }

    /// Output positions along one axis whose tap `k` lands inside the input.
    fn valid_range(len: usize, out_len: usize, pad: usize, k: usize, stride: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let top = len as isize - 1 + pad as isize - k as isize;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top as usize / stride + 1).min(out_len);
        (lo.min(hi), hi)
    }
}

pub fn forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.co * oh * ow];
    for co in 0..g.co {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.ci {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = ConvGeom::valid_range(g.h, oh, g.pad_h, ky, g.stride);
                for kx in 0..g.kw {
                    let wv = weight[((co * g.ci + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = ConvGeom::valid_range(g.w, ow, g.pad_w, kx, g.stride);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad_h;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let shift = kx as isize - g.pad_w as isize;
                            let src = &row[(ox_lo as isize + shift) as usize..(ox_hi as isize + shift) as usize];
                            for (o, &xv) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += wv * xv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad_w];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` only when requested.
pub fn backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; weight.len()]);
    let mut db = vec![0.0; g.co];
    for co in 0..g.co {
        let go = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        db[co] = go.iter().sum();
        for ci in 0..g.ci {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = ConvGeom::valid_range(g.h, oh, g.pad_h, ky, g.stride);
                for kx in 0..g.kw {
                    let widx = ((co * g.ci + ci) * g.kh + ky) * g.kw + kx;
                    let wv = weight[widx];
                    let (ox_lo, ox_hi) = ConvGeom::valid_range(g.w, ow, g.pad_w, kx, g.stride);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad_h;
                        let grow = &go[oy * ow..(oy + 1) * ow];
                        let roff = base + iy * g.w;
                        if g.stride == 1 {
                            let lo = roff + ox_lo + kx - g.pad_w;
                            let hi = lo + (ox_hi - ox_lo);
                            let gs = &grow[ox_lo..ox_hi];
                            acc += gs.iter().zip(&x[lo..hi]).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(dx) = dx.as_mut() {
                                for (d, gv) in dx[lo..hi].iter_mut().zip(gs) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx - g.pad_w;
                                let gv = grow[ox];
                                acc += gv * x[roff + ix];
                                if let Some(dx) = dx.as_mut() {
                                    dx[roff + ix] += wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
