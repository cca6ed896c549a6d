use crate::{Error, Result};

/// Monotone piecewise cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Clone, Debug, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// Knots are sorted by `x`; duplicate abscissae are averaged.
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = points.to_vec();
        if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Numeric("non-finite curve point".into()));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut n = 0.0;
        for (x, y) in pts {
            if xs.last() == Some(&x) {
                let last = ys.last_mut().expect("paired with xs");
                n += 1.0;
                *last += (y - *last) / n;
            } else {
                xs.push(x);
                ys.push(y);
                n = 1.0;
            }
        }
        if xs.len() < 2 {
            return Err(Error::Config("a curve needs at least two distinct rates".into()));
        }
        let k = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..k - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; k];
        if k == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for i in 1..k - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[k - 1] = end_slope(h[k - 2], h[k - 3], delta[k - 2], delta[k - 3]);
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("two knots"))
    }

    /// Value at `x`, clamped to the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        let x = x.clamp(lo, hi);
        let i = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }

    /// `n` evenly spaced samples over the domain.
    pub fn sample(&self, n: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.domain();
        (0..n)
            .map(|i| {
                let x = if n > 1 { lo + (hi - lo) * i as f64 / (n - 1) as f64 } else { lo };
                (x, self.eval(x))
            })
            .collect()
    }

    /// Smallest `x` in the domain with `eval(x) <= y`, or `None` when the
    /// curve never reaches `y`.
    pub fn first_at_or_below(&self, y: f64) -> Option<f64> {
        for i in 0..self.xs.len() - 1 {
            if self.ys[i] <= y {
                return Some(self.xs[i]);
            }
            // Hermite segments stay within their knots' range when monotone,
            // so a crossing needs the right knot at or below `y`
            if self.ys[i + 1] <= y {
                let (mut a, mut b) = (self.xs[i], self.xs[i + 1]);
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if self.eval(m) <= y {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return Some(b);
            }
        }
        None
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// For each reference `(rate, loss)` point, the fraction of its rate the
/// policy curve saves while matching its loss: `1 − r*/r_ref`, where `r*` is
/// the smallest rate at which the policy curve's loss is no higher. `None`
/// marks reference points the policy cannot match.
pub fn matched_rate_reduction(reference: &[(f64, f64)], policy: &Pchip) -> Vec<Option<f64>> {
    reference
        .iter()
        .map(|&(r_ref, q_ref)| {
            let r = policy.first_at_or_below(q_ref)?;
            (r_ref > 0.0).then(|| 1.0 - r / r_ref)
        })
        .collect()
}
