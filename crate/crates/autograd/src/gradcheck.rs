//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Graph, Tensor, Var};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Uniform random tensor on `[lo, hi)`.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// `out` reduced to a scalar through a fixed random projection so every
/// output element contributes.
fn scalar_of(g: &mut Graph, out: Var, proj_seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
    let shape = g.shape(out).to_vec();
    let proj = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(out, proj).expect("same shape");
    g.sum(p)
}

/// Max relative error between analytic and central-difference gradients of
/// `f` with respect to every entry of every input. Entries much smaller than
/// the gradient's largest component are compared against that scale instead
/// of their own magnitude, and none against less than a thousand times the
/// rounding resolution of the difference quotient.
pub fn max_relative_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    max_relative_error_with(inputs, FD_EPS, f)
}

/// [`max_relative_error`] with step `eps`.
pub fn max_relative_error_with<F>(inputs: &[Tensor], eps: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let s = scalar_of(&mut g, out, 99);
        g.value(s).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let s = scalar_of(&mut g, out, 99);
    let grads = g.backward(s).expect("scalar output");
    let resolution = f64::EPSILON * g.value(s).item().abs() / eps;

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-3 * scale).max(1e3 * resolution).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Worst relative error per group of primitives, on fixed random inputs.
pub fn primitive_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("elementwise_arithmetic", elementwise_arithmetic()),
        ("smooth_nonlinearities", smooth_nonlinearities()),
        ("reductions_and_reshapes", reductions_and_reshapes()),
        ("softmax_over_leading_axis", softmax_over_leading_axis()),
        ("conv2d_strided_and_padded", conv2d_strided_and_padded()),
        ("conv1d_same_padding", conv1d_same_padding()),
        ("upsample_and_broadcast", upsample_and_broadcast()),
        ("pad_and_crop", pad_and_crop()),
        ("column_scaling_as_mask_fusion", column_scaling_as_mask_fusion()),
        ("column_statistics", column_statistics()),
        ("box_filter_valid_window", box_filter_valid_window()),
        ("gated_recurrent_cell_composite", gated_recurrent_cell_composite()),
    ]
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn elementwise_arithmetic() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[3, 4], -2.0, 2.0);
    let b = random_tensor(&mut r, &[3, 4], 0.5, 2.0);
    let err = max_relative_error(&[a, b], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let a2 = g.mul(v[0], v[0]).unwrap();
        let d = g.sub(s, a2).unwrap();
        let m = g.mul(d, v[1]).unwrap();
        let b1 = g.affine(v[1], 1.0, 1.0);
        let q = g.div(m, b1).unwrap();
        let sq = g.mul(q, q).unwrap();
        g.affine(sq, 0.3, 1.0)
    });
    worst = worst.max(err);
    worst
}

fn smooth_nonlinearities() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[2, 5], -3.0, 3.0);
    for op in 0..5 {
        let err = max_relative_error(std::slice::from_ref(&a), |g, v| match op {
            0 => g.sigmoid(v[0]),
            1 => g.tanh(v[0]),
            2 => g.exp(v[0]),
            3 => g.relu(v[0]),
            _ => g.abs(v[0]),
        });
        worst = worst.max(err);
    }
    worst
}

fn reductions_and_reshapes() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let err = max_relative_error(std::slice::from_ref(&a), |g, v| {
        let s = g.sum(v[0]);
        let m = g.mean(v[0]);
        let t = g.add(s, m).unwrap();
        g.reshape(t, &[1]).unwrap()
    });
    worst = worst.max(err);
    let b = random_tensor(&mut r, &[1, 3, 4], -1.0, 1.0);
    let err = max_relative_error(&[a, b], |g, v| {
        let c = g.concat0(&[v[0], v[1]]).unwrap();
        let s = g.select0(c, 2).unwrap();
        let st = g.stack0(&[s, s]).unwrap();
        let sq = g.mul(st, st).unwrap();
        g.reshape(sq, &[24]).unwrap()
    });
    worst = worst.max(err);
    worst
}

fn softmax_over_leading_axis() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[5, 7], -2.0, 2.0);
    let err = max_relative_error(&[a], |g, v| g.softmax0(v[0]).unwrap());
    worst = worst.max(err);
    worst
}

fn conv2d_strided_and_padded() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = random_tensor(&mut r, &[2, 7, 6], -1.0, 1.0);
        let w = random_tensor(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
        let b = random_tensor(&mut r, &[3], -0.5, 0.5);
        let err = max_relative_error(&[x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, (pad, pad)).unwrap());
        worst = worst.max(err);
    }
    worst
}

fn conv1d_same_padding() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let x = random_tensor(&mut r, &[4, 9], -1.0, 1.0);
    let w = random_tensor(&mut r, &[3, 4, 5], -0.5, 0.5);
    let b = random_tensor(&mut r, &[3], -0.5, 0.5);
    let err = max_relative_error(&[x, w, b], |g, v| g.conv1d(v[0], v[1], Some(v[2])).unwrap());
    worst = worst.max(err);
    worst
}

fn upsample_and_broadcast() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let err = max_relative_error(&[a], |g, v| g.upsample2x(v[0]).unwrap());
    worst = worst.max(err);
    let m = random_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let err = max_relative_error(&[m], |g, v| g.broadcast_rows(v[0], 4).unwrap());
    worst = worst.max(err);
    worst
}

fn pad_and_crop() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[2, 3, 5], -1.0, 1.0);
    let err = max_relative_error(&[a], |g, v| {
        let p = g.fit_hw(v[0], 4, 8).unwrap();
        let sq = g.mul(p, p).unwrap();
        g.fit_hw(sq, 2, 6).unwrap()
    });
    worst = worst.max(err);
    worst
}

fn column_scaling_as_mask_fusion() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let x = random_tensor(&mut r, &[2, 4, 6], -1.0, 1.0);
    let s = random_tensor(&mut r, &[6], 0.0, 1.0);
    let err = max_relative_error(&[x, s], |g, v| g.col_scale(v[0], v[1]).unwrap());
    worst = worst.max(err);
    worst
}

fn column_statistics() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[6, 5], -1.0, 1.0);
    let err = max_relative_error(&[a], |g, v| {
        let m = g.col_mean(v[0]).unwrap();
        let x = g.col_max(v[0]).unwrap();
        let s = g.col_std(v[0]).unwrap();
        g.concat0(&[m, x, s]).unwrap()
    });
    worst = worst.max(err);
    worst
}

fn box_filter_valid_window() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let a = random_tensor(&mut r, &[9, 8], -1.0, 1.0);
    let err = max_relative_error(&[a], |g, v| g.box_filter(v[0], 3).unwrap());
    worst = worst.max(err);
    worst
}

fn gated_recurrent_cell_composite() -> f64 {
    // z = sigmoid(conv(x)), h' = h + z * (tanh(conv(x)) - h)
    let mut worst: f64 = 0.0;
    let mut r = rng();
    let x = random_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
    let h = random_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
    let wz = random_tensor(&mut r, &[2, 4, 3, 3], -0.3, 0.3);
    let wh = random_tensor(&mut r, &[2, 4, 3, 3], -0.3, 0.3);
    let err = max_relative_error(&[x, h, wz, wh], |g, v| {
        let xh = g.concat0(&[v[0], v[1]]).unwrap();
        let zp = g.conv2d(xh, v[2], None, 1, (1, 1)).unwrap();
        let z = g.sigmoid(zp);
        let cp = g.conv2d(xh, v[3], None, 1, (1, 1)).unwrap();
        let c = g.tanh(cp);
        let d = g.sub(c, v[1]).unwrap();
        let zd = g.mul(z, d).unwrap();
        g.add(v[1], zd).unwrap()
    });
    worst = worst.max(err);
    worst
}
