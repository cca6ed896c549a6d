use evslab_autograd::{Graph, Var};
use rand::Rng;

use crate::{error::config, Result, Tensor};

/// I.i.d. standard Gumbel noise `-ln(-ln U)`.
pub fn sample_gumbel<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // open interval keeps both logarithms finite
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape, data).expect("gumbel shape")
}

/// `softmax((logits + noise) / tau)` over the threshold axis of `[N_c, W]` logits.
pub fn gumbel_softmax_graph(g: &mut Graph, logits: Var, noise: &Tensor, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(config(format!("Gumbel-Softmax temperature must be positive, got {tau}")));
    }
    let n = g.constant(noise.clone());
    let z = g.add(logits, n)?;
    let z = g.scale(z, 1.0 / tau);
    Ok(g.softmax0(z)?)
}

/// Value-only [`gumbel_softmax_graph`].
pub fn gumbel_softmax(logits: &Tensor, noise: &Tensor, tau: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let out = gumbel_softmax_graph(&mut g, l, noise, tau)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlProbs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_without_noise_are_uniform() {
        let l = Tensor::full(&[4, 3], 0.7);
        let y = gumbel_softmax(&l, &Tensor::zeros(&[4, 3]), 1.6).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn low_temperature_approaches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = Tensor::new(&[3, 2], vec![0.1, 1.0, 0.5, -0.2, 0.3, 0.4]).unwrap();
        let gn = sample_gumbel(&[3, 2], &mut rng);
        let y = gumbel_softmax(&l, &gn, 1e-4).unwrap();
        for x in 0..2 {
            let z: Vec<f64> = (0..3).map(|j| l.data()[j * 2 + x] + gn.data()[j * 2 + x]).collect();
            let arg = (0..3).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap();
            assert!((y.data()[arg * 2 + x] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn outputs_lie_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = sample_gumbel(&[5, 8], &mut rng);
        let y = gumbel_softmax(&l, &sample_gumbel(&[5, 8], &mut rng), 0.3).unwrap();
        ControlProbs::new(y).unwrap();
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let l = Tensor::zeros(&[2, 1]);
        assert!(gumbel_softmax(&l, &l, 0.0).is_err());
        assert!(gumbel_softmax(&l, &l, -1.0).is_err());
    }
}
