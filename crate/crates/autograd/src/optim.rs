use crate::Tensor;

/// Adam with bias correction. Moment buffers are created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_against_gradient_sign() {
        for &g in &[3.0, -0.002, 40.0] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
            opt.step(&mut p, &[Tensor::scalar(g)]);
            let delta = p[0].item() - 1.0;
            assert!(delta * g < 0.0);
            assert!((delta.abs() - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = vec![Tensor::new(&[2], vec![0.5, -1.5]).unwrap()];
        let before = p.clone();
        let mut opt = Adam::new(0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[Tensor::new(&[2], vec![1.0, 2.0]).unwrap()]);
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::scalar(4.0)];
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = 2.0 * (p[0].item() - 1.0);
            opt.step(&mut p, &[Tensor::scalar(g)]);
        }
        assert!((p[0].item() - 1.0).abs() < 1e-3);
    }
}
