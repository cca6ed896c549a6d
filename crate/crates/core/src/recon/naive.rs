use super::Reconstruct;
use crate::{Error, Result, Tensor};

/// Integrates `D̃` in log space and exponentiates. The display frame is
/// `clamp(scale · exp(log_est), 0, 1)`; the estimate starts at zero.
#[derive(Clone, Debug)]
pub struct NaiveIntegrator {
    pub gain: f64,
    pub display_scale: f64,
    log_est: Option<Vec<f64>>,
}

impl Default for NaiveIntegrator {
    fn default() -> Self {
        Self {
            gain: 1.0,
            display_scale: 0.5,
            log_est: None,
        }
    }
}

impl NaiveIntegrator {
    /// Current linear-intensity estimate relative to the start.
    pub fn raw(&self) -> Option<Vec<f64>> {
        self.log_est.as_ref().map(|l| l.iter().map(|v| v.exp()).collect())
    }

    pub fn integrate(&mut self, d: &Tensor) -> Result<Tensor> {
        if !d.all_finite() {
            return Err(Error::Numeric("non-finite D̃".into()));
        }
        let est = self.log_est.get_or_insert_with(|| vec![0.0; d.len()]);
        if est.len() != d.len() {
            return Err(Error::Contract(format!("frame size changed to {:?}", d.shape())));
        }
        for (e, v) in est.iter_mut().zip(d.data()) {
            *e += self.gain * v;
        }
        let scale = self.display_scale;
        let out = est.iter().map(|v| (scale * v.exp()).clamp(0.0, 1.0)).collect();
        Ok(Tensor::new(d.shape(), out)?)
    }
}

impl Reconstruct for NaiveIntegrator {
    fn reset(&mut self) {
        self.log_est = None;
    }

    fn step(&mut self, d: &Tensor, _mask: &Tensor) -> Result<Tensor> {
        self.integrate(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_keeps_initial_estimate() {
        let mut n = NaiveIntegrator::default();
        let z = Tensor::zeros(&[3, 4]);
        for _ in 0..10 {
            let f = n.integrate(&z).unwrap();
            assert!(f.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn log_two_doubles_intensity() {
        // single threshold, noiseless: D̃ sums to ln 2 over three bins
        let mut n = NaiveIntegrator::default();
        let parts = [0.2, 0.3, std::f64::consts::LN_2 - 0.5];
        for p in parts {
            n.integrate(&Tensor::full(&[1, 1], p)).unwrap();
        }
        assert!((n.raw().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_clamped() {
        let mut n = NaiveIntegrator::default();
        let d = Tensor::new(&[1, 3], vec![50.0, -50.0, 0.1]).unwrap();
        let f = n.integrate(&d).unwrap();
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(f.data()[0], 1.0);
    }
}
