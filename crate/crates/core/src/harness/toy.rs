use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{patterns, scale_illuminance, IlluminanceSequence};
use crate::sensor::SensorConfig;
use crate::trainer::Sample;
use crate::Result;

/// Small banded-texture scenes: columns alternate between textures of
/// differing contrast, so the best threshold differs across columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpus {
    pub height: usize,
    pub width: usize,
    /// Reconstruction-rate length of every scene.
    pub bins: usize,
    pub subsample: usize,
    pub scenes: usize,
    pub amplitudes: Vec<f64>,
    /// Downward drift in pixels per simulation frame.
    pub speed: f64,
    pub thresholds: Vec<f64>,
}

impl Default for ToyCorpus {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            bins: 32,
            subsample: 4,
            scenes: 8,
            amplitudes: vec![0.1, 0.3],
            speed: 0.4,
            thresholds: vec![1.15, 1.7],
        }
    }
}

impl ToyCorpus {
    pub fn scene<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<IlluminanceSequence> {
        let (frames, _) = patterns::banded_texture(
            self.height,
            self.width,
            self.bins * self.subsample,
            &self.amplitudes,
            self.speed,
            rng,
        );
        let l_min = rng.random_range(100.0..1000.0);
        let l_rng = rng.random_range(1000.0..5000.0);
        let frames = frames.iter().map(|f| scale_illuminance(f, l_min, l_rng)).collect::<Result<_>>()?;
        Ok(IlluminanceSequence { frames, l_min, l_rng })
    }

    /// `scenes` samples drawn from `seed`; the sensor uses the default noise
    /// model with its own seed per scene.
    pub fn generate(&self, seed: u64) -> Result<Vec<Sample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.scenes)
            .map(|_| {
                let scene = self.scene(&mut rng)?;
                let sensor = SensorConfig {
                    thresholds: self.thresholds.clone(),
                    rng_seed: rng.random(),
                    ..SensorConfig::default()
                };
                Sample::simulate(&scene, &sensor, self.subsample)
            })
            .collect()
    }
}
