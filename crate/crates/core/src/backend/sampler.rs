//! Deterministic DDIM (eta = 0) sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{EpsilonPredictor, LayerConditioning};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

/// Supplies conditioning for a given timestep. Time-independent conditioning
/// returns the same value for every `t`.
pub trait ConditioningSource: Sync {
    fn conditioning_at(&self, t: usize) -> Result<LayerConditioning>;
}

impl ConditioningSource for LayerConditioning {
    fn conditioning_at(&self, _t: usize) -> Result<LayerConditioning> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub steps: usize,
    pub seed: u64,
    /// Classifier-free guidance scale; 1.0 disables guidance.
    pub guidance_scale: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            steps: 25,
            seed: 0,
            guidance_scale: 1.0,
        }
    }
}

/// Inference timesteps, descending: `i * (T / steps)` for `i in 0..steps`.
pub fn inference_timesteps(train_steps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps < 1 || steps > train_steps {
        return Err(Error::Spec(format!("sampler steps {steps} not in 1..={train_steps}")));
    }
    let ratio = train_steps / steps;
    Ok((0..steps).rev().map(|i| i * ratio).collect())
}

pub fn initial_noise(model: &dyn EpsilonPredictor, seed: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentTensor::randn(model.latent_shape(), &mut rng)
}

pub fn sample(
    model: &dyn EpsilonPredictor,
    cond: &dyn ConditioningSource,
    uncond: Option<&dyn ConditioningSource>,
    schedule: &NoiseSchedule,
    options: &SamplerOptions,
) -> Result<LatentTensor> {
    let timesteps = inference_timesteps(schedule.len(), options.steps)?;
    let ratio = schedule.len() / options.steps;
    let guided = options.guidance_scale != 1.0;
    if guided && uncond.is_none() {
        return Err(Error::Spec("guidance_scale != 1 needs unconditional conditioning".into()));
    }
    let alpha_bar = schedule.alpha_bar();
    let mut z = initial_noise(model, options.seed);
    for t in timesteps {
        let mut eps = model.predict(&z, t, &cond.conditioning_at(t)?)?;
        if guided {
            let source = uncond.expect("checked above");
            let eps_u = model.predict(&z, t, &source.conditioning_at(t)?)?;
            let g = options.guidance_scale;
            for (e, u) in eps.as_mut_slice().iter_mut().zip(eps_u.as_slice()) {
                *e = u + g * (*e - u);
            }
        }
        let ab = alpha_bar[t];
        let ab_prev = if t >= ratio { alpha_bar[t - ratio] } else { 1.0 };
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (spa, spn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (zv, e) in z.as_mut_slice().iter_mut().zip(eps.as_slice()) {
            let x0 = (*zv - sn * e) / sa;
            *zv = spa * x0 + spn * e;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("sampler state at t={t}")));
        }
    }
    Ok(z)
}
