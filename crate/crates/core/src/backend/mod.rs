//! Frozen generative backend: noise schedule, latent codec, epsilon
//! predictor, text encoder and sampler, bundled behind [`Backend`].

pub mod codec;
pub mod denoiser;
pub mod sampler;
pub mod schedule;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use codec::{IdentityCodec, LatentCodec};
pub use denoiser::{DenoiserConfig, EpsilonPredictor, LayerConditioning, Sequence, ToyDenoiser};
pub use sampler::{sample, ConditioningSource, SamplerOptions};
pub use schedule::{add_noise, make_noise_schedule, NoiseSchedule, ScheduleKind};

use crate::archive::Archive;
use crate::embedders::encoder::{EncoderConfig, TextEncoder};
use crate::error::{Error, Result};

const CONFIG_KEY: &str = "backend/config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub timesteps: usize,
    pub schedule: ScheduleKind,
    pub denoiser: DenoiserConfig,
    pub encoder: EncoderConfig,
}

impl BackendConfig {
    /// Toy configuration with component seeds derived from `seed`.
    pub fn toy(seed: u64) -> Self {
        let denoiser = DenoiserConfig {
            seed: seed.wrapping_mul(2).wrapping_add(11),
            ..Default::default()
        };
        let encoder = EncoderConfig {
            embed_dim: denoiser.embed_dim,
            seed: seed.wrapping_mul(2).wrapping_add(12),
            ..Default::default()
        };
        Self {
            timesteps: 1000,
            schedule: ScheduleKind::Linear,
            denoiser,
            encoder,
        }
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::toy(0)
    }
}

#[derive(Debug, Clone)]
pub struct Backend {
    pub config: BackendConfig,
    pub schedule: NoiseSchedule,
    pub denoiser: ToyDenoiser,
    pub encoder: TextEncoder,
    pub codec: IdentityCodec,
}

impl Backend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        Self::check(&config)?;
        let schedule = make_noise_schedule(config.timesteps, config.schedule)?;
        let denoiser = ToyDenoiser::new(config.denoiser.clone(), &schedule)?;
        let encoder = TextEncoder::new(config.encoder.clone())?;
        Ok(Self {
            config,
            schedule,
            denoiser,
            encoder,
            codec: IdentityCodec,
        })
    }

    fn check(config: &BackendConfig) -> Result<()> {
        if config.denoiser.embed_dim != config.encoder.embed_dim {
            return Err(Error::Dimension {
                expected: config.denoiser.embed_dim,
                got: config.encoder.embed_dim,
            });
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.denoiser.config().layers
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn timesteps(&self) -> usize {
        self.schedule.len()
    }

    pub fn to_archive(&self) -> Archive {
        let mut archive = Archive::new();
        archive.set_meta(
            CONFIG_KEY,
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        self.denoiser.to_archive(&mut archive, "denoiser/");
        self.encoder.to_archive(&mut archive, "encoder/");
        archive
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let config: BackendConfig = serde_json::from_str(archive.meta(CONFIG_KEY)?)
            .map_err(|e| Error::Format(format!("backend config: {e}")))?;
        Self::check(&config)?;
        let schedule = make_noise_schedule(config.timesteps, config.schedule)?;
        let denoiser = ToyDenoiser::from_archive(config.denoiser.clone(), &schedule, archive, "denoiser/")?;
        let encoder = TextEncoder::from_archive(config.encoder.clone(), archive, "encoder/")?;
        Ok(Self {
            config,
            schedule,
            denoiser,
            encoder,
            codec: IdentityCodec,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
