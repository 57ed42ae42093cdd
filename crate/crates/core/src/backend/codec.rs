use crate::tensor::LatentTensor;

/// Image <-> latent mapping. The diffusion losses only ever see latents.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, image: &LatentTensor) -> LatentTensor;
    fn decode(&self, latent: &LatentTensor) -> LatentTensor;
    /// Ratio of image resolution to latent resolution.
    fn downsample_factor(&self) -> usize;
}

/// Pixel-space codec: both directions are the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn encode(&self, image: &LatentTensor) -> LatentTensor {
        image.clone()
    }

    fn decode(&self, latent: &LatentTensor) -> LatentTensor {
        latent.clone()
    }

    fn downsample_factor(&self) -> usize {
        1
    }
}
