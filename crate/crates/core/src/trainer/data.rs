//! Preloaded training images and batch assembly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::pools::{PoolKind, PromptPools};
use crate::backend::LatentCodec;
use crate::dataset::imageio::{load_mask, load_rgb};
use crate::dataset::{ingest_mask, DatasetManifest, MaskPair, SubjectRecord, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainImage {
    pub id: String,
    pub latent: LatentTensor,
    /// At latent resolution.
    pub masks: MaskPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub record: SubjectRecord,
    pub images: Vec<TrainImage>,
}

impl SubjectData {
    /// Load and encode every training image of `subject_id` with its mask.
    pub fn load(manifest: &DatasetManifest, subject_id: &str, codec: &dyn LatentCodec) -> Result<Self> {
        let record = manifest.subject(subject_id)?.clone();
        if record.train_images.is_empty() {
            return Err(Error::Data(format!("subject `{subject_id}` has no training images")));
        }
        let mut images = Vec::with_capacity(record.train_images.len());
        for img in &record.train_images {
            let mask_rel = img
                .mask
                .as_ref()
                .ok_or_else(|| Error::Data(format!("training image `{}` has no mask", img.image)))?;
            let pixels = load_rgb(&manifest.resolve(&img.image))?;
            let mask = load_mask(&manifest.resolve(mask_rel))?;
            if mask.dim() != (pixels.height(), pixels.width()) {
                return Err(Error::Data(format!("mask for `{}` does not match the image size", img.image)));
            }
            let masks = ingest_mask(mask.view().into_dyn(), DEFAULT_THRESHOLD)?.downsample(codec.downsample_factor())?;
            images.push(TrainImage {
                id: img.id(),
                latent: codec.encode(&pixels),
                masks,
            });
        }
        Ok(Self { record, images })
    }

    pub fn supercategory(&self) -> &str {
        &self.record.supercategory
    }

    pub fn subject_id(&self) -> &str {
        &self.record.subject_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub image_index: usize,
    pub image_id: String,
    pub pool: PoolKind,
    pub template_index: usize,
    pub prompt: String,
    pub t: usize,
    pub noise: LatentTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub subject_id: String,
    pub records: Vec<BatchRecord>,
}

impl TrainingBatch {
    pub fn count(&self, kind: PoolKind) -> usize {
        self.records.iter().filter(|r| r.pool == kind).count()
    }
}

pub fn sample_pool(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> PoolKind {
    let u: f64 = rng.random();
    if u < mix[0] {
        PoolKind::Subject
    } else if u < mix[0] + mix[1] {
        PoolKind::Background
    } else {
        PoolKind::Joint
    }
}

/// Sample `batch_size` records with replacement from the subject's images.
pub fn assemble_batch(
    data: &SubjectData,
    pools: &PromptPools,
    batch_size: usize,
    pool_mix: &[f64; 3],
    timesteps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingBatch> {
    if data.images.is_empty() {
        return Err(Error::Data(format!("subject `{}` has no training images", data.subject_id())));
    }
    let mut records = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let image_index = rng.random_range(0..data.images.len());
        let pool = sample_pool(rng, pool_mix);
        let templates = pools.pool(pool);
        let template_index = rng.random_range(0..templates.len());
        let t = rng.random_range(0..timesteps);
        let image = &data.images[image_index];
        let noise = LatentTensor::randn(image.latent.shape(), rng);
        records.push(BatchRecord {
            image_index,
            image_id: image.id.clone(),
            pool,
            template_index,
            prompt: templates[template_index].clone(),
            t,
            noise,
        });
    }
    Ok(TrainingBatch {
        subject_id: data.subject_id().to_string(),
        records,
    })
}
