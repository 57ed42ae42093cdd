//! Prompt-driven generation with learned tokens.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::plan::{EvaluationPlan, TaskKey};
use crate::backend::{sample, Backend, LatentCodec, SamplerOptions};
use crate::dataset::imageio::{encode_png_rgb, load_rgb, quantize, write_bytes};
use crate::embedders::PromptConditioner;
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;
use crate::trainer::{Checkpoint, TrainerState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationOptions {
    pub sampler_steps: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { sampler_steps: 25 }
    }
}

/// Sample one image for `prompt`; the result is 8-bit quantized so that it
/// equals what a PNG round trip would give.
pub fn generate_image(
    backend: &Backend,
    state: &TrainerState,
    prompt: &str,
    image_id: Option<&str>,
    seed: u64,
    options: &GenerationOptions,
) -> Result<LatentTensor> {
    let cond = PromptConditioner::new(&backend.encoder, &state.tokens, state.method(), prompt, image_id)?;
    let latent = sample(
        &backend.denoiser,
        &cond,
        None,
        &backend.schedule,
        &SamplerOptions {
            steps: options.sampler_steps,
            seed,
            guidance_scale: 1.0,
        },
    )?;
    Ok(quantize(&backend.codec.decode(&latent)))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratedSet {
    pub images: BTreeMap<TaskKey, LatentTensor>,
}

pub fn image_file_name(key: &TaskKey) -> String {
    format!("{}_c{:02}_r{:02}.png", key.image_id, key.caption_index, key.replicate)
}

impl GeneratedSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Write one PNG per image under `dir`; returns paths in key order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.images.len());
        for (key, img) in &self.images {
            let path = dir.join(image_file_name(key));
            write_bytes(&path, &encode_png_rgb(img))?;
            out.push(path);
        }
        Ok(out)
    }

    /// Read back the images of `plan` from `dir`.
    pub fn load(plan: &EvaluationPlan, dir: &Path) -> Result<Self> {
        let mut images = BTreeMap::new();
        for task in &plan.tasks {
            let path = dir.join(image_file_name(&task.key));
            if !path.exists() {
                return Err(Error::MissingOutput(format!("{}", path.display())));
            }
            images.insert(task.key.clone(), load_rgb(&path)?);
        }
        Ok(Self { images })
    }
}

/// Generate every task of `plan` with the checkpoint of its subject.
pub fn run_generation(
    plan: &EvaluationPlan,
    checkpoints: &BTreeMap<String, Checkpoint>,
    backend: &Backend,
    options: &GenerationOptions,
) -> Result<GeneratedSet> {
    for ckpt in checkpoints.values() {
        if ckpt.backend != backend.config {
            return Err(Error::Spec(format!(
                "checkpoint for `{}` was trained against a different backend",
                ckpt.subject_id
            )));
        }
    }
    let results = plan
        .tasks
        .par_iter()
        .map(|task| {
            let ckpt = checkpoints.get(&task.key.subject_id).ok_or_else(|| {
                Error::MissingOutput(format!("no checkpoint for subject `{}`", task.key.subject_id))
            })?;
            let img = generate_image(backend, &ckpt.state, &task.prompt, None, task.seed, options)?;
            Ok((task.key.clone(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedSet {
        images: results.into_iter().collect(),
    })
}
