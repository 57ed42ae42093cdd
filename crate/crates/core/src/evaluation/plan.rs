//! Evaluation plans: one task per (reference image, caption, replicate).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::embedding::hash_seed;
use crate::dataset::{fill_caption, DatasetManifest};
use crate::embedders::SUBJECT_MARKER;
use crate::error::{Error, Result};
use crate::trainer::pools::SINGLE_SLOT_TEMPLATES;

pub const DEFAULT_IMAGES_PER_PROMPT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}` (expected train or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Identifies one generated image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub subject_id: String,
    pub image_id: String,
    pub caption_index: usize,
    pub replicate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub key: TaskKey,
    /// Caption with its `{}` slot.
    pub caption: String,
    /// Conditioning prompt: `{}` filled with the subject token.
    pub prompt: String,
    /// Text-score prompt: `{}` filled with the supercategory word.
    pub text_prompt: String,
    /// Reference image path relative to the manifest root.
    pub reference: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub split: Split,
    pub images_per_prompt: usize,
    pub seed: u64,
    pub tasks: Vec<EvalTask>,
}

impl EvaluationPlan {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.tasks.iter().map(|t| t.key.subject_id.clone()).collect();
        s.dedup();
        s
    }

    /// Keep only tasks of the listed subjects.
    pub fn restrict(mut self, subjects: &[String]) -> Self {
        self.tasks.retain(|t| subjects.contains(&t.key.subject_id));
        self
    }
}

pub fn task_seed(plan_seed: u64, key: &TaskKey) -> u64 {
    hash_seed(&[
        &plan_seed.to_string(),
        &key.subject_id,
        &key.image_id,
        &key.caption_index.to_string(),
        &key.replicate.to_string(),
    ])
}

/// Test split: every caption of every test image. Train split: the training
/// templates against every training image.
pub fn build_plan(manifest: &DatasetManifest, split: Split, images_per_prompt: usize, seed: u64) -> Result<EvaluationPlan> {
    if images_per_prompt == 0 {
        return Err(Error::Spec("images_per_prompt must be >= 1".into()));
    }
    let mut tasks = Vec::new();
    for subject in &manifest.subjects {
        let images = match split {
            Split::Test => &subject.test_images,
            Split::Train => &subject.train_images,
        };
        for image in images {
            let captions: Vec<String> = match split {
                Split::Test => image.captions.clone(),
                Split::Train => SINGLE_SLOT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            };
            if captions.is_empty() {
                return Err(Error::Spec(format!("test image `{}` has no captions", image.image)));
            }
            for (caption_index, caption) in captions.iter().enumerate() {
                let prompt = fill_caption(caption, SUBJECT_MARKER)?;
                let text_prompt = fill_caption(caption, &subject.supercategory)?;
                for replicate in 0..images_per_prompt {
                    let key = TaskKey {
                        subject_id: subject.subject_id.clone(),
                        image_id: image.id(),
                        caption_index,
                        replicate,
                    };
                    tasks.push(EvalTask {
                        seed: task_seed(seed, &key),
                        key,
                        caption: caption.clone(),
                        prompt: prompt.clone(),
                        text_prompt: text_prompt.clone(),
                        reference: image.image.clone(),
                    });
                }
            }
        }
    }
    Ok(EvaluationPlan {
        split,
        images_per_prompt,
        seed,
        tasks,
    })
}
