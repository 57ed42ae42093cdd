//! The three prompt pools used to route training records.

use serde::{Deserialize, Serialize};

use crate::dataset::caption::{caption_words, PLACEHOLDER};
use crate::embedders::{ATTRACTOR_MARKER, SUBJECT_MARKER};
use crate::error::{Error, Result};

pub const SINGLE_SLOT_TEMPLATES: [&str; 15] = [
    "a photo of a {}.",
    "a rendering of a {}.",
    "the photo of a {}.",
    "a photo of a clean {}.",
    "a photo of a dirty {}.",
    "a dark photo of the {}.",
    "a photo of the cool {}.",
    "a close-up photo of a {}.",
    "a bright photo of the {}.",
    "a cropped photo of a {}.",
    "a photo of the {}.",
    "a good photo of the {}.",
    "a close-up photo of the {}.",
    "a rendition of the {}.",
    "a photo of a nice {}.",
];

pub const TWO_SLOT_TEMPLATES: [&str; 15] = [
    "a photo of a {} in the {}.",
    "a rendering of a {} in the {}.",
    "a cropped photo of the {} in the {}.",
    "the photo of a {} in the {}.",
    "a photo of a clean {} in the {}.",
    "a photo of my {} in the {}.",
    "a photo of the nice {} in the {}.",
    "a good photo of a {} in the {}.",
    "a rendition of a {} in the {}.",
    "a photo of the clean {} in the {}.",
    "a photo of a cool {} in the {}.",
    "a close-up photo of a {} in the {}.",
    "a photo of the cool {} in the {}.",
    "a cropped photo of a {} in the {}.",
    "a photo of one {} in the {}.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Subject,
    Background,
    Joint,
}

pub const POOL_KINDS: [PoolKind; 3] = [PoolKind::Subject, PoolKind::Background, PoolKind::Joint];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPools {
    pub subject: Vec<String>,
    pub background: Vec<String>,
    pub joint: Vec<String>,
}

/// Replace successive `{}` slots with `fills`.
fn fill_slots(template: &str, fills: &[&str]) -> String {
    let mut out = String::with_capacity(template.len() + 8);
    let mut rest = template;
    for fill in fills {
        match rest.find(PLACEHOLDER) {
            Some(i) => {
                out.push_str(&rest[..i]);
                out.push_str(fill);
                rest = &rest[i + PLACEHOLDER.len()..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

pub fn build_prompt_pools(supercategory: &str) -> Result<PromptPools> {
    let s = supercategory.trim();
    if s.is_empty() {
        return Err(Error::Spec("supercategory must be nonempty".into()));
    }
    Ok(PromptPools {
        subject: SINGLE_SLOT_TEMPLATES.iter().map(|t| fill_slots(t, &[SUBJECT_MARKER])).collect(),
        background: TWO_SLOT_TEMPLATES.iter().map(|t| fill_slots(t, &[s, ATTRACTOR_MARKER])).collect(),
        joint: TWO_SLOT_TEMPLATES
            .iter()
            .map(|t| fill_slots(t, &[SUBJECT_MARKER, ATTRACTOR_MARKER]))
            .collect(),
    })
}

impl PromptPools {
    pub fn pool(&self, kind: PoolKind) -> &[String] {
        match kind {
            PoolKind::Subject => &self.subject,
            PoolKind::Background => &self.background,
            PoolKind::Joint => &self.joint,
        }
    }

    /// Check the marker and supercategory membership rules of each pool.
    pub fn check(&self, supercategory: &str) -> Result<()> {
        let s_words = caption_words(supercategory);
        let has_s = |p: &str| {
            let words = caption_words(p);
            words.windows(s_words.len()).any(|w| w == s_words.as_slice())
        };
        let fail = |p: &str, why: &str| Err(Error::Spec(format!("prompt `{p}` {why}")));
        for p in &self.subject {
            if !p.contains(SUBJECT_MARKER) || p.contains(ATTRACTOR_MARKER) || has_s(p) {
                return fail(p, "breaks the subject-pool rule");
            }
        }
        for p in &self.background {
            if p.contains(SUBJECT_MARKER) || !p.contains(ATTRACTOR_MARKER) || !has_s(p) {
                return fail(p, "breaks the background-pool rule");
            }
        }
        for p in &self.joint {
            if !p.contains(SUBJECT_MARKER) || !p.contains(ATTRACTOR_MARKER) {
                return fail(p, "breaks the joint-pool rule");
            }
        }
        Ok(())
    }
}
