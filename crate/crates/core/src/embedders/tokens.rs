//! Learnable subject token and per-image attractor tokens.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoder::TextEncoder;
use crate::archive::{Archive, ArrayEntry};
use crate::dataset::SubjectRecord;
use crate::error::{Error, Result};

/// Word whose embedding seeds every attractor.
pub const ATTRACTOR_INIT_WORD: &str = "background";
/// Standard deviation of the noise added to each attractor at init.
pub const ATTRACTOR_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenInit {
    SupercategoryWord,
    Random,
}

impl std::str::FromStr for TokenInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supercategory" | "supercategory_word" => Ok(TokenInit::SupercategoryWord),
            "random" => Ok(TokenInit::Random),
            other => Err(Error::Usage(format!("unknown token init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    pub dim: usize,
    pub subject: Array1<f64>,
    /// Keyed by training image id.
    pub attractors: BTreeMap<String, Array1<f64>>,
}

/// Mean embedding of the words of `phrase`; every word must be in vocabulary.
pub fn phrase_embedding(encoder: &TextEncoder, phrase: &str) -> Result<Array1<f64>> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Init(format!("empty phrase `{phrase}`")));
    }
    let mut acc = Array1::zeros(encoder.dim());
    for w in &words {
        let e = encoder
            .word_embedding(w)
            .ok_or_else(|| Error::Init(format!("`{w}` is not in the encoder vocabulary")))?;
        acc += &e;
    }
    Ok(acc / words.len() as f64)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// One subject token plus one attractor per training image of `subject`.
///
/// A `d` different from the encoder width is accepted for random init and
/// reported when the table is first used to build a prompt.
pub fn register_tokens(
    subject: &SubjectRecord,
    d: usize,
    init: TokenInit,
    encoder: &TextEncoder,
    seed: u64,
) -> Result<TokenTable> {
    if d == 0 {
        return Err(Error::Init("token dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subject_vec = match init {
        TokenInit::SupercategoryWord => {
            if d != encoder.dim() {
                return Err(Error::Init(format!(
                    "supercategory init needs d = {}, got {d}",
                    encoder.dim()
                )));
            }
            phrase_embedding(encoder, &subject.supercategory)?
        }
        TokenInit::Random => gaussian(&mut rng, d, 1.0),
    };
    let base = if d == encoder.dim() {
        encoder.word_embedding(ATTRACTOR_INIT_WORD)
    } else {
        None
    };
    let mut attractors = BTreeMap::new();
    for record in &subject.train_images {
        let v = match &base {
            Some(b) => b + &gaussian(&mut rng, d, ATTRACTOR_JITTER),
            None => gaussian(&mut rng, d, 1.0),
        };
        attractors.insert(record.id(), v);
    }
    Ok(TokenTable {
        dim: d,
        subject: subject_vec,
        attractors,
    })
}

impl TokenTable {
    pub fn attractor(&self, image_id: &str) -> Result<&Array1<f64>> {
        self.attractors
            .get(image_id)
            .ok_or_else(|| Error::UnknownToken(format!("no attractor for image `{image_id}`")))
    }

    pub fn to_archive(&self, archive: &mut Archive, prefix: &str) {
        archive.set_meta(format!("{prefix}dim"), self.dim);
        archive.insert(format!("{prefix}subject"), ArrayEntry::vector(self.subject.to_vec()));
        for (id, v) in &self.attractors {
            archive.insert(format!("{prefix}attractor/{id}"), ArrayEntry::vector(v.to_vec()));
        }
    }

    pub fn from_archive(archive: &Archive, prefix: &str) -> Result<Self> {
        let dim: usize = archive.meta_parse(&format!("{prefix}dim"))?;
        let subject = Array1::from(archive.vector(&format!("{prefix}subject"), dim)?);
        let head = format!("{prefix}attractor/");
        let mut attractors = BTreeMap::new();
        for (name, entry) in archive.with_prefix(&head) {
            if entry.data.len() != dim {
                return Err(Error::Format(format!("attractor `{name}` has wrong length")));
            }
            attractors.insert(name.to_string(), Array1::from(entry.data.clone()));
        }
        Ok(Self {
            dim,
            subject,
            attractors,
        })
    }
}
