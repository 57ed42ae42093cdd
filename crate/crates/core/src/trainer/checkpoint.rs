//! Trainer checkpoints: learned tokens, mapper weights, optimizer moments,
//! step counter and RNG position in one archive.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainingConfig;
use super::optimizer::{Moments, OptimizerState};
use super::step::TrainerState;
use crate::archive::{Archive, ArrayEntry};
use crate::backend::BackendConfig;
use crate::embedders::{NetiEmbedder, TokenTable};
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "trainer-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainerState,
    pub config: TrainingConfig,
    pub subject_id: String,
    pub backend: BackendConfig,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Format(format!("bad rng seed `{s}`"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut ar = Archive::new();
        let s = &self.state;
        ar.set_meta("kind", CHECKPOINT_KIND);
        ar.set_meta("step", s.step);
        ar.set_meta("subject", &self.subject_id);
        ar.set_meta("config", serde_json::to_string(&self.config).expect("config serializes"));
        ar.set_meta("backend", serde_json::to_string(&self.backend).expect("config serializes"));
        ar.set_meta("rng/seed", hex(&s.rng.get_seed()));
        ar.set_meta("rng/stream", s.rng.get_stream());
        ar.set_meta("rng/word_pos", s.rng.get_word_pos());
        s.tokens.to_archive(&mut ar, "tokens/");
        if let Some(m) = &s.neti {
            m.to_archive(&mut ar, "neti/");
        }
        for (name, slot) in &s.optimizer.slots {
            ar.set_meta(format!("adam/{name}/steps"), slot.steps);
            ar.insert(format!("adam/{name}/m"), ArrayEntry::vector(slot.m.clone()));
            ar.insert(format!("adam/{name}/v"), ArrayEntry::vector(slot.v.clone()));
        }
        ar
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        if ar.meta("kind")? != CHECKPOINT_KIND {
            return Err(Error::Format("archive is not a trainer checkpoint".into()));
        }
        let config: TrainingConfig = TrainingConfig::from_json(ar.meta("config")?)?;
        let backend: BackendConfig =
            serde_json::from_str(ar.meta("backend")?).map_err(|e| Error::Format(format!("backend config: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(unhex(ar.meta("rng/seed")?)?);
        rng.set_stream(ar.meta_parse("rng/stream")?);
        rng.set_word_pos(ar.meta_parse("rng/word_pos")?);
        let tokens = TokenTable::from_archive(ar, "tokens/")?;
        let neti = match config.family {
            super::config::Family::Neti => Some(NetiEmbedder::from_archive(ar, "neti/")?),
            super::config::Family::Ti => None,
        };
        let mut optimizer = OptimizerState::default();
        for (name, entry) in ar.with_prefix("adam/") {
            let Some(param) = name.strip_suffix("/m") else {
                continue;
            };
            let v = ar.array(&format!("adam/{param}/v"))?;
            if v.data.len() != entry.data.len() {
                return Err(Error::Format(format!("optimizer moments for `{param}` differ in length")));
            }
            optimizer.slots.insert(
                param.to_string(),
                Moments {
                    m: entry.data.clone(),
                    v: v.data.clone(),
                    steps: ar.meta_parse(&format!("adam/{param}/steps"))?,
                },
            );
        }
        Ok(Self {
            state: TrainerState {
                step: ar.meta_parse("step")?,
                tokens,
                neti,
                optimizer,
                rng,
            },
            config,
            subject_id: ar.meta("subject")?.to_string(),
            backend,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
