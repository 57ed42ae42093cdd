//! Personalization training: prompt pools, batches, the combined-loss
//! step, optimization and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod optimizer;
pub mod pools;
pub mod step;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use config::{Family, Method, TrainingConfig};
pub use data::{assemble_batch, BatchRecord, SubjectData, TrainImage, TrainingBatch};
pub use optimizer::{AdamW, OptimizerState};
pub use pools::{build_prompt_pools, PoolKind, PromptPools};
pub use step::{learnable_parameters, loss_and_grads, train_step, ParamGrads, TrainerState};

use crate::backend::Backend;
use crate::dataset::DatasetManifest;
use crate::embedders::{register_tokens, NetiEmbedder};
use crate::error::{Error, Result};
use crate::losses::{write_trace_line, LossBreakdown, TraceRecord};

const TOKEN_SEED_SALT: u64 = 0x7a3b_19c5_d2e4_8f01;
const NETI_SEED_SALT: u64 = 0x1c6e_44a9_0b3d_f257;

pub struct Trainer<'a> {
    pub backend: &'a Backend,
    pub data: SubjectData,
    pub pools: PromptPools,
    pub config: TrainingConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(backend: &'a Backend, data: SubjectData, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let pools = build_prompt_pools(data.supercategory())?;
        pools.check(data.supercategory())?;
        Ok(Self {
            backend,
            data,
            pools,
            config,
        })
    }

    pub fn from_manifest(backend: &'a Backend, manifest: &DatasetManifest, subject_id: &str, config: TrainingConfig) -> Result<Self> {
        let data = SubjectData::load(manifest, subject_id, &backend.codec)?;
        Self::new(backend, data, config)
    }

    pub fn init_state(&self) -> Result<TrainerState> {
        let seed = self.config.seed;
        let tokens = register_tokens(
            &self.data.record,
            self.backend.embed_dim(),
            self.config.token_init,
            &self.backend.encoder,
            seed ^ TOKEN_SEED_SALT,
        )?;
        let neti = match self.config.family {
            Family::Ti => None,
            Family::Neti => Some(NetiEmbedder::new(
                self.backend.timesteps(),
                self.backend.layers(),
                &tokens.subject,
                self.config.neti_hidden,
                seed ^ NETI_SEED_SALT,
            )?),
        };
        Ok(TrainerState {
            step: 0,
            tokens,
            neti,
            optimizer: OptimizerState::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&self, state: &mut TrainerState) -> Result<TrainingBatch> {
        assemble_batch(
            &self.data,
            &self.pools,
            self.config.batch_size,
            &self.config.pool_mix,
            self.backend.timesteps(),
            &mut state.rng,
        )
    }

    pub fn step(&self, state: &mut TrainerState) -> Result<LossBreakdown> {
        let batch = self.next_batch(state)?;
        train_step(state, &batch, self.backend, &self.data, &self.config)
    }

    pub fn checkpoint(&self, state: &TrainerState) -> Checkpoint {
        Checkpoint {
            state: state.clone(),
            config: self.config.clone(),
            subject_id: self.data.subject_id().to_string(),
            backend: self.backend.config.clone(),
        }
    }

    /// Step until `state.step == total_steps`, calling `observe` after each step.
    pub fn run(
        &self,
        state: &mut TrainerState,
        mut observe: impl FnMut(&TrainerState, &LossBreakdown) -> Result<()>,
    ) -> Result<()> {
        while state.step < self.config.total_steps {
            let loss = self.step(state)?;
            observe(state, &loss)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub final_state: TrainerState,
    pub trace: Vec<TraceRecord>,
    /// Interval checkpoints in step order, then the final alias.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const BACKEND_FILE: &str = "backend.prsa";

/// Train from scratch (or from `resume`) and write checkpoints, the
/// backend archive and the loss trace under `out_dir`.
pub fn train_to_dir(trainer: &Trainer, resume: Option<TrainerState>, out_dir: &Path) -> Result<TrainingRun> {
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    trainer.backend.save(&out_dir.join(BACKEND_FILE))?;
    let trace_path = out_dir.join(TRACE_FILE);
    let resumed = resume.is_some();
    let mut state = match resume {
        Some(s) => s,
        None => trainer.init_state()?,
    };
    let file = if resumed {
        std::fs::OpenOptions::new().append(true).create(true).open(&trace_path)
    } else {
        File::create(&trace_path)
    }
    .map_err(|e| Error::io(&trace_path, e))?;
    let mut trace_out = BufWriter::new(file);
    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();
    let interval = trainer.config.checkpoint_interval;
    trainer.run(&mut state, |s, loss| {
        let rec = TraceRecord { step: s.step, loss: *loss };
        write_trace_line(&mut trace_out, &rec).map_err(|e| Error::io(&trace_path, e))?;
        trace.push(rec);
        if interval > 0 && s.step % interval == 0 {
            let path = ckpt_dir.join(checkpoint_name(s.step));
            trainer.checkpoint(s).save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    })?;
    trace_out.flush().map_err(|e| Error::io(&trace_path, e))?;
    let final_path = ckpt_dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint(&state).save(&final_path)?;
    checkpoints.push(final_path);
    Ok(TrainingRun {
        final_state: state,
        trace,
        checkpoints,
    })
}

/// In-memory training; returns the final state and per-step losses.
pub fn train(trainer: &Trainer) -> Result<(TrainerState, Vec<LossBreakdown>)> {
    let mut state = trainer.init_state()?;
    let mut losses = Vec::with_capacity(trainer.config.total_steps);
    trainer.run(&mut state, |_, l| {
        losses.push(*l);
        Ok(())
    })?;
    Ok((state, losses))
}
