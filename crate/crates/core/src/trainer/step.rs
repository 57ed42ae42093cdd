//! Loss evaluation, gradients and the optimizer update for one batch.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Family, TrainingConfig};
use super::data::{BatchRecord, SubjectData, TrainingBatch};
use super::optimizer::{AdamW, OptimizerState};
use super::pools::PoolKind;
use crate::backend::{add_noise, Backend, EpsilonPredictor, LayerConditioning};
use crate::embedders::conditioning::{add_row_grad, zero_grad};
use crate::embedders::{
    backprop_bundle, embed_prompt, extract_contextual, ConditioningBundle, EmbedMethod, NetiEmbedder, PseudoToken,
    TokenGrads, TokenTable,
};
use crate::error::{Error, Result};
use crate::losses::{
    info_nce_problem, joint_loss_grad, masked_mse_grad, schedule_weight, total_loss, ContrastiveProblem, LossBreakdown,
    LossParts, Normalization,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub step: usize,
    pub tokens: TokenTable,
    pub neti: Option<NetiEmbedder>,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn method(&self) -> EmbedMethod<'_> {
        match &self.neti {
            Some(m) => EmbedMethod::Neti(m),
            None => EmbedMethod::TextualInversion,
        }
    }

    pub fn family(&self) -> Family {
        if self.neti.is_some() {
            Family::Neti
        } else {
            Family::Ti
        }
    }
}

/// Gradients keyed by learnable parameter name, in a fixed order.
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

struct RecordPass {
    bundle: ConditioningBundle,
    loss: f64,
    cond_grad: LayerConditioning,
}

fn forward_record(
    backend: &Backend,
    data: &SubjectData,
    method: EmbedMethod,
    tokens: &TokenTable,
    record: &BatchRecord,
    config: &TrainingConfig,
    loss_coef: f64,
    with_grad: bool,
) -> Result<RecordPass> {
    let image = data
        .images
        .get(record.image_index)
        .ok_or_else(|| Error::Data(format!("batch references missing image `{}`", record.image_id)))?;
    let z_t = add_noise(&image.latent, &record.noise, record.t, &backend.schedule)?;
    let t = matches!(method, EmbedMethod::Neti(_)).then_some(record.t);
    let bundle = embed_prompt(&backend.encoder, &record.prompt, tokens, method, t, Some(&record.image_id))?;
    let eps_hat = backend.denoiser.predict(&z_t, record.t, &bundle.contextual)?;
    let mask = match (record.pool, config.masked_routing) {
        (PoolKind::Subject, true) => Some(image.masks.subject()),
        (PoolKind::Background, true) => Some(image.masks.background()),
        _ => None,
    };
    let (loss, grad) = match mask {
        Some(m) => {
            let (l, g) = masked_mse_grad(&record.noise, &eps_hat, m, Normalization::Mean)?;
            (l.value, g)
        }
        None => joint_loss_grad(&record.noise, &eps_hat)?,
    };
    let cond_grad = if with_grad && loss_coef != 0.0 {
        let mut scaled = grad;
        scaled.as_mut_slice().iter_mut().for_each(|v| *v *= loss_coef);
        backend.denoiser.conditioning_vjp(&z_t, record.t, &bundle.contextual, &scaled)?
    } else {
        zero_grad(&bundle)
    };
    Ok(RecordPass {
        bundle,
        loss,
        cond_grad,
    })
}

fn pool_weight(config: &TrainingConfig, kind: PoolKind) -> f64 {
    match kind {
        PoolKind::Subject => config.weights.w_s,
        PoolKind::Background => config.weights.w_b,
        PoolKind::Joint => config.weights.w_i,
    }
}

/// Losses of `batch` at the given parameters and, if requested, their
/// gradient with respect to every learnable parameter the batch touches.
pub fn loss_and_grads(
    backend: &Backend,
    data: &SubjectData,
    tokens: &TokenTable,
    neti: Option<&NetiEmbedder>,
    batch: &TrainingBatch,
    config: &TrainingConfig,
    step: usize,
    with_grad: bool,
) -> Result<(LossBreakdown, ParamGrads)> {
    if batch.subject_id != data.subject_id() {
        return Err(Error::Data(format!(
            "batch subject `{}` differs from trainer subject `{}`",
            batch.subject_id,
            data.subject_id()
        )));
    }
    let method = match neti {
        Some(m) => EmbedMethod::Neti(m),
        None => EmbedMethod::TextualInversion,
    };
    let counts: BTreeMap<PoolKind, usize> = super::pools::POOL_KINDS.iter().map(|&k| (k, batch.count(k))).collect();
    let coef = |kind: PoolKind| pool_weight(config, kind) / counts[&kind] as f64;

    let mut passes = batch
        .records
        .par_iter()
        .map(|r| forward_record(backend, data, method, tokens, r, config, coef(r.pool), with_grad))
        .collect::<Result<Vec<_>>>()?;

    let mut parts = LossParts::default();
    for (r, p) in batch.records.iter().zip(&passes) {
        let n = counts[&r.pool] as f64;
        match r.pool {
            PoolKind::Subject => parts.l_sub += p.loss / n,
            PoolKind::Background => parts.l_bg += p.loss / n,
            PoolKind::Joint => parts.l_joint += p.loss / n,
        }
    }

    let sched_step = step.min(config.schedule.total_steps);
    let w_c = schedule_weight(sched_step, &config.schedule, config.weights.w_c_max)?;
    if config.contrastive {
        let mut problem = ContrastiveProblem {
            vectors: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        };
        let mut owners = Vec::new();
        let (mut subj, mut attr) = (Vec::new(), Vec::new());
        for (i, p) in passes.iter().enumerate() {
            for (token, list) in [(PseudoToken::Subject, &mut subj), (PseudoToken::Attractor, &mut attr)] {
                if p.bundle.positions.contains_key(&token) {
                    list.push(problem.vectors.len());
                    problem.vectors.push(extract_contextual(&p.bundle, token, 0)?);
                    owners.push((i, token));
                }
            }
        }
        for (a, &i) in subj.iter().enumerate() {
            for &j in &subj[a + 1..] {
                problem.positives.push((i, j));
            }
            for &k in &attr {
                problem.negatives.push((i, k));
            }
        }
        if !problem.positives.is_empty() {
            let out = info_nce_problem(&problem, config.weights.tau, config.normalize_contrastive)?;
            parts.l_infonce = out.loss;
            if with_grad && w_c > 0.0 {
                for (&(i, token), g) in owners.iter().zip(&out.grads) {
                    let pass = &mut passes[i];
                    add_row_grad(&mut pass.cond_grad, &pass.bundle, token, 0, &(g * w_c))?;
                }
            }
        }
    }
    let loss = total_loss(parts, &config.weights, sched_step, &config.schedule)?;

    let mut grads = ParamGrads::new();
    if !with_grad {
        return Ok((loss, grads));
    }
    let per_record = passes
        .par_iter()
        .map(|p| backprop_bundle(&backend.encoder, &p.bundle, method, &p.cond_grad))
        .collect::<Result<Vec<_>>>()?;
    let mut total = TokenGrads::new(tokens.dim, neti);
    for g in &per_record {
        total.add_assign(g);
    }
    let uses_subject = passes.iter().any(|p| p.bundle.positions.contains_key(&PseudoToken::Subject));
    if uses_subject {
        match &total.neti {
            None => {
                grads.insert("subject".into(), total.subject.to_vec());
            }
            Some(n) => {
                grads.insert("neti/w1".into(), n.w1.iter().copied().collect());
                grads.insert("neti/b1".into(), n.b1.to_vec());
                grads.insert("neti/w2".into(), n.w2.iter().copied().collect());
                grads.insert("neti/b2".into(), n.b2.to_vec());
            }
        }
    }
    for (id, g) in &total.attractors {
        grads.insert(format!("attractor/{id}"), g.to_vec());
    }
    Ok((loss, grads))
}

/// Mutable flat view of the learnable parameter called `name`.
pub fn param_slice<'a>(tokens: &'a mut TokenTable, neti: Option<&'a mut NetiEmbedder>, name: &str) -> Result<&'a mut [f64]> {
    let missing = || Error::UnknownToken(format!("no learnable parameter `{name}`"));
    if name == "subject" {
        return Ok(tokens.subject.as_slice_mut().expect("contiguous"));
    }
    if let Some(id) = name.strip_prefix("attractor/") {
        return tokens
            .attractors
            .get_mut(id)
            .map(|v| v.as_slice_mut().expect("contiguous"))
            .ok_or_else(missing);
    }
    let m = neti.ok_or_else(missing)?;
    match name {
        "neti/w1" => Ok(m.w1.as_slice_mut().expect("contiguous")),
        "neti/b1" => Ok(m.b1.as_slice_mut().expect("contiguous")),
        "neti/w2" => Ok(m.w2.as_slice_mut().expect("contiguous")),
        "neti/b2" => Ok(m.b2.as_slice_mut().expect("contiguous")),
        _ => Err(missing()),
    }
}

/// One optimizer update of the learnable parameters; increments the step.
pub fn train_step(
    state: &mut TrainerState,
    batch: &TrainingBatch,
    backend: &Backend,
    data: &SubjectData,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    if state.family() != config.family {
        return Err(Error::Spec("trainer state and config use different methods".into()));
    }
    let (loss, grads) = loss_and_grads(backend, data, &state.tokens, state.neti.as_ref(), batch, config, state.step, true)?;
    let opt = AdamW::new(config.learning_rate, config.weight_decay);
    for (name, g) in &grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let params = param_slice(&mut state.tokens, state.neti.as_mut(), name)?;
        state.optimizer.update(&opt, name, params, g);
    }
    state.step += 1;
    Ok(loss)
}

/// Flatten the learnable parameters in the same naming scheme as [`ParamGrads`].
pub fn learnable_parameters(state: &TrainerState) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    out.insert("subject".to_string(), state.tokens.subject.to_vec());
    for (id, v) in &state.tokens.attractors {
        out.insert(format!("attractor/{id}"), v.to_vec());
    }
    if let Some(m) = &state.neti {
        out.insert("neti/w1".into(), m.w1.iter().copied().collect());
        out.insert("neti/b1".into(), m.b1.to_vec());
        out.insert("neti/w2".into(), m.w2.iter().copied().collect());
        out.insert("neti/b2".into(), m.b2.to_vec());
    }
    out
}
