//! Training objectives: masked denoising losses, InfoNCE, the contrastive
//! weighting schedules and the weighted total.

pub mod infonce;
pub mod masked;
pub mod weighting;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use infonce::{info_nce, info_nce_problem, ContrastiveOutput, ContrastiveProblem, DEFAULT_TAU};
pub use masked::{joint_loss, joint_loss_grad, masked_mse, masked_mse_grad, masked_mse_with, MaskedLoss, Normalization};
pub use weighting::{schedule_weight, WeightKind, WeightSchedule, ALL_KINDS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_s: f64,
    pub w_b: f64,
    pub w_i: f64,
    pub w_c_max: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_s: 1.0,
            w_b: 1.0,
            w_i: 1.0,
            w_c_max: 0.1,
            tau: DEFAULT_TAU,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_s", self.w_s), ("w_b", self.w_b), ("w_i", self.w_i), ("w_c_max", self.w_c_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Spec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Spec(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Unweighted component losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_sub: f64,
    pub l_bg: f64,
    pub l_joint: f64,
    pub l_infonce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sub: f64,
    pub l_bg: f64,
    pub l_joint: f64,
    pub l_infonce: f64,
    pub total: f64,
    pub w_c_effective: f64,
}

pub fn total_loss(parts: LossParts, weights: &LossWeights, step: usize, schedule: &WeightSchedule) -> Result<LossBreakdown> {
    for (name, v) in [
        ("l_sub", parts.l_sub),
        ("l_bg", parts.l_bg),
        ("l_joint", parts.l_joint),
        ("l_infonce", parts.l_infonce),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let w_c = schedule_weight(step, schedule, weights.w_c_max)?;
    let total = weights.w_s * parts.l_sub + weights.w_b * parts.l_bg + weights.w_i * parts.l_joint + w_c * parts.l_infonce;
    if !total.is_finite() {
        return Err(Error::NonFinite("total".into()));
    }
    Ok(LossBreakdown {
        l_sub: parts.l_sub,
        l_bg: parts.l_bg,
        l_joint: parts.l_joint,
        l_infonce: parts.l_infonce,
        total,
        w_c_effective: w_c,
    })
}

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub fn write_trace_line(out: &mut impl Write, record: &TraceRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("trace line: {e}"))))
        .collect()
}
