//! Discrete DDPM noise schedules and the closed-form forward process.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Spec(format!("unknown noise schedule `{other}`"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_noise_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Spec("noise schedule needs T >= 1".into()));
    }
    let betas = match kind {
        ScheduleKind::Linear => linspace(LINEAR_BETA_START, LINEAR_BETA_END, steps),
        ScheduleKind::Cosine => {
            // squared-cosine alpha_bar, discretized into betas, then re-accumulated
            let f = |t: f64| {
                let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (0..steps)
                .map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).clamp(1e-8, MAX_BETA))
                .collect()
        }
    };
    NoiseSchedule::from_betas(kind, betas)
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

impl NoiseSchedule {
    pub fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Spec("noise schedule needs T >= 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Spec(format!("beta {b} outside (0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { kind, betas, alpha_bar })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::Index {
            what: "timestep",
            index: t,
            bound: self.len(),
        })
    }
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn add_noise(z0: &LatentTensor, eps: &LatentTensor, t: usize, schedule: &NoiseSchedule) -> Result<LatentTensor> {
    z0.ensure_same_shape(eps)?;
    let ab = schedule.alpha_bar_at(t)?;
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    for (o, e) in out.as_mut_slice().iter_mut().zip(eps.as_slice()) {
        *o = s * *o + n * e;
    }
    Ok(out)
}
