//! Step-dependent weight of the contrastive term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMOID_K: f64 = 10.0;
pub const DEFAULT_EXPONENTIAL_K: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Zero,
    One,
    Linear,
    Exponential,
    Sigmoid,
    Cosine,
}

pub const ALL_KINDS: [WeightKind; 6] = [
    WeightKind::Zero,
    WeightKind::One,
    WeightKind::Linear,
    WeightKind::Exponential,
    WeightKind::Sigmoid,
    WeightKind::Cosine,
];

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Zero => "zero",
            WeightKind::One => "one",
            WeightKind::Linear => "linear",
            WeightKind::Exponential => "exponential",
            WeightKind::Sigmoid => "sigmoid",
            WeightKind::Cosine => "cosine",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown weighting schedule `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub kind: WeightKind,
    pub total_steps: usize,
    /// Shape parameter; used by `exponential` and `sigmoid` only.
    pub k: f64,
}

impl WeightSchedule {
    /// Schedule with the default shape parameter for `kind`.
    pub fn new(kind: WeightKind, total_steps: usize) -> Self {
        let k = match kind {
            WeightKind::Exponential => DEFAULT_EXPONENTIAL_K,
            _ => DEFAULT_SIGMOID_K,
        };
        Self { kind, total_steps, k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Spec("weight schedule needs total_steps >= 1".into()));
        }
        if matches!(self.kind, WeightKind::Exponential | WeightKind::Sigmoid) && !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Spec(format!("schedule shape k must be positive, got {}", self.k)));
        }
        Ok(())
    }

    /// Fraction of `w_c_max` at `step`, in `[0, 1]`.
    pub fn fraction(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step > self.total_steps {
            return Err(Error::Index {
                what: "schedule step",
                index: step,
                bound: self.total_steps + 1,
            });
        }
        let x = step as f64 / self.total_steps as f64;
        let k = self.k;
        let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
        let f = match self.kind {
            WeightKind::Zero => 0.0,
            WeightKind::One => 1.0,
            WeightKind::Linear => x,
            WeightKind::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * x).cos()),
            WeightKind::Sigmoid => {
                let lo = sigma(-0.5 * k);
                let hi = sigma(0.5 * k);
                (sigma(k * (x - 0.5)) - lo) / (hi - lo)
            }
            WeightKind::Exponential => (-k * x).exp_m1() / (-k).exp_m1(),
        };
        Ok(f.clamp(0.0, 1.0))
    }
}

pub fn schedule_weight(step: usize, schedule: &WeightSchedule, w_c_max: f64) -> Result<f64> {
    Ok(w_c_max * schedule.fraction(step)?)
}
