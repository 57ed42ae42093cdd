use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedders::TokenInit;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, WeightKind, WeightSchedule};

/// How the subject embedding is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ti,
    Neti,
}

/// Operator-facing method names. Plain variants are the `+` variants with
/// the reduction applied by [`Method::configure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ti,
    Neti,
    TiPlus,
    NetiPlus,
}

impl Method {
    pub fn family(self) -> Family {
        match self {
            Method::Ti | Method::TiPlus => Family::Ti,
            Method::Neti | Method::NetiPlus => Family::Neti,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Method::TiPlus | Method::NetiPlus)
    }

    /// Set the family and, for plain methods, the reduction flags:
    /// subject pool only, no background or contrastive weight, unmasked loss.
    pub fn configure(self, config: &mut TrainingConfig) {
        config.family = self.family();
        if !self.is_plus() {
            config.pool_mix = [1.0, 0.0, 0.0];
            config.weights.w_b = 0.0;
            config.weights.w_c_max = 0.0;
            config.masked_routing = false;
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ti" => Ok(Method::Ti),
            "neti" => Ok(Method::Neti),
            "ti+" => Ok(Method::TiPlus),
            "neti+" => Ok(Method::NetiPlus),
            other => Err(Error::Usage(format!("unknown method `{other}` (expected ti, neti, ti+, neti+)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ti => "ti",
            Method::Neti => "neti",
            Method::TiPlus => "ti+",
            Method::NetiPlus => "neti+",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub family: Family,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub weights: LossWeights,
    pub schedule: WeightSchedule,
    /// Probabilities of the subject, background and joint pools.
    pub pool_mix: [f64; 3],
    pub seed: u64,
    /// Apply subject/background masks to subject/background-pool records.
    pub masked_routing: bool,
    /// Compute the contrastive term at all.
    pub contrastive: bool,
    pub normalize_contrastive: bool,
    pub weight_decay: f64,
    /// Checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub token_init: TokenInit,
    pub neti_hidden: usize,
}

impl TrainingConfig {
    pub fn new(method: Method, total_steps: usize, seed: u64) -> Self {
        let mut c = Self {
            family: Family::Ti,
            learning_rate: 1e-5,
            batch_size: 8,
            total_steps,
            weights: LossWeights::default(),
            schedule: WeightSchedule::new(WeightKind::Cosine, total_steps.max(1)),
            pool_mix: [0.25, 0.25, 0.5],
            seed,
            masked_routing: true,
            contrastive: true,
            normalize_contrastive: true,
            weight_decay: 1e-2,
            checkpoint_interval: 0,
            token_init: TokenInit::SupercategoryWord,
            neti_hidden: crate::embedders::neti::DEFAULT_HIDDEN,
        };
        method.configure(&mut c);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Spec(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Spec("batch size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Spec("weight decay must be >= 0".into()));
        }
        self.weights.validate()?;
        if self.total_steps > 0 {
            self.schedule.validate()?;
            if self.schedule.total_steps != self.total_steps {
                return Err(Error::Spec("weight schedule length differs from total_steps".into()));
            }
        }
        if self.pool_mix.iter().any(|p| !(*p >= 0.0)) || (self.pool_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Spec(format!("pool mix {:?} must be >= 0 and sum to 1", self.pool_mix)));
        }
        if self.neti_hidden == 0 {
            return Err(Error::Spec("neti_hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("training config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_methods_reduce() {
        let c = TrainingConfig::new(Method::Ti, 10, 0);
        assert_eq!(c.pool_mix, [1.0, 0.0, 0.0]);
        assert_eq!(c.weights.w_c_max, 0.0);
        assert!(!c.masked_routing);
        let mut plus = TrainingConfig::new(Method::TiPlus, 10, 0);
        assert!(plus.masked_routing);
        Method::Ti.configure(&mut plus);
        assert_eq!(plus, c);
    }

    #[test]
    fn validation() {
        let mut c = TrainingConfig::new(Method::NetiPlus, 10, 0);
        c.validate().unwrap();
        c.pool_mix = [0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::new(Method::NetiPlus, 10, 0);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = TrainingConfig::new(Method::NetiPlus, 50, 9);
        assert_eq!(TrainingConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
