//! KL-coefficient schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant or linearly decaying KL coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaSchedule {
    Constant { value: f64 },
    /// `beta = max(init - decay * step, floor)`, step-indexed from 0.
    LinearAnneal { init: f64, decay: f64, floor: f64 },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaSchedule::Constant { value } => value >= 0.0 && value.is_finite(),
            BetaSchedule::LinearAnneal { init, decay, floor } => {
                init >= 0.0 && decay >= 0.0 && floor >= 0.0 && floor <= init && init.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid beta schedule {self:?}: values must be finite, >= 0, floor <= init"
            )))
        }
    }

    /// Coefficient in effect at optimizer step `step` (0-based; the initial
    /// value applies to the first step).
    pub fn beta_at(&self, step: usize) -> f64 {
        match *self {
            BetaSchedule::Constant { value } => value,
            BetaSchedule::LinearAnneal { init, decay, floor } => {
                (init - decay * step as f64).max(floor)
            }
        }
    }
}
