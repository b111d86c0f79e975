//! Step-indexed weights for noise mixing and loss blending.
//!
//! | weight | horizon | role                          |
//! |--------|---------|-------------------------------|
//! | alpha  | T1      | OU exploration noise          |
//! | beta   | T2      | generator (reference) noise   |
//! | gamma  | T3      | imitation (BC) loss           |
//! | delta  | T3      | RL loss, `min(offset + 1 - gamma, 1)` |
//!
//! `t` is the global environment-step counter. A horizon of `0` switches the
//! corresponding weight off entirely (alpha/beta/gamma identically 0, delta
//! identically 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(1 - t/horizon, 0)`.
pub fn linear_decay(t: u64, horizon: u64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidSchedule("horizon must be positive".into()));
    }
    Ok(decay(t, horizon))
}

#[inline]
fn decay(t: u64, horizon: u64) -> f64 {
    if horizon == 0 || t >= horizon {
        0.0
    } else {
        (1.0 - t as f64 / horizon as f64).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    /// T1: OU-noise horizon.
    pub ou_horizon: u64,
    /// T2: generator-noise horizon.
    pub generator_horizon: u64,
    /// T3: BC-loss horizon.
    pub bc_horizon: u64,
    /// Head start of the RL-loss weight, in `[0, 1]`.
    pub rl_offset: f64,
}

/// All four weights evaluated at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl ScheduleWeights {
    /// Weights of a run that never uses demonstrations: no scheduled noise,
    /// no imitation term, full RL loss.
    pub const PURE_RL: ScheduleWeights = ScheduleWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        delta: 1.0,
    };
}

impl ScheduleSet {
    pub const DEFAULT_RL_OFFSET: f64 = 0.2;

    pub fn new(ou_horizon: u64, generator_horizon: u64, bc_horizon: u64, rl_offset: f64) -> Result<Self> {
        let s = Self {
            ou_horizon,
            generator_horizon,
            bc_horizon,
            rl_offset,
        };
        s.validate()?;
        Ok(s)
    }

    /// T2 = T3 = T1 / 2 with the default RL offset.
    pub fn from_ou_horizon(t1: u64) -> Self {
        Self {
            ou_horizon: t1,
            generator_horizon: t1 / 2,
            bc_horizon: t1 / 2,
            rl_offset: Self::DEFAULT_RL_OFFSET,
        }
    }

    /// Every weight switched off.
    pub fn disabled() -> Self {
        Self {
            ou_horizon: 0,
            generator_horizon: 0,
            bc_horizon: 0,
            rl_offset: Self::DEFAULT_RL_OFFSET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rl_offset) {
            return Err(Error::InvalidSchedule(format!(
                "rl_offset must lie in [0, 1], got {}",
                self.rl_offset
            )));
        }
        Ok(())
    }

    /// Rescales every horizon by `factor` (used to map paper-scale budgets
    /// onto shorter runs).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |h: u64| (h as f64 * factor).round() as u64;
        Self {
            ou_horizon: s(self.ou_horizon),
            generator_horizon: s(self.generator_horizon),
            bc_horizon: s(self.bc_horizon),
            rl_offset: self.rl_offset,
        }
    }

    pub fn alpha(&self, t: u64) -> f64 {
        decay(t, self.ou_horizon)
    }

    pub fn beta(&self, t: u64) -> f64 {
        decay(t, self.generator_horizon)
    }

    pub fn gamma(&self, t: u64) -> f64 {
        decay(t, self.bc_horizon)
    }

    pub fn delta(&self, t: u64) -> f64 {
        (self.rl_offset + (1.0 - self.gamma(t))).min(1.0)
    }

    pub fn weights(&self, t: u64) -> ScheduleWeights {
        ScheduleWeights {
            alpha: self.alpha(t),
            beta: self.beta(t),
            gamma: self.gamma(t),
            delta: self.delta(t),
        }
    }

    /// First step from which every weight has reached its final value.
    pub fn last_horizon(&self) -> u64 {
        self.ou_horizon
            .max(self.generator_horizon)
            .max(self.bc_horizon)
    }
}

/// RL-loss weight `delta(t)`.
pub fn rl_weight(t: u64, schedules: &ScheduleSet) -> f64 {
    schedules.delta(t)
}
