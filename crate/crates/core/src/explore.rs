//! Exploration actions.
//!
//! TD3fG-style exploration adds two scheduled terms to the deterministic
//! policy output and clips the sum to the action box:
//!
//! ```text
//! a = clip(pi(s) + alpha(t) * ou_t + beta(t) * pi_bc(s), -1, 1)
//! ```
//!
//! A term whose weight is exactly zero is skipped entirely, including its
//! random draws, so once every horizon has passed the action is a pure
//! function of the actor and consumes no randomness.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpNet;
use crate::sched::ScheduleSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 0.15,
            mu: 0.0,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

/// Ornstein-Uhlenbeck process discretised with Euler-Maruyama.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    params: OuParams,
    x: Vec<f64>,
}

impl OuNoise {
    /// Starts at the long-run mean.
    pub fn new(params: OuParams, dim: usize) -> Result<Self> {
        if !(params.theta > 0.0) || !(params.sigma >= 0.0) || !(params.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "OU needs theta > 0, sigma >= 0, dt > 0; got {params:?}"
            )));
        }
        Ok(Self {
            params,
            x: vec![params.mu; dim],
        })
    }

    pub fn with_state(params: OuParams, x: Vec<f64>) -> Result<Self> {
        let mut ou = Self::new(params, x.len())?;
        ou.x = x;
        Ok(ou)
    }

    pub fn params(&self) -> &OuParams {
        &self.params
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn reset(&mut self) {
        self.x.fill(self.params.mu);
    }

    /// `x <- x + theta (mu - x) dt + sigma sqrt(dt) z`, `z ~ N(0, I)`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let OuParams {
            theta,
            mu,
            sigma,
            dt,
        } = self.params;
        let diffusion = sigma * dt.sqrt();
        for x in &mut self.x {
            let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            *x += theta * (mu - *x) * dt + diffusion * z;
        }
        &self.x
    }

    /// Stationary variance of the discrete recursion,
    /// `sigma^2 dt / (1 - (1 - theta dt)^2)`.
    pub fn stationary_variance(&self) -> f64 {
        let OuParams {
            theta, sigma, dt, ..
        } = self.params;
        let rho = 1.0 - theta * dt;
        sigma * sigma * dt / (1.0 - rho * rho)
    }
}

/// Reference-action bias: the generator's output on `obs`.
pub fn generator_noise(generator: &MlpNet, obs: &[f64]) -> Result<Vec<f64>> {
    generator.forward(obs)
}

fn clip_unit(v: &mut [f64]) {
    for a in v {
        *a = a.clamp(-1.0, 1.0);
    }
}

/// Scheduled exploration action. `generator = None` disables the reference
/// bias regardless of `beta`.
pub fn exploration_action<R: Rng + ?Sized>(
    actor: &MlpNet,
    generator: Option<&MlpNet>,
    obs: &[f64],
    t: u64,
    schedules: &ScheduleSet,
    ou: &mut OuNoise,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = actor.forward(obs)?;
    let alpha = schedules.alpha(t);
    if alpha > 0.0 {
        let n = ou.step(rng);
        if n.len() != a.len() {
            return Err(Error::Shape(format!(
                "OU noise has {} dims, action {}",
                n.len(),
                a.len()
            )));
        }
        for (ai, ni) in a.iter_mut().zip(n) {
            *ai += alpha * ni;
        }
    }
    let beta = schedules.beta(t);
    if let (Some(g), true) = (generator, beta > 0.0) {
        let bias = generator_noise(g, obs)?;
        if bias.len() != a.len() {
            return Err(Error::Shape(format!(
                "generator emits {} dims, actor {}",
                bias.len(),
                a.len()
            )));
        }
        for (ai, bi) in a.iter_mut().zip(&bias) {
            *ai += beta * bi;
        }
    }
    clip_unit(&mut a);
    Ok(a)
}

/// Plain TD3 exploration: `clip(pi(s) + N(0, sigma^2 I))`. No draws when
/// `sigma == 0`.
pub fn gaussian_action<R: Rng + ?Sized>(
    actor: &MlpNet,
    obs: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = actor.forward(obs)?;
    if sigma > 0.0 {
        for ai in &mut a {
            let z: f64 = rng.sample(StandardNormal);
            *ai += sigma * z;
        }
    }
    clip_unit(&mut a);
    Ok(a)
}

/// Deterministic policy action, clipped.
pub fn greedy_action(actor: &MlpNet, obs: &[f64]) -> Result<Vec<f64>> {
    let mut a = actor.forward(obs)?;
    clip_unit(&mut a);
    Ok(a)
}
