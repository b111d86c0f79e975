//! TD3 core and the demonstration-guided actor objectives.
//!
//! Actor objectives, all minimised and all differentiated through the actor
//! only (critic and generator are frozen for the actor step):
//!
//! * TD3: `-mean Q1(s, pi(s))`
//! * scheduled blend: `bc_scale * gamma(t) * mean ||pi_bc(s) - pi(s)||^2 - delta(t) * mean Q1(s, pi(s))`
//! * Q-filter: `mean 1[Q1(s, pi_bc(s)) > Q1(s, pi(s))] * ||pi_bc(s) - pi(s)||^2 - mean Q1(s, pi(s))`

mod buffer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use buffer::ReplayBuffer;

use crate::demo::policy_architecture;
use crate::env::Transition;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Architecture, Gradients, Matrix, MlpNet};
use crate::rng::derive_seed;
use crate::sched::{ScheduleSet, ScheduleWeights};

/// Algorithm variant: which actor objective and which exploration noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain TD3 with Gaussian exploration.
    Td3,
    /// Scheduled BC/RL blend with OU exploration.
    Td3fg,
    /// Q-filtered BC term with OU exploration.
    Td3fgQfilter,
    /// Actor initialised from the generator, then plain TD3.
    Bcft,
    /// Plain TD3 over a buffer preloaded with the best demonstrations.
    PreloadBuffer,
    /// Scheduled blend plus generator-biased exploration.
    Td3fgNoise,
    /// TD3 objective with OU and generator-biased exploration.
    Td3fgNoiseOnly,
}

/// Actor loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Td3,
    Scheduled,
    QFilter,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Td3,
        Variant::Td3fg,
        Variant::Td3fgQfilter,
        Variant::Bcft,
        Variant::PreloadBuffer,
        Variant::Td3fgNoise,
        Variant::Td3fgNoiseOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Td3 => "td3",
            Variant::Td3fg => "td3fg",
            Variant::Td3fgQfilter => "td3fg_qfilter",
            Variant::Bcft => "bcft",
            Variant::PreloadBuffer => "preload_buffer",
            Variant::Td3fgNoise => "td3fg_noise",
            Variant::Td3fgNoiseOnly => "td3fg_noise_only",
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            Variant::Td3fg | Variant::Td3fgNoise => Objective::Scheduled,
            Variant::Td3fgQfilter => Objective::QFilter,
            Variant::Td3 | Variant::Bcft | Variant::PreloadBuffer | Variant::Td3fgNoiseOnly => {
                Objective::Td3
            }
        }
    }

    /// Scheduled OU exploration (otherwise constant Gaussian noise).
    pub fn uses_ou(self) -> bool {
        matches!(
            self,
            Variant::Td3fg | Variant::Td3fgQfilter | Variant::Td3fgNoise | Variant::Td3fgNoiseOnly
        )
    }

    pub fn uses_generator_noise(self) -> bool {
        matches!(self, Variant::Td3fgNoise | Variant::Td3fgNoiseOnly)
    }

    /// Whether a pretrained generator must exist before training starts.
    pub fn needs_generator(self) -> bool {
        self.objective() != Objective::Td3 || self.uses_generator_noise() || self == Variant::Bcft
    }

    pub fn init_from_generator(self) -> bool {
        self == Variant::Bcft
    }

    pub fn requires_preload(self) -> bool {
        self == Variant::PreloadBuffer
    }

    /// Weights actually applied at step `t`; unused terms report 0 (and the
    /// RL weight 1).
    pub fn effective_weights(self, schedules: &ScheduleSet, t: u64) -> ScheduleWeights {
        let w = schedules.weights(t);
        let scheduled = self.objective() == Objective::Scheduled;
        ScheduleWeights {
            alpha: if self.uses_ou() { w.alpha } else { 0.0 },
            beta: if self.uses_generator_noise() { w.beta } else { 0.0 },
            gamma: if scheduled { w.gamma } else { 0.0 },
            delta: if scheduled { w.delta } else { 1.0 },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCfg {
    pub variant: Variant,
    /// Discount factor.
    pub gamma: f64,
    /// Polyak rate.
    pub tau: f64,
    pub policy_delay: u64,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub batch_size: usize,
    /// Multiplier on the scheduled BC weight.
    pub bc_scale: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub l2: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            variant: Variant::Td3fg,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            batch_size: 64,
            bc_scale: 1.0,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            l2: 1e-4,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("discount must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.smoothing_sigma < 0.0 || self.smoothing_clip < 0.0 || self.bc_scale < 0.0 {
            return bad("smoothing parameters and bc_scale must be non-negative".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.l2 >= 0.0) {
            return bad("learning rates must be positive and l2 non-negative".into());
        }
        Ok(())
    }
}

/// Critic shape: `[obs + act, hidden..., 1]`, ReLU hidden, linear output.
pub fn critic_architecture(obs_dim: usize, hidden: &[usize], act_dim: usize) -> Architecture {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(obs_dim + act_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Architecture::new(sizes, Activation::Relu, Activation::Identity)
}

/// Online, target and reference networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct AgentNets {
    pub actor: MlpNet,
    pub critic1: MlpNet,
    pub critic2: MlpNet,
    pub target_actor: MlpNet,
    pub target_critic1: MlpNet,
    pub target_critic2: MlpNet,
    /// Frozen reference-action generator.
    pub generator: Option<MlpNet>,
    pub actor_opt: Adam,
    pub critic1_opt: Adam,
    pub critic2_opt: Adam,
}

impl AgentNets {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        generator: Option<MlpNet>,
        cfg: &TrainCfg,
        seed: u64,
    ) -> Result<Self> {
        let actor = MlpNet::new(policy_architecture(obs_dim, hidden, act_dim), derive_seed(seed, 1))?;
        let carch = critic_architecture(obs_dim, hidden, act_dim);
        let critic1 = MlpNet::new(carch.clone(), derive_seed(seed, 2))?;
        let critic2 = MlpNet::new(carch, derive_seed(seed, 3))?;
        if let Some(g) = &generator {
            if g.sizes().first() != Some(&obs_dim) || g.output_dim() != act_dim {
                return Err(Error::Shape(format!(
                    "generator maps {:?}, agent needs {obs_dim} -> {act_dim}",
                    g.sizes()
                )));
            }
        }
        Ok(Self::from_nets(actor, critic1, critic2, generator, cfg))
    }

    pub fn from_nets(
        actor: MlpNet,
        critic1: MlpNet,
        critic2: MlpNet,
        generator: Option<MlpNet>,
        cfg: &TrainCfg,
    ) -> Self {
        let actor_cfg = AdamConfig::new(cfg.actor_lr, cfg.l2);
        let critic_cfg = AdamConfig::new(cfg.critic_lr, cfg.l2);
        Self {
            actor_opt: Adam::new(&actor, actor_cfg),
            critic1_opt: Adam::new(&critic1, critic_cfg),
            critic2_opt: Adam::new(&critic2, critic_cfg),
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
            generator,
        }
    }

    /// Replaces the actor (and its target) with a copy of the generator.
    pub fn init_actor_from_generator(&mut self) -> Result<()> {
        let g = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no generator to copy from".into()))?;
        self.actor = crate::demo::bc_finetune_init(g, self.actor.architecture())?;
        self.target_actor = self.actor.clone();
        self.actor_opt = Adam::new(&self.actor, *self.actor_opt.config());
        Ok(())
    }

    fn generator(&self) -> Result<&MlpNet> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("objective needs a generator".into()))
    }
}

/// Column-stacked mini-batch.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl TrainBatch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::InvalidSample("empty batch".into()));
        }
        let rows = |f: fn(&Transition) -> &[f64]| {
            Matrix::from_rows(&batch.iter().map(|t| f(t)).collect::<Vec<_>>())
        };
        Ok(Self {
            states: rows(|t| &t.s)?,
            actions: rows(|t| &t.a)?,
            rewards: batch.iter().map(|t| t.r).collect(),
            next_states: rows(|t| &t.s_next)?,
            dones: batch.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Clipped double-Q targets with target-policy smoothing:
/// `y = r + discount * (1 - done) * min(Q1'(s', a~), Q2'(s', a~))`,
/// `a~ = clip(pi'(s') + clip(N(0, sigma^2), -c, c), -1, 1)`.
pub fn critic_targets<R: Rng + ?Sized>(
    batch: &TrainBatch,
    nets: &AgentNets,
    cfg: &TrainCfg,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut next_a = nets.target_actor.forward_batch(&batch.next_states)?;
    for a in next_a.as_mut_slice() {
        let eps = if cfg.smoothing_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            (cfg.smoothing_sigma * z).clamp(-cfg.smoothing_clip, cfg.smoothing_clip)
        } else {
            0.0
        };
        *a = (*a + eps).clamp(-1.0, 1.0);
    }
    let sa = batch.next_states.hcat(&next_a)?;
    let q1 = nets.target_critic1.forward_batch(&sa)?;
    let q2 = nets.target_critic2.forward_batch(&sa)?;
    Ok(bootstrap_targets(
        &batch.rewards,
        &batch.dones,
        q1.as_slice(),
        q2.as_slice(),
        cfg.gamma,
    ))
}

/// `r` on terminal transitions, `r + discount * min(q1, q2)` otherwise.
pub fn bootstrap_targets(rewards: &[f64], dones: &[bool], q1: &[f64], q2: &[f64], discount: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(q1.iter().zip(q2))
        .map(|((&r, &done), (&a, &b))| if done { r } else { r + discount * a.min(b) })
        .collect()
}

/// Mean squared Bellman error of one critic and its gradient.
pub fn critic_loss(critic: &MlpNet, states: &Matrix, actions: &Matrix, y: &[f64]) -> Result<(f64, Gradients)> {
    if y.len() != states.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} samples",
            y.len(),
            states.rows()
        )));
    }
    let sa = states.hcat(actions)?;
    let trace = critic.trace(&sa)?;
    let targets = Matrix::from_vec(y.len(), 1, y.to_vec())?;
    let (loss, upstream) = crate::nn::mse_loss(trace.output(), &targets)?;
    Ok((loss, critic.backward(&trace, &upstream)?.grads))
}

/// One Adam step on each critic towards the same targets.
pub fn critic_update(nets: &mut AgentNets, batch: &TrainBatch, y: &[f64]) -> Result<(f64, f64)> {
    let (l1, g1) = critic_loss(&nets.critic1, &batch.states, &batch.actions, y)?;
    let (l2, g2) = critic_loss(&nets.critic2, &batch.states, &batch.actions, y)?;
    nets.critic1_opt.step(&mut nets.critic1, &g1)?;
    nets.critic2_opt.step(&mut nets.critic2, &g2)?;
    Ok((l1, l2))
}

/// Actor loss value and its gradient with respect to the actor parameters.
#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub value: f64,
    pub grads: Gradients,
}

/// `sum_i w_i ||ref_i - pi_i||^2 / N - rl_weight * mean Q(s, pi(s))`.
/// Per-sample BC weights `w_i` equal to zero contribute nothing.
fn blended_actor_loss(
    actor: &MlpNet,
    critic: &MlpNet,
    states: &Matrix,
    rl_weight: f64,
    bc: Option<(&Matrix, &[f64])>,
) -> Result<ActorLoss> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::InvalidSample("empty batch".into()));
    }
    let act_dim = actor.output_dim();
    let actor_trace = actor.trace(states)?;
    let pi = actor_trace.output();
    let critic_trace = critic.trace(&states.hcat(pi)?)?;
    let q = critic_trace.output();

    let up_q = Matrix::filled(n, 1, -rl_weight);
    let d_input = critic.input_gradient(&critic_trace, &up_q)?;
    let mut d_pi = d_input.columns(states.cols(), act_dim);
    let mean_q = q.as_slice().iter().sum::<f64>() / n as f64;
    let mut value = -rl_weight * mean_q;

    if let Some((reference, weights)) = bc {
        if reference.rows() != n || reference.cols() != act_dim || weights.len() != n {
            return Err(Error::Shape("BC reference does not match the batch".into()));
        }
        let mut bc_sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p = pi.row(i);
            let g = reference.row(i);
            let d = d_pi.row_mut(i);
            for k in 0..act_dim {
                let diff = p[k] - g[k];
                bc_sum += w * diff * diff;
                d[k] += w * 2.0 * diff;
            }
        }
        value += bc_sum / n as f64;
    }

    let grads = actor.backward(&actor_trace, &d_pi)?.grads;
    Ok(ActorLoss { value, grads })
}

/// `-mean Q(s, pi(s))`.
pub fn actor_loss_td3(actor: &MlpNet, critic: &MlpNet, states: &Matrix) -> Result<ActorLoss> {
    blended_actor_loss(actor, critic, states, 1.0, None)
}

/// `bc_weight * mean ||pi_bc(s) - pi(s)||^2 - rl_weight * mean Q(s, pi(s))`.
/// With `bc_weight == 0` this is exactly the TD3 loss scaled by `rl_weight`.
pub fn actor_loss_blend(
    actor: &MlpNet,
    critic: &MlpNet,
    generator: &MlpNet,
    states: &Matrix,
    bc_weight: f64,
    rl_weight: f64,
) -> Result<ActorLoss> {
    if bc_weight == 0.0 {
        return blended_actor_loss(actor, critic, states, rl_weight, None);
    }
    let reference = generator.forward_batch(states)?;
    let weights = vec![bc_weight; states.rows()];
    blended_actor_loss(actor, critic, states, rl_weight, Some((&reference, &weights)))
}

/// Scheduled TD3fG actor loss at environment step `t`.
pub fn actor_loss_td3fg(
    actor: &MlpNet,
    critic: &MlpNet,
    generator: &MlpNet,
    states: &Matrix,
    t: u64,
    schedules: &ScheduleSet,
    bc_scale: f64,
) -> Result<ActorLoss> {
    let bc_weight = bc_scale * schedules.gamma(t);
    actor_loss_blend(actor, critic, generator, states, bc_weight, schedules.delta(t))
}

/// Per-sample gate `Q(s, pi_bc(s)) > Q(s, pi(s))`; ties exclude the BC term.
pub fn qfilter_mask(actor: &MlpNet, critic: &MlpNet, generator: &MlpNet, states: &Matrix) -> Result<Vec<bool>> {
    let reference = generator.forward_batch(states)?;
    let pi = actor.forward_batch(states)?;
    let q_ref = critic.forward_batch(&states.hcat(&reference)?)?;
    let q_pi = critic.forward_batch(&states.hcat(&pi)?)?;
    Ok(q_ref
        .as_slice()
        .iter()
        .zip(q_pi.as_slice())
        .map(|(a, b)| a > b)
        .collect())
}

pub fn actor_loss_qfilter(
    actor: &MlpNet,
    critic: &MlpNet,
    generator: &MlpNet,
    states: &Matrix,
) -> Result<ActorLoss> {
    let mask = qfilter_mask(actor, critic, generator, states)?;
    let reference = generator.forward_batch(states)?;
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    blended_actor_loss(actor, critic, states, 1.0, Some((&reference, &weights)))
}

/// Polyak averaging `target <- tau * source + (1 - tau) * target`.
pub fn soft_update(source: &MlpNet, target: &mut MlpNet, tau: f64) -> Result<()> {
    if source.architecture() != target.architecture() {
        return Err(Error::Shape(format!(
            "soft update between {:?} and {:?}",
            source.sizes(),
            target.sizes()
        )));
    }
    for (t, &s) in target.params_mut().iter_mut().zip(source.params()) {
        *t = tau * s + (1.0 - tau) * *t;
    }
    Ok(())
}

/// What one [`Agent::train_step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Mean of the two critic losses.
    pub critic_loss: f64,
    /// `Some` on delayed policy steps.
    pub actor_loss: Option<f64>,
    pub weights: ScheduleWeights,
}

/// Networks plus update counter.
#[derive(Debug, Clone)]
pub struct Agent {
    pub nets: AgentNets,
    pub cfg: TrainCfg,
    updates: u64,
}

impl Agent {
    pub fn new(nets: AgentNets, cfg: TrainCfg) -> Result<Self> {
        cfg.validate()?;
        if cfg.variant.needs_generator() && nets.generator.is_none() {
            return Err(Error::InvalidConfig(format!(
                "variant {} needs a pretrained generator",
                cfg.variant
            )));
        }
        Ok(Self {
            nets,
            cfg,
            updates: 0,
        })
    }

    /// Critic updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Sample, update both critics, and on every `policy_delay`-th call update
    /// the actor and soft-update all three targets.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        t: u64,
        schedules: &ScheduleSet,
        rng: &mut R,
    ) -> Result<StepMetrics> {
        let sample = buffer.sample(self.cfg.batch_size, rng)?;
        let batch = TrainBatch::from_transitions(&sample)?;
        let y = critic_targets(&batch, &self.nets, &self.cfg, rng)?;
        let (l1, l2) = critic_update(&mut self.nets, &batch, &y)?;
        self.updates += 1;

        let weights = self.cfg.variant.effective_weights(schedules, t);
        let mut actor_loss = None;
        if self.updates % self.cfg.policy_delay == 0 {
            let nets = &self.nets;
            let loss = match self.cfg.variant.objective() {
                Objective::Td3 => actor_loss_td3(&nets.actor, &nets.critic1, &batch.states)?,
                Objective::Scheduled => actor_loss_blend(
                    &nets.actor,
                    &nets.critic1,
                    nets.generator()?,
                    &batch.states,
                    self.cfg.bc_scale * weights.gamma,
                    weights.delta,
                )?,
                Objective::QFilter => actor_loss_qfilter(
                    &nets.actor,
                    &nets.critic1,
                    nets.generator()?,
                    &batch.states,
                )?,
            };
            let nets = &mut self.nets;
            nets.actor_opt.step(&mut nets.actor, &loss.grads)?;
            soft_update(&nets.actor, &mut nets.target_actor, self.cfg.tau)?;
            soft_update(&nets.critic1, &mut nets.target_critic1, self.cfg.tau)?;
            soft_update(&nets.critic2, &mut nets.target_critic2, self.cfg.tau)?;
            actor_loss = Some(loss.value);
        }
        Ok(StepMetrics {
            critic_loss: 0.5 * (l1 + l2),
            actor_loss,
            weights,
        })
    }
}

#[cfg(test)]
mod tests;
