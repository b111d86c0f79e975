//! Corridor-walker: a point mass pushed along a corridor.
//!
//! The walker is rewarded for forward progress (FR) and for staying inside the
//! corridor (HR), and pays for control effort (CC) and for scraping the walls
//! (TC). Leaving the corridor ends the episode. Velocity carries over between
//! steps, so temporally correlated exploration noise pays off.
//!
//! Observation: `(v_x, v_y, p_y, remaining_fraction)`. The forward position is
//! left out because it is unbounded; the remaining fraction makes the horizon
//! cut-off part of the Markov state.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORRIDOR_WALKER: &str = "corridor-walker";

/// Names accepted by [`EnvSpec::by_name`].
pub const REGISTRY: &[&str] = &[CORRIDOR_WALKER];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub dt: f64,
    pub mass: f64,
    pub drag: f64,
    pub force_scale: f64,
    /// Corridor half-width.
    pub y_max: f64,
    /// Fraction of `y_max` beyond which the walker touches a wall.
    pub contact_band: f64,
    pub healthy_bonus: f64,
    pub c_ctrl: f64,
    pub c_contact: f64,
    /// Bound on the uniform start-state perturbation.
    pub init_noise: f64,
}

impl EnvSpec {
    pub fn corridor_walker() -> Self {
        Self {
            name: CORRIDOR_WALKER.to_string(),
            obs_dim: 4,
            act_dim: 2,
            horizon: 200,
            dt: 0.05,
            mass: 1.0,
            drag: 0.05,
            force_scale: 2.0,
            y_max: 1.0,
            contact_band: 0.8,
            healthy_bonus: 1.0,
            c_ctrl: 0.05,
            c_contact: 0.5,
            init_noise: 0.05,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            CORRIDOR_WALKER => Ok(Self::corridor_walker()),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("env {}: {m}", self.name)));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.obs_dim != 4 || self.act_dim != 2 {
            return bad("corridor dynamics need obs_dim 4 and act_dim 2");
        }
        if !(self.dt > 0.0 && self.mass > 0.0 && self.y_max > 0.0) {
            return bad("dt, mass and y_max must be positive");
        }
        if !(0.0..1.0).contains(&self.drag) {
            return bad("drag must lie in [0, 1)");
        }
        if self.init_noise < 0.0 || self.init_noise >= self.y_max {
            return bad("init_noise must lie in [0, y_max)");
        }
        Ok(())
    }

    pub fn with_overrides(mut self, o: &EnvOverrides) -> Self {
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        apply!(
            horizon,
            dt,
            mass,
            drag,
            force_scale,
            y_max,
            contact_band,
            healthy_bonus,
            c_ctrl,
            c_contact,
            init_noise
        );
        self
    }
}

/// Physics overrides read from an experiment config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOverrides {
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub mass: Option<f64>,
    pub drag: Option<f64>,
    pub force_scale: Option<f64>,
    pub y_max: Option<f64>,
    pub contact_band: Option<f64>,
    pub healthy_bonus: Option<f64>,
    pub c_ctrl: Option<f64>,
    pub c_contact: Option<f64>,
    pub init_noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    /// Forward reward.
    pub fr: f64,
    /// Healthy reward.
    pub hr: f64,
    /// Control cost.
    pub cc: f64,
    /// Contact cost.
    pub tc: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.fr + self.hr - self.cc - self.tc
    }

    pub fn add(&mut self, other: &RewardComponents) {
        self.fr += other.fr;
        self.hr += other.hr;
        self.cc += other.cc;
        self.tc += other.tc;
    }

    pub fn scale(&self, k: f64) -> RewardComponents {
        RewardComponents {
            fr: self.fr * k,
            hr: self.hr * k,
            cc: self.cc * k,
            tc: self.tc * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Agent,
    Demo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub components: RewardComponents,
    pub origin: Origin,
}

/// Quality label of a scripted demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Expert,
    Suboptimal,
    Failing,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Expert, Tier::Suboptimal, Tier::Failing];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Expert => "expert",
            Tier::Suboptimal => "suboptimal",
            Tier::Failing => "failing",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown tier `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
    /// `None` for agent rollouts.
    pub tier: Option<Tier>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn component_sums(&self) -> RewardComponents {
        let mut acc = RewardComponents::default();
        for tr in &self.transitions {
            acc.add(&tr.components);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub components: RewardComponents,
}

/// Live episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorWalker {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    done: bool,
}

/// Starts an episode: `p_y`, `v_x`, `v_y` are perturbed uniformly within
/// `±init_noise`, reproducibly per seed.
pub fn reset(spec: &EnvSpec, seed: u64) -> (Vec<f64>, CorridorWalker) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || {
        if spec.init_noise > 0.0 {
            rng.random_range(-spec.init_noise..=spec.init_noise)
        } else {
            0.0
        }
    };
    let vx = jitter();
    let vy = jitter();
    let py = jitter();
    let env = CorridorWalker {
        spec: spec.clone(),
        pos: [0.0, py],
        vel: [vx, vy],
        steps: 0,
        done: false,
    };
    (env.observation(), env)
}

impl CorridorWalker {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    /// Test hook: place the walker in an arbitrary state.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    pub fn observation(&self) -> Vec<f64> {
        let h = self.spec.horizon as f64;
        vec![
            self.vel[0],
            self.vel[1],
            self.pos[1],
            (h - self.steps as f64) / h,
        ]
    }

    /// Advances one step. Out-of-range actions are clipped to the unit box.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished { steps: self.steps });
        }
        if action.len() != self.spec.act_dim {
            return Err(Error::Shape(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.spec.act_dim
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric(format!("action {action:?}")));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let s = &self.spec;

        let gain = s.force_scale * s.dt / s.mass;
        let mut dx = 0.0;
        for k in 0..2 {
            self.vel[k] = (1.0 - s.drag) * self.vel[k] + gain * a[k];
            let d = self.vel[k] * s.dt;
            self.pos[k] += d;
            if k == 0 {
                dx = d;
            }
        }
        self.steps += 1;

        let healthy = self.pos[1].abs() <= s.y_max;
        let contact = self.pos[1].abs() > s.contact_band * s.y_max;
        let components = RewardComponents {
            fr: dx / s.dt,
            hr: if healthy { s.healthy_bonus } else { 0.0 },
            cc: s.c_ctrl * (a[0] * a[0] + a[1] * a[1]),
            tc: if contact { s.c_contact } else { 0.0 },
        };
        self.done = !healthy || self.steps >= s.horizon;
        Ok(StepOutcome {
            obs: self.observation(),
            reward: components.total(),
            done: self.done,
            components,
        })
    }
}

/// Runs `policy` for at most `max_steps` steps (or until the episode ends).
/// Recorded actions are the clipped ones actually applied.
pub fn rollout<P>(spec: &EnvSpec, mut policy: P, seed: u64, max_steps: usize) -> Result<Trajectory>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let (mut obs, mut env) = reset(spec, seed);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    for _ in 0..max_steps {
        let action: Vec<f64> = policy(&obs)?.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let out = env.step(&action)?;
        total += out.reward;
        transitions.push(Transition {
            s: obs,
            a: action,
            r: out.reward,
            s_next: out.obs.clone(),
            done: out.done,
            components: out.components,
            origin: Origin::Agent,
        });
        obs = out.obs;
        if out.done {
            break;
        }
    }
    Ok(Trajectory {
        transitions,
        total_return: total,
        tier: None,
        seed,
    })
}

/// Gains of the proportional controller behind the scripted experts.
#[derive(Debug, Clone, Copy)]
struct Gains {
    v_goal: f64,
    k_v: f64,
    k_p: f64,
    k_d: f64,
    noise: f64,
}

const EXPERT_GAINS: Gains = Gains {
    v_goal: 1.8,
    k_v: 1.5,
    k_p: 2.0,
    k_d: 1.0,
    noise: 0.0,
};

const SUBOPTIMAL_GAINS: Gains = Gains {
    v_goal: 1.0,
    k_v: 1.0,
    k_p: 1.0,
    k_d: 0.5,
    noise: 0.3,
};

/// Hand-written demonstrator of a given quality tier.
///
/// * expert: pushes toward a cruise speed and damps lateral drift.
/// * suboptimal: lower cruise speed, weaker centering, Gaussian jitter.
/// * failing: behaves like the expert for a random prefix, then saturates
///   the lateral action and leaves the corridor.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    tier: Tier,
    switch_step: usize,
    side: f64,
    steps: usize,
}

impl ScriptedExpert {
    pub fn new<R: Rng + ?Sized>(tier: Tier, rng: &mut R) -> Self {
        let (switch_step, side) = match tier {
            Tier::Failing => (
                rng.random_range(10..80),
                if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            ),
            _ => (usize::MAX, 0.0),
        };
        Self {
            tier,
            switch_step,
            side,
            steps: 0,
        }
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn act<R: Rng + ?Sized>(&mut self, obs: &[f64], rng: &mut R) -> Vec<f64> {
        let (vx, vy, py) = (obs[0], obs[1], obs[2]);
        let gains = match self.tier {
            Tier::Suboptimal => SUBOPTIMAL_GAINS,
            _ => EXPERT_GAINS,
        };
        let mut a = [
            gains.k_v * (gains.v_goal - vx),
            -gains.k_p * py - gains.k_d * vy,
        ];
        if gains.noise > 0.0 {
            for v in &mut a {
                let z: f64 = rng.sample(StandardNormal);
                *v += gains.noise * z;
            }
        }
        if self.tier == Tier::Failing && self.steps >= self.switch_step {
            a[1] = self.side;
        }
        self.steps += 1;
        a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
    }
}

/// One scripted-demonstrator episode, labelled with its tier.
pub fn expert_rollout(spec: &EnvSpec, tier: Tier, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e4be27);
    let mut expert = ScriptedExpert::new(tier, &mut rng);
    let mut traj = rollout(spec, |obs| Ok(expert.act(obs, &mut rng)), seed, spec.horizon)?;
    traj.tier = Some(tier);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EnvSpec {
        EnvSpec::corridor_walker()
    }

    #[test]
    fn reset_is_deterministic_and_bounded() {
        let s = spec();
        let (o1, _) = reset(&s, 11);
        let (o2, _) = reset(&s, 11);
        assert_eq!(o1, o2);
        let (o3, _) = reset(&s, 12);
        assert_ne!(o1, o3);
        for seed in 0..200 {
            let (o, _) = reset(&s, seed);
            assert!(o[..3].iter().all(|v| v.abs() <= s.init_noise));
            assert_eq!(o[3], 1.0);
        }
    }

    #[test]
    fn resting_walker_earns_healthy_bonus_only() {
        let s = spec();
        let (_, mut env) = reset(&s, 0);
        env.set_state([0.0, 0.0], [0.0, 0.0]);
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.components.fr, 0.0);
        assert_eq!(out.components.cc, 0.0);
        assert_eq!(out.components.tc, 0.0);
        assert_eq!(out.reward, s.healthy_bonus);
        assert!(!out.done);
    }

    #[test]
    fn leaving_corridor_terminates_without_bonus() {
        let s = spec();
        let (_, mut env) = reset(&s, 0);
        env.set_state([0.0, 0.99], [0.0, 1.0]);
        let out = env.step(&[0.0, 1.0]).unwrap();
        assert!(env.position()[1] > s.y_max);
        assert!(out.done);
        assert_eq!(out.components.hr, 0.0);
        assert_eq!(out.components.tc, s.c_contact);
        assert!(matches!(
            env.step(&[0.0, 0.0]),
            Err(Error::EpisodeFinished { steps: 1 })
        ));
    }

    #[test]
    fn horizon_ends_episode() {
        let mut s = spec();
        s.horizon = 3;
        let (_, mut env) = reset(&s, 4);
        assert!(!env.step(&[0.0, 0.0]).unwrap().done);
        assert!(!env.step(&[0.0, 0.0]).unwrap().done);
        let last = env.step(&[0.0, 0.0]).unwrap();
        assert!(last.done);
        assert_eq!(last.obs[3], 0.0);
    }

    #[test]
    fn actions_are_clipped_not_rejected() {
        let s = spec();
        let (_, mut a) = reset(&s, 2);
        let mut b = a.clone();
        let ra = a.step(&[5.0, -7.0]).unwrap();
        let rb = b.step(&[1.0, -1.0]).unwrap();
        assert_eq!(ra, rb);
        assert!(a.step(&[f64::NAN, 0.0]).is_err());
        assert!(matches!(a.step(&[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn coasting_loses_speed_by_drag_factor() {
        let s = spec();
        let (_, mut env) = reset(&s, 0);
        env.set_state([0.0, 0.0], [1.2, -0.3]);
        let mut speed = (1.2f64 * 1.2 + 0.3 * 0.3).sqrt();
        for _ in 0..2 {
            env.step(&[0.0, 0.0]).unwrap();
            let [vx, vy] = env.velocity();
            let now = (vx * vx + vy * vy).sqrt();
            assert!(now < speed);
            assert!((now - (1.0 - s.drag) * speed).abs() < 1e-12);
            speed = now;
        }
    }

    #[test]
    fn reward_identity_holds_per_step() {
        let s = spec();
        let traj = expert_rollout(&s, Tier::Suboptimal, 5).unwrap();
        for tr in &traj.transitions {
            assert_eq!(tr.r, tr.components.total());
            assert!(tr.a.iter().all(|a| (-1.0..=1.0).contains(a)));
        }
        let sum: f64 = traj.transitions.iter().map(|t| t.r).sum();
        assert_eq!(sum, traj.total_return);
        assert!((traj.component_sums().total() - traj.total_return).abs() < 1e-9);
    }

    #[test]
    fn rollout_edge_cases() {
        let s = spec();
        let zero = rollout(&s, |_| Ok(vec![0.0, 0.0]), 3, 0).unwrap();
        assert!(zero.is_empty());
        assert_eq!(zero.total_return, 0.0);
        let policy = |o: &[f64]| Ok(vec![0.5 - o[0], -o[2]]);
        assert_eq!(
            rollout(&s, policy, 9, 50).unwrap(),
            rollout(&s, policy, 9, 50).unwrap()
        );
        let done: Vec<bool> = rollout(&s, policy, 9, 500)
            .unwrap()
            .transitions
            .iter()
            .map(|t| t.done)
            .collect();
        assert_eq!(done.len(), s.horizon);
        assert!(done[..done.len() - 1].iter().all(|d| !d));
        assert!(done[done.len() - 1]);
    }

    #[test]
    fn expert_pushes_forward_from_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut e = ScriptedExpert::new(Tier::Expert, &mut rng);
        let a = e.act(&[0.0, 0.0, 0.0, 1.0], &mut rng);
        assert!(a[0] > 0.0);
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn unknown_env_name() {
        assert!(matches!(EnvSpec::by_name("hopper"), Err(Error::UnknownEnv(_))));
        for name in REGISTRY {
            EnvSpec::by_name(name).unwrap().validate().unwrap();
        }
    }
}
