use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentNets, ReplayBuffer, StepMetrics};
use crate::demo::{generate_demo_set, policy_architecture, pretrain_generator, DemoSet};
use crate::env::{reset, EnvSpec, Origin, RewardComponents, Transition};
use crate::error::{Error, Result};
use crate::explore::{exploration_action, gaussian_action, greedy_action, OuNoise};
use crate::nn::MlpNet;
use crate::rng::{derive_seed, stream};
use crate::sched::ScheduleWeights;

use super::config::ExperimentConfig;

const TAG_PRETRAIN: u64 = 0x7072_6574;
const TAG_NETS: u64 = 0x6e65_7473;
const TAG_PRELOAD: u64 = 0x7072_656c;
const TAG_EXPLORE: u64 = 0x6578_706c;
const TAG_TRAIN: u64 = 0x7472_6e67;
const TAG_ENV: u64 = 0x656e_7673;
const TAG_EVAL: u64 = 0x6576_616c;

/// Mean undiscounted return and mean per-episode component sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub components: RewardComponents,
}

/// Deterministic greedy rollouts; episode `k` starts from seed
/// `derive_seed(seed, k)`.
pub fn evaluate(actor: &MlpNet, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut total = 0.0;
    let mut components = RewardComponents::default();
    for k in 0..episodes {
        let traj = crate::env::rollout(
            spec,
            |obs| greedy_action(actor, obs),
            derive_seed(seed, k as u64),
            spec.horizon,
        )?;
        total += traj.total_return;
        components.add(&traj.component_sums());
    }
    let n = episodes as f64;
    Ok(EvalResult {
        mean_return: total / n,
        components: components.scale(1.0 / n),
    })
}

/// One evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub mean_return: f64,
    pub components: RewardComponents,
    pub weights: ScheduleWeights,
    /// Most recent mean critic loss, if any update has happened.
    pub critic_loss: Option<f64>,
    /// Most recent actor loss, if any actor update has happened.
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_return: f64,
    pub final_return: f64,
    pub updates: u64,
    pub episodes: u64,
    pub aborted: Option<Abort>,
}

/// Everything a run produces apart from wall time, which the caller measures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
}

impl RunLog {
    pub fn final_return(&self) -> f64 {
        self.summary.final_return
    }
}

/// Loads or generates the configured demonstration set.
pub fn load_demos(cfg: &ExperimentConfig) -> Result<DemoSet> {
    match &cfg.demos.file {
        Some(path) => DemoSet::load(path),
        None => generate_demo_set(&cfg.env_spec()?, &cfg.demos.mix, cfg.demos.seed),
    }
}

/// The pretrained generator a run with `seed` would use, if its variant
/// needs one.
pub fn prepare_generator(cfg: &ExperimentConfig, demos: &DemoSet, seed: u64) -> Result<MlpNet> {
    let spec = cfg.env_spec()?;
    let arch = policy_architecture(spec.obs_dim, &cfg.hidden, spec.act_dim);
    Ok(pretrain_generator(demos, &cfg.pretrain, &arch, derive_seed(seed, TAG_PRETRAIN))?.net)
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    cfg.validate()?;
    let demos = if cfg.needs_demos() { Some(load_demos(cfg)?) } else { None };
    let generator = match (&demos, cfg.variant().needs_generator()) {
        (Some(d), true) => Some(prepare_generator(cfg, d, seed)?),
        _ => None,
    };
    run_with(cfg, seed, demos.as_ref(), generator)
}

/// Runs with externally supplied demonstrations and generator, so sweeps can
/// share them across variants.
pub fn run_with(
    cfg: &ExperimentConfig,
    seed: u64,
    demos: Option<&DemoSet>,
    generator: Option<MlpNet>,
) -> Result<RunLog> {
    Ok(train(cfg, seed, demos, generator)?.log)
}

/// A finished run together with its final actor.
#[derive(Debug, Clone)]
pub struct Trained {
    pub log: RunLog,
    pub actor: MlpNet,
}

/// [`run_with`], also returning the final actor.
pub fn train(
    cfg: &ExperimentConfig,
    seed: u64,
    demos: Option<&DemoSet>,
    generator: Option<MlpNet>,
) -> Result<Trained> {
    cfg.validate()?;
    let spec = cfg.env_spec()?;
    let variant = cfg.variant();
    let generator = if variant.needs_generator() {
        Some(generator.ok_or_else(|| Error::InvalidConfig(format!("{variant} needs a generator")))?)
    } else {
        None
    };

    let mut nets = AgentNets::new(
        spec.obs_dim,
        spec.act_dim,
        &cfg.hidden,
        generator,
        &cfg.train,
        derive_seed(seed, TAG_NETS),
    )?;
    if variant.init_from_generator() {
        nets.init_actor_from_generator()?;
    }
    let mut agent = Agent::new(nets, cfg.train)?;

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    if let Some(p) = cfg.preload {
        let demos = demos.ok_or(Error::EmptyDemos)?;
        buffer.preload_demos(demos, p.best_k, p.n_transitions, &mut stream(seed, TAG_PRELOAD))?;
    }

    let mut explore_rng = stream(seed, TAG_EXPLORE);
    let mut train_rng = stream(seed, TAG_TRAIN);
    let env_seed = derive_seed(seed, TAG_ENV);
    let eval_seed = derive_seed(seed, TAG_EVAL);
    let mut ou = OuNoise::new(cfg.noise.ou, spec.act_dim)?;

    let mut episode = 0u64;
    let (mut obs, mut env) = reset(&spec, derive_seed(env_seed, episode));
    let mut last: Option<StepMetrics> = None;
    let mut last_actor = None;
    let mut records = Vec::new();
    let mut aborted = None;

    let record = |step: u64, actor: &MlpNet, last: &Option<StepMetrics>, last_actor| -> Result<EvalRecord> {
        let ev = evaluate(actor, &spec, cfg.eval_episodes, eval_seed)?;
        Ok(EvalRecord {
            step,
            mean_return: ev.mean_return,
            components: ev.components,
            weights: variant.effective_weights(&cfg.schedules, step),
            critic_loss: last.map(|m| m.critic_loss),
            actor_loss: last_actor,
        })
    };
    records.push(record(0, &agent.nets.actor, &last, last_actor)?);

    for t in 0..cfg.total_steps {
        let action = if t < cfg.warmup_steps {
            (0..spec.act_dim)
                .map(|_| explore_rng.random_range(-1.0..=1.0))
                .collect()
        } else if variant.uses_ou() {
            let g = if variant.uses_generator_noise() {
                agent.nets.generator.as_ref()
            } else {
                None
            };
            exploration_action(&agent.nets.actor, g, &obs, t, &cfg.schedules, &mut ou, &mut explore_rng)?
        } else {
            gaussian_action(&agent.nets.actor, &obs, cfg.noise.gaussian_sigma, &mut explore_rng)?
        };

        let out = env.step(&action)?;
        buffer.push(Transition {
            s: std::mem::take(&mut obs),
            a: action,
            r: out.reward,
            s_next: out.obs.clone(),
            done: out.done,
            components: out.components,
            origin: Origin::Agent,
        })?;
        obs = out.obs;
        if out.done {
            episode += 1;
            (obs, env) = reset(&spec, derive_seed(env_seed, episode));
            ou.reset();
        }

        if t >= cfg.warmup_steps {
            match agent.train_step(&buffer, t, &cfg.schedules, &mut train_rng) {
                Ok(m) => {
                    if m.actor_loss.is_some() {
                        last_actor = m.actor_loss;
                    }
                    last = Some(m);
                }
                Err(Error::Numeric(reason)) => {
                    aborted = Some(Abort { step: t, reason });
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        let step = t + 1;
        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            records.push(record(step, &agent.nets.actor, &last, last_actor)?);
        }
    }

    let best_return = records
        .iter()
        .map(|r| r.mean_return)
        .fold(f64::NEG_INFINITY, f64::max);
    let final_return = records.last().map_or(f64::NAN, |r| r.mean_return);
    let log = RunLog {
        config: cfg.clone(),
        seed,
        records,
        summary: Summary {
            best_return,
            final_return,
            updates: agent.updates(),
            episodes: episode,
            aborted,
        },
    };
    Ok(Trained {
        log,
        actor: agent.nets.actor,
    })
}

/// Runs every configured seed, sharing demonstrations across seeds.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunLog>> {
    cfg.validate()?;
    let demos = if cfg.needs_demos() { Some(load_demos(cfg)?) } else { None };
    cfg.seeds
        .iter()
        .map(|&seed| {
            let generator = match (&demos, cfg.variant().needs_generator()) {
                (Some(d), true) => Some(prepare_generator(cfg, d, seed)?),
                _ => None,
            };
            run_with(cfg, seed, demos.as_ref(), generator)
        })
        .collect()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn median_final_return(logs: &[RunLog]) -> Option<f64> {
    median(&logs.iter().map(RunLog::final_return).collect::<Vec<_>>())
}
