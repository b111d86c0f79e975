//! Demonstrations: generation, statistics, sampling, and the behavior-cloned
//! reference-action generator.
//!
//! # Demo file format
//!
//! Line-oriented decimal text, whitespace separated:
//!
//! ```text
//! demoset 1
//! dims <obs_dim> <act_dim>
//! count <number of trajectories>
//! traj <tier> <seed> <return> <n_transitions>
//! <s[0..obs]> <a[0..act]> <r> <s_next[0..obs]> <done 0|1> <fr> <hr> <cc> <tc>
//! ...
//! ```
//!
//! Floats use shortest round-trip formatting, so reading a written set gives
//! back bit-identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{expert_rollout, EnvSpec, Origin, RewardComponents, Tier, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Activation, Adam, AdamConfig, Architecture, Matrix, MlpNet};
use crate::rng;

/// Number of scripted trajectories per quality tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierMix {
    pub expert: usize,
    pub suboptimal: usize,
    pub failing: usize,
}

impl TierMix {
    pub fn total(&self) -> usize {
        self.expert + self.suboptimal + self.failing
    }

    pub fn count(&self, tier: Tier) -> usize {
        match tier {
            Tier::Expert => self.expert,
            Tier::Suboptimal => self.suboptimal,
            Tier::Failing => self.failing,
        }
    }
}

impl Default for TierMix {
    fn default() -> Self {
        Self {
            expert: 60,
            suboptimal: 30,
            failing: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
}

pub fn demo_stats(trajectories: &[Trajectory]) -> Result<ReturnStats> {
    if trajectories.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for t in trajectories {
        max = max.max(t.total_return);
        min = min.min(t.total_return);
        sum += t.total_return;
    }
    Ok(ReturnStats {
        max,
        min,
        mean: sum / trajectories.len() as f64,
    })
}

/// Immutable set of demonstration trajectories. All transitions carry
/// [`Origin::Demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    trajectories: Vec<Trajectory>,
    stats: ReturnStats,
}

impl DemoSet {
    pub fn new(mut trajectories: Vec<Trajectory>) -> Result<Self> {
        let stats = demo_stats(&trajectories)?;
        for t in &mut trajectories {
            for tr in &mut t.transitions {
                tr.origin = Origin::Demo;
            }
        }
        Ok(Self {
            trajectories,
            stats,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn stats(&self) -> ReturnStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    fn dims(&self) -> (usize, usize) {
        self.trajectories
            .iter()
            .flat_map(|t| t.transitions.first())
            .map(|tr| (tr.s.len(), tr.a.len()))
            .next()
            .unwrap_or((0, 0))
    }

    pub fn to_text(&self) -> String {
        let (obs_dim, act_dim) = self.dims();
        let mut out = String::new();
        let _ = writeln!(out, "demoset 1");
        let _ = writeln!(out, "dims {obs_dim} {act_dim}");
        let _ = writeln!(out, "count {}", self.trajectories.len());
        for t in &self.trajectories {
            let tier = t.tier.map_or("none", Tier::as_str);
            let _ = writeln!(
                out,
                "traj {tier} {} {:?} {}",
                t.seed,
                t.total_return,
                t.transitions.len()
            );
            for tr in &t.transitions {
                let mut fields: Vec<String> = Vec::with_capacity(2 * obs_dim + act_dim + 6);
                fields.extend(tr.s.iter().map(|v| format!("{v:?}")));
                fields.extend(tr.a.iter().map(|v| format!("{v:?}")));
                fields.push(format!("{:?}", tr.r));
                fields.extend(tr.s_next.iter().map(|v| format!("{v:?}")));
                fields.push(if tr.done { "1" } else { "0" }.to_string());
                let c = &tr.components;
                for v in [c.fr, c.hr, c.cc, c.tc] {
                    fields.push(format!("{v:?}"));
                }
                let _ = writeln!(out, "{}", fields.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = || lines.next().ok_or_else(|| Error::parse(0, "unexpected end of file"));

        let (n, magic) = next()?;
        if magic != "demoset 1" {
            return Err(Error::parse(n, "expected `demoset 1`"));
        }
        let (n, dims) = next()?;
        let dims = keyed_numbers::<usize>(n, dims, "dims")?;
        let [obs_dim, act_dim] = dims[..] else {
            return Err(Error::parse(n, "expected `dims <obs> <act>`"));
        };
        let (n, count) = next()?;
        let count = keyed_numbers::<usize>(n, count, "count")?;
        let [count] = count[..] else {
            return Err(Error::parse(n, "expected `count <n>`"));
        };

        let width = 2 * obs_dim + act_dim + 6;
        let mut trajectories = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, header) = next()?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let ["traj", tier, seed, ret, len] = parts[..] else {
                return Err(Error::parse(n, "expected `traj <tier> <seed> <return> <len>`"));
            };
            let tier = match tier {
                "none" => None,
                t => Some(t.parse::<Tier>().map_err(|e| Error::parse(n, e.to_string()))?),
            };
            let seed: u64 = parse_num(n, seed)?;
            let total_return: f64 = parse_num(n, ret)?;
            let len: usize = parse_num(n, len)?;

            let mut transitions = Vec::with_capacity(len);
            for _ in 0..len {
                let (n, line) = next()?;
                let v = line
                    .split_whitespace()
                    .map(|f| parse_num::<f64>(n, f))
                    .collect::<Result<Vec<f64>>>()?;
                if v.len() != width {
                    return Err(Error::parse(
                        n,
                        format!("transition has {} fields, expected {width}", v.len()),
                    ));
                }
                let mut at = 0;
                let mut take = |k: usize| {
                    let s = v[at..at + k].to_vec();
                    at += k;
                    s
                };
                let s = take(obs_dim);
                let a = take(act_dim);
                let r = take(1)[0];
                let s_next = take(obs_dim);
                let done = match take(1)[0] {
                    d if d == 0.0 => false,
                    d if d == 1.0 => true,
                    d => return Err(Error::parse(n, format!("done flag must be 0 or 1, got {d}"))),
                };
                let c = take(4);
                transitions.push(Transition {
                    s,
                    a,
                    r,
                    s_next,
                    done,
                    components: RewardComponents {
                        fr: c[0],
                        hr: c[1],
                        cc: c[2],
                        tc: c[3],
                    },
                    origin: Origin::Demo,
                });
            }
            trajectories.push(Trajectory {
                transitions,
                total_return,
                tier,
                seed,
            });
        }
        DemoSet::new(trajectories)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::parse(line, format!("`{s}`: {e}")))
}

fn keyed_numbers<T: std::str::FromStr>(line: usize, text: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let rest = text
        .strip_prefix(key)
        .ok_or_else(|| Error::parse(line, format!("expected `{key} ...`")))?;
    rest.split_whitespace().map(|s| parse_num(line, s)).collect()
}

/// Rolls out the scripted demonstrators, tier by tier (expert first), each
/// trajectory on its own seed derived from `seed`.
pub fn generate_demo_set(spec: &EnvSpec, mix: &TierMix, seed: u64) -> Result<DemoSet> {
    if mix.total() == 0 {
        return Err(Error::InvalidConfig("demo mix has zero trajectories".into()));
    }
    let mut trajectories = Vec::with_capacity(mix.total());
    let mut k = 0u64;
    for tier in Tier::ALL {
        for _ in 0..mix.count(tier) {
            let traj_seed = rng::derive_seed(seed, k);
            trajectories.push(expert_rollout(spec, tier, traj_seed)?);
            k += 1;
        }
    }
    DemoSet::new(trajectories)
}

/// Picks `n_traj` trajectories without replacement, then draws `n_trans`
/// transitions uniformly with replacement from their union.
pub fn sample_transitions<'a, R: Rng + ?Sized>(
    demos: &'a DemoSet,
    n_traj: usize,
    n_trans: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    if demos.is_empty() {
        return Err(Error::EmptyDemos);
    }
    if n_traj == 0 || n_traj > demos.len() {
        return Err(Error::InvalidSample(format!(
            "cannot pick {n_traj} of {} trajectories",
            demos.len()
        )));
    }
    let chosen: Vec<&Trajectory> = index::sample(rng, demos.len(), n_traj)
        .into_iter()
        .map(|i| &demos.trajectories[i])
        .collect();
    let pool: usize = chosen.iter().map(|t| t.len()).sum();
    if pool == 0 {
        return Err(Error::InvalidSample("chosen trajectories are empty".into()));
    }
    let mut out = Vec::with_capacity(n_trans);
    for _ in 0..n_trans {
        let mut k = rng.random_range(0..pool);
        for t in &chosen {
            if k < t.len() {
                out.push(&t.transitions[k]);
                break;
            }
            k -= t.len();
        }
    }
    Ok(out)
}

/// Behavior-cloning schedule for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub iters: usize,
    /// Trajectories drawn per batch.
    pub n_traj: usize,
    /// Transitions drawn per batch from those trajectories.
    pub n_trans: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iters: 20_000,
            n_traj: 10,
            n_trans: 64,
            lr: 1e-4,
            l2: 1e-4,
        }
    }
}

/// Actor-shaped architecture (tanh everywhere) for `obs -> action` maps.
pub fn policy_architecture(obs_dim: usize, hidden: &[usize], act_dim: usize) -> Architecture {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(obs_dim);
    sizes.extend_from_slice(hidden);
    sizes.push(act_dim);
    Architecture::new(sizes, Activation::Tanh, Activation::Tanh)
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub net: MlpNet,
    /// Batch MSE before each update.
    pub losses: Vec<f64>,
}

/// Supervised regression of demonstrated actions on demonstrated states.
pub fn pretrain_generator(
    demos: &DemoSet,
    cfg: &PretrainConfig,
    arch: &Architecture,
    seed: u64,
) -> Result<Pretrained> {
    if demos.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let mut net = MlpNet::new(arch.clone(), seed)?;
    let mut adam = Adam::new(&net, AdamConfig::new(cfg.lr, cfg.l2));
    let mut rng = rng::stream(seed, 0xB0C);
    let n_traj = cfg.n_traj.min(demos.len());
    let mut losses = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let batch = sample_transitions(demos, n_traj, cfg.n_trans, &mut rng)?;
        let states = Matrix::from_rows(&batch.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&batch.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>())?;
        let trace = net.trace(&states)?;
        let (loss, upstream) = mse_loss(trace.output(), &actions)?;
        let grads = net.backward(&trace, &upstream)?.grads;
        adam.step(&mut net, &grads)?;
        losses.push(loss);
    }
    Ok(Pretrained { net, losses })
}

/// Actor initialised as an exact copy of the generator.
pub fn bc_finetune_init(generator: &MlpNet, actor_arch: &Architecture) -> Result<MlpNet> {
    let mut actor = MlpNet::zeros(actor_arch.clone())?;
    actor.copy_from(generator)?;
    Ok(actor)
}

/// Trailing moving averages; element `i` averages `values[i..i + window]`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(ret: f64, n: usize) -> Trajectory {
        let transitions = (0..n)
            .map(|i| Transition {
                s: vec![i as f64, 0.0],
                a: vec![0.1 * i as f64],
                r: ret / n as f64,
                s_next: vec![i as f64 + 1.0, 0.0],
                done: i + 1 == n,
                components: RewardComponents {
                    fr: ret / n as f64,
                    ..Default::default()
                },
                origin: Origin::Agent,
            })
            .collect();
        Trajectory {
            transitions,
            total_return: ret,
            tier: Some(Tier::Expert),
            seed: 0,
        }
    }

    #[test]
    fn stats_of_three_returns() {
        let s = demo_stats(&[traj(10.0, 1), traj(5.0, 1), traj(0.0, 1)]).unwrap();
        assert_eq!((s.max, s.min, s.mean), (10.0, 0.0, 5.0));
        let one = demo_stats(&[traj(3.5, 2)]).unwrap();
        assert_eq!((one.max, one.min, one.mean), (3.5, 3.5, 3.5));
        assert!(matches!(demo_stats(&[]), Err(Error::EmptyDemos)));
    }

    #[test]
    fn demo_set_marks_demo_origin() {
        let set = DemoSet::new(vec![traj(1.0, 3)]).unwrap();
        assert!(set.trajectories()[0]
            .transitions
            .iter()
            .all(|t| t.origin == Origin::Demo));
    }

    #[test]
    fn single_expert_mix_has_degenerate_stats() {
        let spec = EnvSpec::corridor_walker();
        let mix = TierMix {
            expert: 1,
            suboptimal: 0,
            failing: 0,
        };
        let set = generate_demo_set(&spec, &mix, 3).unwrap();
        let s = set.stats();
        assert_eq!(s.max, s.min);
        assert_eq!(s.min, s.mean);
    }

    #[test]
    fn zero_mix_is_rejected() {
        let spec = EnvSpec::corridor_walker();
        let mix = TierMix {
            expert: 0,
            suboptimal: 0,
            failing: 0,
        };
        assert!(matches!(
            generate_demo_set(&spec, &mix, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sampling_membership_and_errors() {
        let set = DemoSet::new(vec![traj(1.0, 4), traj(2.0, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = sample_transitions(&set, 2, 1, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!(set
            .trajectories()
            .iter()
            .any(|t| t.transitions.iter().any(|tr| std::ptr::eq(tr, one[0]))));
        assert!(matches!(
            sample_transitions(&set, 3, 1, &mut rng),
            Err(Error::InvalidSample(_))
        ));
        let a = sample_transitions(&set, 1, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_transitions(&set, 1, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform_over_two_transitions() {
        let set = DemoSet::new(vec![traj(1.0, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = sample_transitions(&set, 1, 10_000, &mut rng).unwrap();
        let first = draws.iter().filter(|t| t.s[0] == 0.0).count();
        let expected = 5_000.0;
        assert!((first as f64 - expected).abs() / expected < 0.05, "{first}");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let spec = EnvSpec::corridor_walker();
        let set = generate_demo_set(
            &spec,
            &TierMix {
                expert: 2,
                suboptimal: 2,
                failing: 1,
            },
            8,
        )
        .unwrap();
        let text = set.to_text();
        let back = DemoSet::from_text(&text).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_demo_text_is_rejected() {
        assert!(DemoSet::from_text("").is_err());
        assert!(DemoSet::from_text("demoset 1\ndims 2 1\ncount 1\ntraj expert 0 1.0 1\n1 2 3\n").is_err());
        assert!(DemoSet::from_text("demoset 1\ndims 2 1\ncount 0\n").is_err());
    }

    #[test]
    fn zero_iterations_returns_fresh_init() {
        let set = DemoSet::new(vec![traj(1.0, 4)]).unwrap();
        let arch = policy_architecture(2, &[5], 1);
        let cfg = PretrainConfig {
            iters: 0,
            ..Default::default()
        };
        let out = pretrain_generator(&set, &cfg, &arch, 21).unwrap();
        assert_eq!(out.net, MlpNet::new(arch, 21).unwrap());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn finetune_copy_is_independent() {
        let arch = policy_architecture(3, &[4], 2);
        let generator = MlpNet::new(arch.clone(), 2).unwrap();
        let mut actor = bc_finetune_init(&generator, &arch).unwrap();
        let x = [0.3, -0.2, 0.9];
        assert_eq!(actor.forward(&x).unwrap(), generator.forward(&x).unwrap());
        actor.params_mut()[0] += 1.0;
        assert_ne!(actor.params()[0], generator.params()[0]);
        let other = policy_architecture(3, &[5], 2);
        assert!(matches!(
            bc_finetune_init(&generator, &other),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
