use super::*;
use crate::env::{Origin, RewardComponents};
use crate::nn::{numerical_gradient, max_relative_error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBS: usize = 3;
const ACT: usize = 2;

fn states(rows: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * OBS).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, OBS, data).unwrap()
}

fn nets(generator: bool, seed: u64) -> AgentNets {
    let g = generator.then(|| MlpNet::new(policy_architecture(OBS, &[6], ACT), seed + 100).unwrap());
    AgentNets::new(OBS, ACT, &[6, 5], g, &TrainCfg::default(), seed).unwrap()
}

fn transition(rng: &mut ChaCha8Rng, done: bool) -> Transition {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    Transition {
        s: v(OBS),
        a: v(ACT),
        r: v(1)[0],
        s_next: v(OBS),
        done,
        components: RewardComponents::default(),
        origin: Origin::Agent,
    }
}

fn filled_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ReplayBuffer::new(1000).unwrap();
    for i in 0..n {
        b.push(transition(&mut rng, i % 17 == 16)).unwrap();
    }
    b
}

/// Critic whose output is `bias + a_0` (linear, single layer).
fn action_probe_critic(bias: f64) -> MlpNet {
    let mut c = MlpNet::zeros(critic_architecture(OBS, &[], ACT)).unwrap();
    c.weights_mut(0)[OBS] = 1.0;
    c.biases_mut(0)[0] = bias;
    c
}

/// Single-layer tanh policy emitting `tanh(bias)` regardless of input.
fn constant_policy(first: f64) -> MlpNet {
    let mut p = MlpNet::zeros(policy_architecture(OBS, &[], ACT)).unwrap();
    p.biases_mut(0)[0] = first.atanh();
    p
}

#[test]
fn twin_min_target_arithmetic() {
    let y = bootstrap_targets(&[1.0], &[false], &[3.0], &[2.0], 0.99);
    assert!((y[0] - 2.98).abs() < 1e-12);
    let y = bootstrap_targets(&[1.0, -0.5], &[true, true], &[3.0, 1e9], &[2.0, -1e9], 0.99);
    assert_eq!(y, vec![1.0, -0.5]);
}

proptest! {
    #[test]
    fn target_never_exceeds_single_critic_bootstrap(
        r in -10.0f64..10.0, q1 in -50.0f64..50.0, q2 in -50.0f64..50.0, done in any::<bool>()
    ) {
        let y = bootstrap_targets(&[r], &[done], &[q1], &[q2], 0.99)[0];
        if done {
            prop_assert_eq!(y, r);
        } else {
            prop_assert!(y <= r + 0.99 * q1);
            prop_assert!(y <= r + 0.99 * q2);
        }
    }

    #[test]
    fn polyak_distance_never_grows(seed in 0u64..1000, tau in 0.0f64..=1.0) {
        let arch = policy_architecture(OBS, &[4], ACT);
        let source = MlpNet::new(arch.clone(), seed).unwrap();
        let mut target = MlpNet::new(arch, seed + 1).unwrap();
        let dist = |t: &MlpNet| -> f64 {
            t.params().iter().zip(source.params()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let mut prev = dist(&target);
        for _ in 0..5 {
            soft_update(&source, &mut target, tau).unwrap();
            let d = dist(&target);
            prop_assert!(d <= prev + 1e-15);
            prev = d;
        }
    }
}

#[test]
fn critic_targets_respect_terminal_flags_with_real_nets() {
    let nets = nets(false, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trs: Vec<Transition> = (0..8).map(|i| transition(&mut rng, i % 2 == 0)).collect();
    let refs: Vec<&Transition> = trs.iter().collect();
    let batch = TrainBatch::from_transitions(&refs).unwrap();
    let y = critic_targets(&batch, &nets, &TrainCfg::default(), &mut rng).unwrap();
    for (i, tr) in trs.iter().enumerate() {
        if tr.done {
            assert_eq!(y[i], tr.r);
        }
    }
}

#[test]
fn critic_targets_without_smoothing_use_target_actor() {
    let nets = nets(false, 2);
    let cfg = TrainCfg {
        smoothing_sigma: 0.0,
        ..TrainCfg::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tr = transition(&mut rng, false);
    let batch = TrainBatch::from_transitions(&[&tr]).unwrap();
    let y = critic_targets(&batch, &nets, &cfg, &mut rng).unwrap()[0];
    let a = nets.target_actor.forward(&tr.s_next).unwrap();
    let sa: Vec<f64> = tr.s_next.iter().chain(&a).copied().collect();
    let q1 = nets.target_critic1.forward(&sa).unwrap()[0];
    let q2 = nets.target_critic2.forward(&sa).unwrap()[0];
    assert_eq!(y, tr.r + 0.99 * q1.min(q2));
}

#[test]
fn critic_at_its_own_targets_is_unchanged() {
    let cfg = TrainCfg {
        l2: 0.0,
        ..TrainCfg::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trs: Vec<Transition> = (0..6).map(|_| transition(&mut rng, false)).collect();
    let refs: Vec<&Transition> = trs.iter().collect();
    let batch = TrainBatch::from_transitions(&refs).unwrap();
    let c = MlpNet::new(critic_architecture(OBS, &[5], ACT), 4).unwrap();
    let mut nets = AgentNets::from_nets(
        MlpNet::new(policy_architecture(OBS, &[5], ACT), 1).unwrap(),
        c.clone(),
        c.clone(),
        None,
        &cfg,
    );
    let y: Vec<f64> = c
        .forward_batch(&batch.states.hcat(&batch.actions).unwrap())
        .unwrap()
        .as_slice()
        .to_vec();
    let (l1, l2) = critic_update(&mut nets, &batch, &y).unwrap();
    assert_eq!((l1, l2), (0.0, 0.0));
    assert_eq!(nets.critic1, c);
    assert_eq!(nets.critic2, c);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    // [obs + act = 3] -> 2 -> 1: eleven parameters.
    let critic = MlpNet::new(critic_architecture(2, &[2], 1), 5).unwrap();
    assert_eq!(critic.params().len(), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut m = |c: usize| {
        let d = (0..7 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(7, c, d).unwrap()
    };
    let (s, a) = (m(2), m(1));
    let y: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
    let (_, analytic) = critic_loss(&critic, &s, &a, &y).unwrap();
    let numeric = numerical_gradient(&critic, 1e-6, |c| critic_loss(c, &s, &a, &y).unwrap().0);
    let err = max_relative_error(&analytic, &numeric);
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn critics_update_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trs: Vec<Transition> = (0..6).map(|_| transition(&mut rng, false)).collect();
    let refs: Vec<&Transition> = trs.iter().collect();
    let batch = TrainBatch::from_transitions(&refs).unwrap();
    let y = vec![0.5; 6];
    let mut both = nets(false, 9);
    let mut alone = both.critic1.clone();
    let mut opt = both.critic1_opt.clone();
    critic_update(&mut both, &batch, &y).unwrap();
    let (_, g) = critic_loss(&alone, &batch.states, &batch.actions, &y).unwrap();
    opt.step(&mut alone, &g).unwrap();
    assert_eq!(both.critic1, alone);
    assert_ne!(both.critic1.params(), both.critic2.params());
}

#[test]
fn post_horizon_blend_equals_td3_bitwise() {
    let n = nets(true, 4);
    let s = states(9, 1);
    let sched = ScheduleSet::new(20, 10, 10, 0.2).unwrap();
    let td3 = actor_loss_td3(&n.actor, &n.critic1, &s).unwrap();
    for t in [10, 11, 500] {
        let fg = actor_loss_td3fg(&n.actor, &n.critic1, n.generator.as_ref().unwrap(), &s, t, &sched, 3.0)
            .unwrap();
        assert_eq!(fg.grads, td3.grads);
        assert_eq!(fg.value.to_bits(), td3.value.to_bits());
    }
}

#[test]
fn flat_critic_leaves_only_scaled_bc_gradient() {
    let n = nets(true, 6);
    let flat = MlpNet::zeros(n.critic1.architecture().clone()).unwrap();
    let generator = n.generator.as_ref().unwrap();
    let s = states(7, 2);
    let sched = ScheduleSet::new(20, 10, 10, 0.2).unwrap();
    let bc_scale = 3.0;
    let got = actor_loss_td3fg(&n.actor, &flat, generator, &s, 0, &sched, bc_scale).unwrap();

    let pi = n.actor.forward_batch(&s).unwrap();
    let g = generator.forward_batch(&s).unwrap();
    let (_, up) = crate::nn::mse_loss(&pi, &g).unwrap();
    let bc = n.actor.gradients(&s, &up).unwrap();
    for (a, b) in got.grads.as_slice().iter().zip(bc.as_slice()) {
        assert!((a - bc_scale * b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn imitating_generator_exactly_gives_zero_gradient() {
    let n = nets(true, 7);
    let flat = MlpNet::zeros(n.critic1.architecture().clone()).unwrap();
    let generator = n.generator.clone().unwrap();
    let s = states(5, 3);
    let sched = ScheduleSet::new(20, 10, 10, 0.2).unwrap();
    let got = actor_loss_td3fg(&generator, &flat, &generator, &s, 0, &sched, 1.0).unwrap();
    assert_eq!(got.grads.max_abs(), 0.0);
}

#[test]
fn actor_objectives_match_finite_differences() {
    let n = nets(true, 11);
    let g = n.generator.as_ref().unwrap();
    let s = states(6, 4);
    let sched = ScheduleSet::new(100, 50, 50, 0.2).unwrap();
    let check = |f: &dyn Fn(&MlpNet) -> ActorLoss| {
        let analytic = f(&n.actor).grads;
        let numeric = numerical_gradient(&n.actor, 1e-6, |a| f(a).value);
        max_relative_error(&analytic, &numeric)
    };
    let errs = [
        check(&|a| actor_loss_td3(a, &n.critic1, &s).unwrap()),
        check(&|a| actor_loss_td3fg(a, &n.critic1, g, &s, 20, &sched, 1.0).unwrap()),
        check(&|a| actor_loss_qfilter(a, &n.critic1, g, &s).unwrap()),
    ];
    for e in errs {
        assert!(e <= 1e-5, "{errs:?}");
    }
}

#[test]
fn qfilter_gate_is_strict() {
    let s = states(1, 5);
    let critic = action_probe_critic(1.5);
    let actor = constant_policy(0.0);
    // Q(s, a_gen) = 2.0 > Q(s, a_pi) = 1.5
    let better = constant_policy(0.5);
    assert_eq!(qfilter_mask(&actor, &critic, &better, &s).unwrap(), vec![true]);
    let loss = actor_loss_qfilter(&actor, &critic, &better, &s).unwrap();
    assert!((loss.value - (0.25 - 1.5)).abs() < 1e-12);
    // equal Q values: excluded
    let same = constant_policy(0.0);
    assert_eq!(qfilter_mask(&actor, &critic, &same, &s).unwrap(), vec![false]);
}

#[test]
fn closed_gate_reduces_to_td3() {
    let s = states(4, 6);
    let critic = action_probe_critic(0.0);
    let actor = constant_policy(0.3);
    let worse = constant_policy(-0.6);
    assert!(qfilter_mask(&actor, &critic, &worse, &s).unwrap().iter().all(|m| !m));
    let qf = actor_loss_qfilter(&actor, &critic, &worse, &s).unwrap();
    let td3 = actor_loss_td3(&actor, &critic, &s).unwrap();
    assert_eq!(qf.grads, td3.grads);
    assert_eq!(qf.value, td3.value);
}

#[test]
fn soft_update_examples() {
    let arch = policy_architecture(OBS, &[3], ACT);
    let source = MlpNet::new(arch.clone(), 1).unwrap();
    let original = MlpNet::new(arch.clone(), 2).unwrap();

    let mut t = original.clone();
    soft_update(&source, &mut t, 1.0).unwrap();
    assert_eq!(t, source);

    let mut t = original.clone();
    soft_update(&source, &mut t, 0.0).unwrap();
    assert_eq!(t, original);

    let mut one = MlpNet::zeros(arch.clone()).unwrap();
    one.params_mut().fill(1.0);
    let mut zero = MlpNet::zeros(arch).unwrap();
    soft_update(&one, &mut zero, 0.005).unwrap();
    assert!(zero.params().iter().all(|&p| p == 0.005));

    let mut other = MlpNet::zeros(policy_architecture(OBS, &[4], ACT)).unwrap();
    assert!(matches!(soft_update(&source, &mut other, 0.5), Err(Error::Shape(_))));
}

#[test]
fn actor_moves_on_every_second_call() {
    let buffer = filled_buffer(200, 1);
    let cfg = TrainCfg {
        variant: Variant::Td3,
        batch_size: 16,
        ..TrainCfg::default()
    };
    let mut agent = Agent::new(nets(false, 3), cfg).unwrap();
    let sched = ScheduleSet::disabled();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut changed = Vec::new();
    for _ in 0..4 {
        let before = agent.nets.actor.clone();
        let m = agent.train_step(&buffer, 0, &sched, &mut rng).unwrap();
        changed.push(agent.nets.actor != before);
        assert_eq!(m.actor_loss.is_some(), agent.nets.actor != before);
    }
    assert_eq!(changed, vec![false, true, false, true]);
}

#[test]
fn td3fg_after_horizons_steps_like_td3() {
    let buffer = filled_buffer(300, 2);
    let sched = ScheduleSet::new(40, 20, 20, 0.2).unwrap();
    let mk = |variant| {
        let cfg = TrainCfg {
            variant,
            batch_size: 16,
            ..TrainCfg::default()
        };
        Agent::new(nets(true, 5), cfg).unwrap()
    };
    let mut td3 = mk(Variant::Td3);
    let mut fg = mk(Variant::Td3fg);
    let mut r1 = ChaCha8Rng::seed_from_u64(42);
    let mut r2 = ChaCha8Rng::seed_from_u64(42);
    for t in 20..60 {
        let a = td3.train_step(&buffer, t, &sched, &mut r1).unwrap();
        let b = fg.train_step(&buffer, t, &sched, &mut r2).unwrap();
        assert_eq!(a.critic_loss.to_bits(), b.critic_loss.to_bits());
        assert_eq!(a.actor_loss.map(f64::to_bits), b.actor_loss.map(f64::to_bits));
    }
    assert_eq!(td3.nets.actor, fg.nets.actor);
    assert_eq!(td3.nets.critic1, fg.nets.critic1);
    assert_eq!(td3.nets.target_critic2, fg.nets.target_critic2);
}

#[test]
fn generator_is_never_trained() {
    let buffer = filled_buffer(200, 3);
    let sched = ScheduleSet::new(40, 20, 20, 0.2).unwrap();
    for variant in [Variant::Td3fg, Variant::Td3fgQfilter, Variant::Td3fgNoise] {
        let cfg = TrainCfg {
            variant,
            batch_size: 16,
            ..TrainCfg::default()
        };
        let mut agent = Agent::new(nets(true, 8), cfg).unwrap();
        let before = agent.nets.generator.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..30 {
            agent.train_step(&buffer, t, &sched, &mut rng).unwrap();
        }
        assert_eq!(agent.nets.generator, before);
    }
}

#[test]
fn metrics_report_effective_weights() {
    let buffer = filled_buffer(100, 4);
    let sched = ScheduleSet::new(40, 20, 20, 0.2).unwrap();
    let cfg = TrainCfg {
        variant: Variant::Td3fg,
        batch_size: 8,
        ..TrainCfg::default()
    };
    let mut agent = Agent::new(nets(true, 2), cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = agent.train_step(&buffer, 10, &sched, &mut rng).unwrap();
    assert_eq!(m.weights.alpha, sched.alpha(10));
    assert_eq!(m.weights.beta, 0.0);
    assert_eq!(m.weights.gamma, sched.gamma(10));
    assert_eq!(m.weights.delta, sched.delta(10));
    assert!(m.critic_loss.is_finite());
}

#[test]
fn missing_generator_is_a_config_error() {
    let cfg = TrainCfg {
        variant: Variant::Td3fg,
        ..TrainCfg::default()
    };
    assert!(matches!(Agent::new(nets(false, 1), cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn empty_buffer_propagates() {
    let cfg = TrainCfg {
        variant: Variant::Td3,
        ..TrainCfg::default()
    };
    let mut agent = Agent::new(nets(false, 1), cfg).unwrap();
    let empty = ReplayBuffer::new(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        agent.train_step(&empty, 0, &ScheduleSet::disabled(), &mut rng),
        Err(Error::EmptyBuffer)
    ));
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
    assert!("ddpg".parse::<Variant>().is_err());
}
