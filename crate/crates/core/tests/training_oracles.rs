use curio_core::env::World;
use curio_core::features::{Featurizer, InputMode};
use curio_core::harness::{analyze, ActorPolicy};
use curio_core::icm::{collect_random_samples, IcConfig, IcModel, IcPhase, IcSample, IcStats};
use curio_core::nn::Mlp;
use curio_core::ppo::{mean_bit_probability, policy_act, ppo_update, ActMode, ActorCritic, PpoConfig, Transition};
use curio_core::rnd::{RndConfig, RndModel};
use curio_core::rng::rng_for;
use curio_core::{DialogueEnv, Ontology};
use ndarray::{array, Array1, Array2};
use rand::Rng;

#[test]
fn sampled_bit_frequency_matches_probability() {
    let mut actor = Mlp::zeros(&[2, 3, 6]).unwrap();
    actor.params_mut().biases[1].fill((0.3f64 / 0.7).ln());
    let mut rng = rng_for(0, "bit-frequency", 0);
    let state = array![0.2, 0.7];
    let mut counts = Array1::<f64>::zeros(6);
    let n = 100_000;
    for _ in 0..n {
        let (bits, _) = policy_act(&actor, &state, ActMode::Sample, &mut rng).unwrap();
        counts += &bits.0;
    }
    for c in counts.iter() {
        assert!((c / n as f64 - 0.3).abs() < 0.01, "frequency {}", c / n as f64);
    }
}

/// One-step episodes in two contexts; bit `k` pays +1 in context `k` and −1 otherwise.
fn bandit_batch(model: &ActorCritic, rng: &mut impl Rng, n: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let ctx = rng.random_range(0..2);
            let state = if ctx == 0 { array![1.0, 0.0] } else { array![0.0, 1.0] };
            let (bits, log_prob) = policy_act(&model.actor, &state, ActMode::Sample, rng).unwrap();
            let reward: f64 = (0..2).map(|k| bits.0[k] * if k == ctx { 1.0 } else { -1.0 }).sum();
            let value = model.value(&state).unwrap();
            Transition { state, action: bits.0, log_prob, extrinsic_reward: reward, intrinsic_reward: 0.0, done: true, value }
        })
        .collect()
}

#[test]
fn ppo_solves_a_contextual_bandit() {
    let config = PpoConfig { actor_lr: 1e-2, critic_lr: 1e-2, actor_hidden: 16, critic_hidden: 16, ..PpoConfig::default() };
    let mut solved = 0;
    for seed in 0..10 {
        let mut model = ActorCritic::new(2, 2, &config, &mut rng_for(seed, "bandit-init", 0)).unwrap();
        let mut rng = rng_for(seed, "bandit", 0);
        for round in 0..60 {
            let batch = bandit_batch(&model, &mut rng, 64);
            ppo_update(&mut model, &batch, &config, 1.0, &mut rng_for(seed, "bandit-shuffle", round)).unwrap();
        }
        let p = mean_bit_probability(&model.actor, &array![[1.0, 0.0]]).unwrap();
        let q = mean_bit_probability(&model.actor, &array![[0.0, 1.0]]).unwrap();
        solved += usize::from(p[0] > 0.8 && p[1] < 0.2 && q[1] > 0.8 && q[0] < 0.2);
    }
    assert!(solved >= 9, "solved {solved}/10");
}

#[test]
fn zero_policy_weight_freezes_the_actor_only() {
    let config = PpoConfig { critic_lr: 1e-2, actor_hidden: 8, critic_hidden: 8, ..PpoConfig::default() };
    let mut model = ActorCritic::new(2, 2, &config, &mut rng_for(1, "bandit-init", 0)).unwrap();
    let batch = bandit_batch(&model, &mut rng_for(1, "bandit", 0), 32);
    let (actor, critic) = (model.actor.checksum(), model.critic.checksum());
    ppo_update(&mut model, &batch, &config, 0.0, &mut rng_for(1, "bandit-shuffle", 0)).unwrap();
    assert_eq!(model.actor.checksum(), actor);
    assert_ne!(model.critic.checksum(), critic);
}

#[test]
fn rnd_update_is_monotone_on_a_fixed_batch() {
    let mut violations = 0;
    for seed in 0..20 {
        let mut model = RndModel::new(RndConfig::das(), 40, 24, &mut rng_for(seed, "rnd-init", 0)).unwrap();
        let mut rng = rng_for(seed, "rnd-batch", 0);
        let x = Array2::from_shape_fn((32, 40), |_| if rng.random_bool(0.1) { 1.0 } else { 0.0 });
        let mean = |m: &RndModel| m.raw_errors(&x).unwrap().iter().sum::<f64>() / 32.0;
        let before = mean(&model);
        model.update(&x).unwrap();
        violations += usize::from(mean(&model) > before);
        assert!(model.target_intact());
    }
    assert!(violations <= 1, "{violations} violations");
}

#[test]
fn rnd_annealing_matches_closed_form_over_the_full_span() {
    let mut model = RndModel::new(RndConfig::das(), 4, 4, &mut rng_for(0, "rnd-init", 0)).unwrap();
    for _ in 0..20_000 {
        model.anneal_eta();
    }
    assert!((model.eta - 5.0 * 0.999f64.powi(20_000)).abs() < 1e-12);
    model.anneal_eta();
    assert_eq!(model.anneal_steps, 20_000);
}

fn small_ic(mode: InputMode) -> IcConfig {
    IcConfig { feature_dim: 16, forward_hidden: 32, inverse_hidden: 32, ..IcConfig::for_mode(mode) }
}

fn toy_samples(n: usize, seed: u64, state_dim: usize, action_dim: usize) -> Vec<IcSample> {
    let mut rng = rng_for(seed, "ic-toy", 0);
    (0..n)
        .map(|_| {
            let state = Array1::from_shape_fn(state_dim, |_| rng.random_range(0.0..1.0));
            let action = Array1::from_shape_fn(action_dim, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            let mut next_state = &state * 0.5;
            next_state[0] += action[0];
            IcSample { state, action, next_state }
        })
        .collect()
}

#[test]
fn ic_reward_on_a_repeated_transition_keeps_falling() {
    let mut model = IcModel::new(small_ic(InputMode::Das), 6, 4, &mut rng_for(0, "ic-init", 0)).unwrap();
    let sample = toy_samples(1, 0, 6, 4);
    let mut rewards = vec![model.intrinsic_rewards(&sample).unwrap()[0]];
    for _ in 0..200 {
        model.update(&sample).unwrap();
        rewards.push(model.intrinsic_rewards(&sample).unwrap()[0]);
    }
    let drops = rewards.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops * 10 >= 9 * 200, "{drops}/200 decreasing pairs");
    assert!(rewards.iter().all(|&r| r >= 0.0));
}

#[test]
fn ic_update_lowers_the_combined_loss_on_a_fixed_batch() {
    let world = World::standard().unwrap();
    let featurizer = Featurizer::standard(world.clone()).unwrap();
    let mut env = DialogueEnv::new(world.clone());
    let mut improved = 0;
    for seed in 0..20 {
        let config = IcConfig::for_mode(InputMode::Das);
        let samples = collect_random_samples(&mut env, &featurizer, InputMode::Das, 32, seed).unwrap();
        let mut model =
            IcModel::new(config, world.layout.state_dim(), world.layout.action_dim(), &mut rng_for(seed, "ic-init", 0)).unwrap();
        let beta = model.beta();
        let mix = |s: IcStats| (1.0 - beta) * s.inverse_loss + beta * s.forward_loss;
        let before = mix(model.evaluate(&samples).unwrap());
        model.update(&samples).unwrap();
        improved += usize::from(mix(model.evaluate(&samples).unwrap()) <= before);
    }
    assert!(improved >= 19, "{improved}/20");
}

#[test]
fn untrained_inverse_model_is_at_chance() {
    let model = IcModel::new(small_ic(InputMode::Das), 10, 16, &mut rng_for(4, "ic-init", 0)).unwrap();
    let stats = model.evaluate(&toy_samples(500, 4, 10, 16)).unwrap();
    assert!((stats.inverse_accuracy - 0.5).abs() < 0.03, "{}", stats.inverse_accuracy);
}

#[test]
fn one_domain_pretraining_beats_chance_by_a_margin() {
    let full = Ontology::default_multi_domain();
    let world = World::from_ontology(Ontology::new(vec![full.domains[0].clone()]).unwrap()).unwrap();
    let featurizer = Featurizer::standard(world.clone()).unwrap();
    let mut env = DialogueEnv::new(world.clone());
    for seed in 0..10 {
        let config = IcConfig::for_mode(InputMode::Das);
        let mut model =
            IcModel::new(config, world.layout.state_dim(), world.layout.action_dim(), &mut rng_for(seed, "ic-init", 0)).unwrap();
        model.pretrain(&mut env, &featurizer, seed).unwrap();
        let held_out = collect_random_samples(&mut env, &featurizer, InputMode::Das, 500, seed + 1000).unwrap();
        let acc = model.evaluate(&held_out).unwrap().inverse_accuracy;
        assert!(acc > 0.65, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn joint_update_without_policy_share_equals_a_pretrain_update() {
    let base = IcConfig { lambda_pol: 0.0, ..small_ic(InputMode::Das) };
    let samples = toy_samples(16, 5, 6, 4);
    let mut joint = IcModel::new(base.clone(), 6, 4, &mut rng_for(5, "ic-init", 0)).unwrap();
    joint.enter_joint_phase();
    let matched = IcConfig { lr_pretrain: base.lr_joint, beta_das: base.beta_joint, ..base };
    let mut pretrain = IcModel::new(matched, 6, 4, &mut rng_for(5, "ic-init", 0)).unwrap();
    assert_eq!(pretrain.phase, IcPhase::Pretrain);
    joint.update(&samples).unwrap();
    pretrain.update(&samples).unwrap();
    for (a, b) in [(&joint.encoder, &pretrain.encoder), (&joint.forward, &pretrain.forward), (&joint.inverse, &pretrain.inverse)] {
        assert_eq!(a.params(), b.params());
    }
}

#[test]
fn analysis_leaves_the_policy_untouched() {
    let world = World::standard().unwrap();
    let model = ActorCritic::new(
        world.layout.state_dim(),
        world.layout.action_dim(),
        &PpoConfig::default(),
        &mut rng_for(0, "ppo-init", 0),
    )
    .unwrap();
    let before = model.actor.checksum();
    analyze(&mut ActorPolicy { actor: &model.actor }, &world, 20, 0).unwrap();
    assert_eq!(model.actor.checksum(), before);
}
