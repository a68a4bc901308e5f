use std::collections::{BTreeSet, HashMap};

use curio_core::domain::{query_entities, Constraints};
use curio_core::dst::{dst_update, BeliefState};
use curio_core::env::{DialogueEnv, World};
use curio_core::icm::random_catalog_action;
use curio_core::nlg::Speaker;
use curio_core::ppo::{bernoulli_log_prob, compute_gae};
use curio_core::rnd::{RndConfig, RndModel};
use curio_core::rng::rng_for;
use curio_core::{ActSet, Ontology, VectorLayout};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::Rng;

fn world() -> std::sync::Arc<World> {
    World::standard().unwrap()
}

#[test]
fn sampled_goals_are_satisfiable_with_and_without_fallbacks() {
    let w = world();
    for seed in 0..1000 {
        let goal = w.sample_goal(seed).unwrap();
        assert!((1..=3).contains(&goal.sections.len()));
        for s in &goal.sections {
            assert!(!query_entities(&w.database, &s.domain, &s.constraints).unwrap().is_empty(), "seed {seed}");
            for (slot, value) in &s.fallbacks {
                let mut relaxed = s.constraints.clone();
                relaxed.insert(slot.clone(), value.clone());
                assert!(!query_entities(&w.database, &s.domain, &relaxed).unwrap().is_empty(), "seed {seed}");
            }
        }
    }
}

fn domain_constraints() -> impl Strategy<Value = (String, Constraints, Constraints)> {
    let ontology = Ontology::default_multi_domain();
    let domains = ontology.domains.clone();
    (0..domains.len(), any::<u64>()).prop_map(move |(i, seed)| {
        let d = &domains[i];
        let mut rng = rng_for(seed, "prop-constraints", 0);
        let mut small = Constraints::new();
        let mut large = Constraints::new();
        for s in &d.informable {
            let roll = rng.random_range(0..3);
            let v = s.values[rng.random_range(0..s.values.len())].clone();
            if roll == 0 {
                small.insert(s.name.clone(), v.clone());
                large.insert(s.name.clone(), v);
            } else if roll == 1 {
                large.insert(s.name.clone(), v);
            }
        }
        (d.name.clone(), small, large)
    })
}

fn catalog_subset() -> impl Strategy<Value = Vec<usize>> {
    subsequence((0..world().layout.action_dim()).collect::<Vec<_>>(), 0..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adding_constraints_never_adds_results((domain, small, large) in domain_constraints()) {
        let w = world();
        let a: BTreeSet<String> =
            query_entities(&w.database, &domain, &small).unwrap().into_iter().map(|e| e.id.clone()).collect();
        let b: BTreeSet<String> =
            query_entities(&w.database, &domain, &large).unwrap().into_iter().map(|e| e.id.clone()).collect();
        prop_assert!(b.is_subset(&a));
    }

    #[test]
    fn action_round_trip(picks in catalog_subset()) {
        let w = world();
        let layout = &w.layout;
        let acts = ActSet::from_acts(picks.iter().map(|&i| layout.catalog()[i].clone())).unwrap();
        let v = layout.encode_action(&acts).unwrap();
        prop_assert_eq!(v.0.sum() as usize, acts.len());
        prop_assert_eq!(layout.decode_action(&v).unwrap(), acts);
    }

    #[test]
    fn dst_user_turn_is_idempotent(seed in 0u64..10_000) {
        let w = world();
        let mut env = DialogueEnv::new(w);
        let b = env.reset(seed).unwrap();
        let opening = b.last_user.clone();
        prop_assert_eq!(dst_update(&b, &opening, Speaker::User).unwrap(), b);
    }

    #[test]
    fn log_prob_is_never_positive(logits in prop::collection::vec(-50.0f64..50.0, 1..20), mask in any::<u64>()) {
        let bits: Vec<f64> = (0..logits.len()).map(|i| ((mask >> i) & 1) as f64).collect();
        prop_assert!(bernoulli_log_prob(&logits, &bits) <= 0.0);
    }

    #[test]
    fn rnd_reward_is_non_negative(seed in any::<u64>(), eta in 0.0f64..10.0) {
        let mut m = RndModel::new(RndConfig { warmup_episodes: 0, hidden: 8, ..RndConfig::das() }, 4, 3, &mut rng_for(seed, "p", 0)).unwrap();
        m.eta = eta;
        let mut rng = rng_for(seed, "q", 0);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
        let (r, _) = m.batch_rewards(&x, 1).unwrap();
        prop_assert!(r.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eta_never_increases(alpha in 1e-4f64..0.5, steps in 0u64..500, span in 0u64..400) {
        let config = RndConfig { alpha, anneal_span: span, hidden: 4, ..RndConfig::utt() };
        let mut m = RndModel::new(config, 2, 2, &mut rng_for(0, "p", 0)).unwrap();
        let mut last = m.eta;
        for _ in 0..steps {
            let eta = m.anneal_eta();
            prop_assert!(eta <= last);
            last = eta;
        }
        prop_assert_eq!(m.anneal_steps, steps.min(span));
    }

    #[test]
    fn random_policy_episodes_respect_reward_shape(seed in 0u64..100_000) {
        let w = world();
        let mut env = DialogueEnv::new(w.clone());
        env.reset(seed).unwrap();
        let mut rng = rng_for(seed, "prop-episode", 0);
        loop {
            let acts = random_catalog_action(&w.layout, &mut rng).unwrap();
            if env.step(&acts).unwrap().done {
                break;
            }
        }
        let log = env.log().unwrap();
        let t = log.n_turns as f64;
        let expected = if log.successful { -(t - 1.0) + 40.0 } else { -t };
        prop_assert_eq!(log.extrinsic_return, expected);
        prop_assert!(log.n_turns <= 40);
    }
}

#[test]
fn gae_with_unit_lambda_is_return_minus_value() {
    let mut rng = rng_for(11, "gae-lambda-one", 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let gamma = 0.97;
        let (adv, _) = compute_gae(&rewards, &values, &dones, 0.0, gamma, 1.0).unwrap();
        for t in 0..n {
            let ret: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            assert!((adv[t] - (ret - values[t])).abs() < 1e-10);
        }
    }
}

/// Tracked-field choices for one random belief state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Choices {
    slots: Vec<Option<usize>>,
    outstanding: Vec<bool>,
    delivered: Vec<bool>,
    booking: Vec<(bool, bool)>,
    offered: Vec<bool>,
    db: Vec<Option<usize>>,
    last_user: Vec<usize>,
    last_system: Vec<usize>,
    turn: usize,
}

fn random_state(ontology: &Ontology, layout: &VectorLayout, seed: u64) -> (Choices, BeliefState) {
    let mut rng = rng_for(seed, "injectivity", 0);
    let mut c = Choices {
        slots: vec![],
        outstanding: vec![],
        delivered: vec![],
        booking: vec![],
        offered: vec![],
        db: vec![],
        last_user: vec![],
        last_system: vec![],
        turn: rng.random_range(0..=40),
    };
    let mut b = BeliefState { turn_index: c.turn, ..BeliefState::default() };
    for d in &ontology.domains {
        let name = d.name.clone();
        for s in &d.informable {
            let pick = rng.random_bool(0.3).then(|| rng.random_range(0..s.values.len()));
            if let Some(k) = pick {
                b.constraints.entry(name.clone()).or_default().insert(s.name.clone(), s.values[k].clone());
            }
            c.slots.push(pick);
        }
        for r in &d.requestable {
            let open = rng.random_bool(0.3);
            let done = rng.random_bool(0.3);
            if open {
                b.requested.entry(name.clone()).or_default().insert(r.clone());
            }
            if done {
                b.delivered.entry(name.clone()).or_default().insert(r.clone(), "x".into());
            }
            c.outstanding.push(open);
            c.delivered.push(done);
        }
        let flags = if d.bookable { (rng.random_bool(0.3), rng.random_bool(0.3)) } else { (false, false) };
        if flags.0 {
            b.booking_requested.insert(name.clone());
        }
        if flags.1 {
            b.booked.insert(name.clone(), "e".into());
        }
        c.booking.push(flags);
        let offered = rng.random_bool(0.3);
        if offered {
            b.offered.insert(name.clone(), "e".into());
        }
        c.offered.push(offered);
        let bucket = rng.random_bool(0.5).then(|| rng.random_range(0..4));
        if let Some(k) = bucket {
            b.db_matches.insert(name.clone(), [0, 1, 3, 9][k]);
        }
        c.db.push(bucket);
    }
    let acts = |rng: &mut rand_chacha::ChaCha8Rng| {
        let n = rng.random_range(0..=3);
        let mut idx: Vec<usize> = rand::seq::index::sample(rng, layout.action_dim(), n).into_vec();
        idx.sort_unstable();
        idx
    };
    c.last_user = acts(&mut rng);
    c.last_system = acts(&mut rng);
    b.last_user = ActSet::from_acts(c.last_user.iter().map(|&i| layout.catalog()[i].clone())).unwrap();
    b.last_system = ActSet::from_acts(c.last_system.iter().map(|&i| layout.catalog()[i].clone())).unwrap();
    (c, b)
}

#[test]
fn distinct_tracked_states_encode_distinctly() {
    let ontology = Ontology::default_multi_domain();
    let layout = VectorLayout::new(&ontology, 40, 3).unwrap();
    let mut seen: HashMap<Vec<u64>, Choices> = HashMap::new();
    for seed in 0..10_000 {
        let (choices, belief) = random_state(&ontology, &layout, seed);
        let v = layout.encode_state(&belief).unwrap();
        assert!(v.0.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let key: Vec<u64> = v.0.iter().map(|x| x.to_bits()).collect();
        if let Some(prev) = seen.insert(key, choices.clone()) {
            assert_eq!(prev, choices, "two different states share a vector");
        }
    }
}

#[test]
fn layout_dump_is_stable() {
    let ontology = Ontology::default_multi_domain();
    let a = VectorLayout::new(&ontology, 40, 3).unwrap().to_json();
    let b = VectorLayout::new(&Ontology::default_multi_domain(), 40, 3).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn every_catalog_act_survives_delexicalized_lexicalization() {
    let w = world();
    let mut env = DialogueEnv::new(w.clone());
    let belief = env.reset(3).unwrap();
    for act in w.layout.catalog() {
        let single = ActSet::from_acts([act.clone()]).unwrap();
        let lexical = env.lexicalize(&belief, &single).unwrap();
        assert!(!lexical.is_empty(), "{act}");
        for a in &lexical {
            assert!(w.layout.catalog_position(a).is_some(), "{a}");
        }
    }
}
