use rand_chacha::ChaCha8Rng;

use crate::domain::{ActSet, DialogueAct};
use crate::dst::BeliefState;
use crate::env::World;
use crate::error::Result;
use crate::icm::random_catalog_action;
use crate::nn::Mlp;
use crate::ppo::{policy_act, ActMode};
use crate::rng::rng_for;

/// Maps a belief state to the system's delexicalized acts for the turn.
pub trait DialoguePolicy {
    fn act(&mut self, belief: &BeliefState, world: &World) -> Result<ActSet>;

    /// Called before each dialogue.
    fn begin_dialogue(&mut self, _index: u64) {}
}

/// Greedy decoding of a trained actor.
pub struct ActorPolicy<'a> {
    pub actor: &'a Mlp,
}

impl DialoguePolicy for ActorPolicy<'_> {
    fn act(&mut self, belief: &BeliefState, world: &World) -> Result<ActSet> {
        let state = world.layout.encode_state(belief)?;
        // Greedy mode never draws from the generator.
        let mut rng = rng_for(0, "greedy", 0);
        let (bits, _) = policy_act(self.actor, &state.0, ActMode::Greedy, &mut rng)?;
        world.layout.decode_action(&bits)
    }
}

/// Says nothing, every turn.
pub struct EmptyPolicy;

impl DialoguePolicy for EmptyPolicy {
    fn act(&mut self, _belief: &BeliefState, _world: &World) -> Result<ActSet> {
        Ok(ActSet::new())
    }
}

/// 1 to `max_acts` distinct catalog acts, uniformly; reseeded per dialogue.
pub struct RandomPolicy {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: rng_for(seed, "random-policy", 0) }
    }
}

impl DialoguePolicy for RandomPolicy {
    fn act(&mut self, _belief: &BeliefState, world: &World) -> Result<ActSet> {
        random_catalog_action(&world.layout, &mut self.rng)
    }

    fn begin_dialogue(&mut self, index: u64) {
        self.rng = rng_for(self.seed, "random-policy", index);
    }
}

/// Scripted expert reading the belief state: answers every open request,
/// books what was asked for, and otherwise offers in the domain the user
/// just spoke about.
pub struct OraclePolicy;

impl DialoguePolicy for OraclePolicy {
    fn act(&mut self, belief: &BeliefState, world: &World) -> Result<ActSet> {
        let budget = world.layout.max_acts();
        let mut wanted = Vec::new();
        for (domain, slots) in &belief.requested {
            wanted.extend(slots.iter().map(|s| DialogueAct::inform(domain, s, "").delexicalized()));
        }
        for domain in &belief.booking_requested {
            if !belief.booked.contains_key(domain) {
                wanted.push(DialogueAct::book(domain));
            }
        }
        if wanted.is_empty() {
            let domain = belief.last_user.iter().find_map(|a| a.domain.clone());
            if let Some(d) = domain.or_else(|| belief.constraints.keys().next_back().cloned()) {
                wanted.push(DialogueAct::offer(&d, "").delexicalized());
            }
        }
        ActSet::from_acts(wanted.into_iter().take(budget))
    }
}
