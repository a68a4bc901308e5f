//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use curio_core::dst::BeliefState;
use curio_core::env::{DialogueEnv, World};
use curio_core::icm::random_catalog_action;
use curio_core::rng::rng_for;
use curio_core::{ActSet, Result};

/// Belief states and the acts that led to them, from random-policy dialogues.
pub fn visited_states(world: &Arc<World>, n: usize, seed: u64) -> Result<Vec<(BeliefState, ActSet)>> {
    let mut env = DialogueEnv::new(world.clone());
    let mut rng = rng_for(seed, "bench-states", 0);
    let mut out = Vec::with_capacity(n);
    let mut goal = 0;
    while out.len() < n {
        env.reset(goal)?;
        goal += 1;
        loop {
            let acts = random_catalog_action(&world.layout, &mut rng)?;
            let r = env.step(&acts)?;
            out.push((r.next_state, acts));
            if r.done || out.len() == n {
                break;
            }
        }
    }
    Ok(out)
}
