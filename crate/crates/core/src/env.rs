//! The dialogue MDP: reset/step over the user simulator and tracker, the
//! extrinsic reward, episode logs and the complete/success/book metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{
    check_booking, query_entities, sample_goal, ActSet, BookingOutcome, DialogueAct, Entity, EntityDatabase, Intent,
    Ontology, UserGoal, DEFAULT_ENTITIES_PER_DOMAIN,
};
use crate::dst::{dst_update, BeliefState};
use crate::error::{Error, Result};
use crate::nlg::{Speaker, TemplateSet};
use crate::user::{user_reset, user_respond, UserConfig, UserState};
use crate::vectorize::VectorLayout;

/// Seed of the built-in entity database.
pub const DEFAULT_DATABASE_SEED: u64 = 2020;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Turn limit `L`; a successful dialogue is also paid `L`.
    pub max_turns: usize,
    pub step_reward: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { max_turns: 40, step_reward: -1.0 }
    }
}

impl EnvConfig {
    pub fn success_reward(&self) -> f64 {
        self.max_turns as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }
}

/// Immutable, shareable description of the dialogue world.
#[derive(Debug)]
pub struct World {
    pub ontology: Ontology,
    pub database: EntityDatabase,
    pub templates: TemplateSet,
    pub layout: VectorLayout,
    pub env: EnvConfig,
    pub user: UserConfig,
}

impl World {
    pub fn new(
        ontology: Ontology,
        database: EntityDatabase,
        templates: TemplateSet,
        env: EnvConfig,
        user: UserConfig,
    ) -> Result<Arc<Self>> {
        ontology.validate()?;
        database.validate(&ontology)?;
        env.validate()?;
        let layout = VectorLayout::new(&ontology, env.max_turns, user.max_acts_per_turn)?;
        templates.check_coverage(layout.catalog())?;
        Ok(Arc::new(Self { ontology, database, templates, layout, env, user }))
    }

    /// Default five-domain world.
    pub fn standard() -> Result<Arc<Self>> {
        Self::from_ontology(Ontology::default_multi_domain())
    }

    pub fn from_ontology(ontology: Ontology) -> Result<Arc<Self>> {
        let database = EntityDatabase::generate(&ontology, DEFAULT_DATABASE_SEED, DEFAULT_ENTITIES_PER_DOMAIN)?;
        Self::new(ontology, database, TemplateSet::default(), EnvConfig::default(), UserConfig::default())
    }

    pub fn sample_goal(&self, seed: u64) -> Result<UserGoal> {
        sample_goal(&self.ontology, &self.database, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: BeliefState,
    pub extrinsic_reward: f64,
    pub done: bool,
    /// Meaningful only when `done`.
    pub success: bool,
    /// System acts after database binding.
    pub system_acts: ActSet,
    pub user_acts: ActSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub system: ActSet,
    pub user: ActSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub goal: UserGoal,
    pub opening: ActSet,
    pub turns: Vec<TurnRecord>,
    pub completed: bool,
    pub successful: bool,
    pub bookable: bool,
    pub booked: bool,
    pub n_turns: usize,
    pub extrinsic_return: f64,
}

#[derive(Clone, Debug)]
struct Episode {
    goal: UserGoal,
    user: UserState,
    belief: BeliefState,
    log: EpisodeLog,
}

/// One dialogue at a time over a shared [`World`].
#[derive(Clone, Debug)]
pub struct DialogueEnv {
    world: Arc<World>,
    episode: Option<Episode>,
}

impl DialogueEnv {
    pub fn new(world: Arc<World>) -> Self {
        Self { world, episode: None }
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    /// Starts a dialogue with a goal sampled from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<BeliefState> {
        let goal = self.world.sample_goal(seed)?;
        self.reset_with_goal(goal)
    }

    pub fn reset_with_goal(&mut self, goal: UserGoal) -> Result<BeliefState> {
        goal.validate(&self.world.ontology)?;
        let (user, opening) = user_reset(&goal, &self.world.user)?;
        let mut belief = dst_update(&BeliefState::default(), &opening, Speaker::User)?;
        self.refresh_matches(&mut belief)?;
        let log = EpisodeLog {
            goal: goal.clone(),
            opening,
            turns: Vec::new(),
            completed: false,
            successful: false,
            bookable: goal.wants_booking(),
            booked: false,
            n_turns: 0,
            extrinsic_return: 0.0,
        };
        self.episode = Some(Episode { goal, user, belief: belief.clone(), log });
        Ok(belief)
    }

    pub fn state(&self) -> Option<&BeliefState> {
        self.episode.as_ref().map(|e| &e.belief)
    }

    pub fn user_state(&self) -> Option<&UserState> {
        self.episode.as_ref().map(|e| &e.user)
    }

    pub fn log(&self) -> Option<&EpisodeLog> {
        self.episode.as_ref().map(|e| &e.log)
    }

    fn refresh_matches(&self, belief: &mut BeliefState) -> Result<()> {
        belief.db_matches.clear();
        for (domain, constraints) in &belief.constraints {
            let n = query_entities(&self.world.database, domain, constraints)?.len();
            belief.db_matches.insert(domain.clone(), n);
        }
        Ok(())
    }

    fn entity(&self, domain: &str, id: &str) -> Option<&Entity> {
        self.world.database.entity(domain, id)
    }

    /// Binds values to catalog acts from the database. Requestable informs
    /// without a valid offer bring their own `Offer`.
    pub fn lexicalize(&self, belief: &BeliefState, acts: &ActSet) -> Result<ActSet> {
        let db = &self.world.database;
        let mut bound = belief.offered.clone();
        let mut out = ActSet::new();
        for act in acts {
            let domain = act.domain_str();
            if let Some(d) = domain {
                self.world.ontology.domain(d)?;
            }
            let empty = Default::default();
            let constraints = domain.and_then(|d| belief.constraints.get(d)).unwrap_or(&empty);
            // Current binding if it still satisfies the user's constraints,
            // else the first match.
            let pick = |bound: &std::collections::BTreeMap<String, String>, d: &str| -> Result<Option<Entity>> {
                if let Some(e) = bound.get(d).and_then(|id| self.entity(d, id)) {
                    if e.matches(constraints) {
                        return Ok(Some(e.clone()));
                    }
                }
                Ok(query_entities(db, d, constraints)?.first().map(|e| (*e).clone()))
            };
            match act.intent {
                Intent::Inform => {
                    let d = domain.ok_or_else(|| Error::Act(act.to_string()))?;
                    let slot = act.slot_str().ok_or_else(|| Error::Act(act.to_string()))?;
                    if self.world.layout.is_requestable(d, slot) {
                        match pick(&bound, d)? {
                            Some(e) => {
                                if bound.get(d) != Some(&e.id) {
                                    out.insert(DialogueAct::offer(d, &e.id))?;
                                    bound.insert(d.to_string(), e.id.clone());
                                }
                                out.insert(DialogueAct::inform(d, slot, &e.slots[slot]))?;
                            }
                            None => {
                                out.insert(DialogueAct::no_offer(d))?;
                            }
                        }
                    } else if let Some(v) = constraints.get(slot) {
                        out.insert(DialogueAct::inform(d, slot, v))?;
                    } else if let Some(e) = pick(&bound, d)? {
                        out.insert(DialogueAct::inform(d, slot, &e.slots[slot]))?;
                    } else {
                        out.insert(DialogueAct::no_offer(d))?;
                    }
                }
                Intent::Offer | Intent::NoOffer => {
                    let d = domain.ok_or_else(|| Error::Act(act.to_string()))?;
                    match pick(&bound, d)? {
                        Some(e) => {
                            bound.insert(d.to_string(), e.id.clone());
                            out.insert(DialogueAct::offer(d, &e.id))?;
                        }
                        None => {
                            bound.remove(d);
                            out.insert(DialogueAct::no_offer(d))?;
                        }
                    }
                }
                Intent::Book | Intent::BookConfirm | Intent::BookFail => {
                    let d = domain.ok_or_else(|| Error::Act(act.to_string()))?;
                    let chosen = match pick(&bound, d)? {
                        Some(e) => Some(e.id),
                        None => match check_booking(db, d, constraints)? {
                            BookingOutcome::Confirmed { entity } => Some(entity),
                            BookingOutcome::Failed => None,
                        },
                    };
                    match chosen {
                        Some(id) => out.insert(DialogueAct::book_confirm(d, &id))?,
                        None => out.insert(DialogueAct::book_fail(d))?,
                    };
                }
                Intent::Request | Intent::Bye | Intent::Greet => {
                    out.insert(act.delexicalized())?;
                }
            }
        }
        Ok(out)
    }

    /// Advances the dialogue by one system turn.
    pub fn step(&mut self, system_acts: &ActSet) -> Result<StepResult> {
        let episode = self.episode.as_ref().ok_or_else(|| Error::State("environment not reset".into()))?;
        if episode.belief.terminal {
            return Err(Error::State("dialogue already finished".into()));
        }
        let lexical = self.lexicalize(&episode.belief, system_acts)?;
        let mut belief = dst_update(&episode.belief, &lexical, Speaker::System)?;

        let mut user = episode.user.clone();
        let (reply, finished) = user_respond(&mut user, &lexical)?;
        belief = dst_update(&belief, &reply, Speaker::User)?;
        self.refresh_matches(&mut belief)?;
        belief.turn_index += 1;
        let done = finished || belief.turn_index >= self.world.env.max_turns;
        belief.terminal = done;
        let success = done && self.evaluate(&user, &belief);
        let booked = done && self.bookings_confirmed(&user, &belief);
        let reward = if success { self.world.env.success_reward() } else { self.world.env.step_reward };

        let episode = self.episode.as_mut().expect("checked above");
        episode.user = user;
        episode.belief = belief.clone();
        let log = &mut episode.log;
        log.turns.push(TurnRecord { system: lexical.clone(), user: reply.clone() });
        log.n_turns = belief.turn_index;
        log.extrinsic_return += reward;
        if done {
            log.completed = episode.user.completed;
            log.successful = success;
            log.booked = log.bookable && booked;
        }
        Ok(StepResult { next_state: belief, extrinsic_reward: reward, done, success, system_acts: lexical, user_acts: reply })
    }

    fn bookings_confirmed(&self, user: &UserState, belief: &BeliefState) -> bool {
        user.goal.sections.iter().filter(|s| s.wants_booking).all(|s| {
            belief
                .booked
                .get(&s.domain)
                .and_then(|id| self.entity(&s.domain, id))
                .is_some_and(|e| e.matches(&s.constraints))
        })
    }

    /// Task success: the user finished with an empty agenda, every request
    /// was answered with the offered entity's value, that entity satisfies
    /// the goal, and every wanted booking is confirmed on a matching entity.
    fn evaluate(&self, user: &UserState, belief: &BeliefState) -> bool {
        if !user.completed || !user.abandoned.is_empty() {
            return false;
        }
        let requests_ok = user.goal.sections.iter().filter(|s| !s.requests.is_empty()).all(|s| {
            let Some(entity) = belief.offered.get(&s.domain).and_then(|id| self.entity(&s.domain, id)) else {
                return false;
            };
            entity.matches(&s.constraints)
                && s.requests.iter().all(|r| {
                    belief.delivered.get(&s.domain).and_then(|m| m.get(r)) == entity.slots.get(r)
                })
        });
        requests_ok && self.bookings_confirmed(user, belief)
    }

    pub fn goal(&self) -> Option<&UserGoal> {
        self.episode.as_ref().map(|e| &e.goal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub complete_rate: f64,
    pub success_rate: f64,
    /// Absent when no dialogue wanted a booking.
    pub book_rate: Option<f64>,
    pub n_dialogues: usize,
    pub n_bookable: usize,
    pub avg_turns: f64,
    pub avg_return: f64,
}

/// Complete, success and book rates over a set of finished dialogues.
pub fn compute_metrics(logs: &[EpisodeLog]) -> Result<Metrics> {
    if logs.is_empty() {
        return Err(Error::Argument("no episode logs".into()));
    }
    let n = logs.len();
    let completed = logs.iter().filter(|l| l.completed).count();
    let successful = logs.iter().filter(|l| l.successful).count();
    let bookable = logs.iter().filter(|l| l.bookable).count();
    let booked = logs.iter().filter(|l| l.bookable && l.booked).count();
    let turns: usize = logs.iter().map(|l| l.n_turns).sum();
    Ok(Metrics {
        complete_rate: completed as f64 / n as f64,
        success_rate: successful as f64 / n as f64,
        book_rate: (bookable > 0).then(|| booked as f64 / bookable as f64),
        n_dialogues: n,
        n_bookable: bookable,
        avg_turns: turns as f64 / n as f64,
        avg_return: logs.iter().map(|l| l.extrinsic_return).sum::<f64>() / n as f64,
    })
}
