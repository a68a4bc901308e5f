//! Agenda-based user simulator.
//!
//! The goal is unrolled into a stack of pending user acts: for every goal
//! domain, its constraints as `Inform`s, then its `Request`s, then `Book` if a
//! booking is wanted, with a single `Bye` at the bottom. A turn emits up to
//! `max_acts_per_turn` acts of the domain on top of the stack. `Inform`s are
//! popped when spoken; `Request` and `Book` stay until the system serves them.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActSet, DialogueAct, Intent, UserGoal};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserConfig {
    pub max_acts_per_turn: usize,
    /// Unhelpful system turns tolerated before the user gives up.
    pub patience: u32,
    /// Probability that the user ignores an answer to a pending request and
    /// asks again. Zero keeps the simulator fully deterministic.
    pub slip_probability: f64,
    pub slip_seed: u64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self { max_acts_per_turn: 3, patience: 6, slip_probability: 0.0, slip_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agenda {
    /// Top of the stack is the last element.
    pub stack: Vec<DialogueAct>,
    pub active_domain: Option<String>,
    pub patience: u32,
}

impl Agenda {
    fn position(&self, act: &DialogueAct) -> Option<usize> {
        self.stack.iter().position(|a| a == act)
    }

    fn remove(&mut self, act: &DialogueAct) -> bool {
        match self.position(act) {
            Some(i) => {
                self.stack.remove(i);
                true
            }
            None => false,
        }
    }

    /// Only the closing `Bye` (or nothing) left.
    pub fn is_exhausted(&self) -> bool {
        self.stack.iter().all(|a| a.intent == Intent::Bye)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    /// Current goal; constraint values change when the user relaxes them.
    pub goal: UserGoal,
    pub agenda: Agenda,
    pub satisfied_requests: BTreeMap<String, BTreeSet<String>>,
    pub booking_done: BTreeMap<String, bool>,
    /// Domains given up on after an unrecoverable `NoOffer`.
    pub abandoned: BTreeSet<String>,
    pub used_fallbacks: BTreeSet<(String, String)>,
    pub finished: bool,
    /// Finished by saying goodbye with nothing left on the agenda.
    pub completed: bool,
    pub turns: u64,
    config: UserConfig,
}

impl UserState {
    pub fn config(&self) -> &UserConfig {
        &self.config
    }

    fn pending_request(&self, domain: &str, slot: &str) -> bool {
        self.agenda.position(&DialogueAct::request(domain, slot)).is_some()
    }

    fn emit_turn(&mut self) -> Result<ActSet> {
        if self.agenda.is_exhausted() {
            self.agenda.stack.clear();
            self.finished = true;
            self.completed = true;
            return ActSet::from_acts([DialogueAct::bye()]);
        }
        let domain = self.agenda.stack.last().and_then(|a| a.domain.clone());
        let mut turn = ActSet::new();
        let mut spoken = Vec::new();
        for i in (0..self.agenda.stack.len()).rev() {
            let act = &self.agenda.stack[i];
            if turn.len() >= self.config.max_acts_per_turn || act.domain != domain || act.intent == Intent::Bye {
                break;
            }
            if turn.insert(act.clone())? && act.intent == Intent::Inform {
                spoken.push(i);
            }
        }
        // Indices were collected top-down, so removal keeps the rest valid.
        for i in spoken {
            self.agenda.stack.remove(i);
        }
        self.agenda.active_domain = domain;
        Ok(turn)
    }

    /// Swaps one constraint for its fallback, or drops the domain when no
    /// fallback is left.
    fn relax(&mut self, domain: &str) {
        let Some(section) = self.goal.sections.iter_mut().find(|s| s.domain == domain) else {
            return;
        };
        let candidate = section
            .fallbacks
            .iter()
            .find(|(slot, _)| !self.used_fallbacks.contains(&(domain.to_string(), (*slot).clone())))
            .map(|(s, v)| (s.clone(), v.clone()));
        match candidate {
            Some((slot, value)) => {
                section.constraints.insert(slot.clone(), value.clone());
                self.used_fallbacks.insert((domain.to_string(), slot.clone()));
                self.agenda.stack.retain(|a| !(a.intent == Intent::Inform && a.domain_str() == Some(domain)
                    && a.slot.as_deref() == Some(slot.as_str())));
                self.agenda.stack.push(DialogueAct::inform(domain, &slot, &value));
            }
            None => {
                self.agenda.stack.retain(|a| a.domain_str() != Some(domain));
                self.abandoned.insert(domain.to_string());
            }
        }
    }
}

/// Builds the agenda for `goal` and produces the opening user turn.
pub fn user_reset(goal: &UserGoal, config: &UserConfig) -> Result<(UserState, ActSet)> {
    if config.max_acts_per_turn == 0 {
        return Err(Error::Config("max_acts_per_turn must be positive".into()));
    }
    let mut stack = vec![DialogueAct::bye()];
    for section in goal.sections.iter().rev() {
        let d = section.domain.as_str();
        if section.wants_booking {
            stack.push(DialogueAct::book(d));
        }
        for r in section.requests.iter().rev() {
            stack.push(DialogueAct::request(d, r));
        }
        for (s, v) in section.constraints.iter().rev() {
            stack.push(DialogueAct::inform(d, s, v));
        }
    }
    let mut state = UserState {
        goal: goal.clone(),
        agenda: Agenda { stack, active_domain: None, patience: config.patience },
        satisfied_requests: goal.sections.iter().map(|s| (s.domain.clone(), BTreeSet::new())).collect(),
        booking_done: goal.sections.iter().filter(|s| s.wants_booking).map(|s| (s.domain.clone(), false)).collect(),
        abandoned: BTreeSet::new(),
        used_fallbacks: BTreeSet::new(),
        finished: false,
        completed: false,
        turns: 0,
        config: config.clone(),
    };
    let first = state.emit_turn()?;
    Ok((state, first))
}

/// Reacts to one system turn. Returns the user's reply and whether the user
/// has left the conversation.
pub fn user_respond(state: &mut UserState, system_acts: &ActSet) -> Result<(ActSet, bool)> {
    if state.finished {
        return Err(Error::State("user already finished".into()));
    }
    state.turns += 1;
    let mut helpful = false;
    for act in system_acts {
        let Some(domain) = act.domain.clone() else { continue };
        if state.abandoned.contains(&domain) || state.goal.section(&domain).is_none() {
            continue;
        }
        let active = state.agenda.active_domain.as_deref() == Some(domain.as_str());
        match act.intent {
            Intent::Request => {
                let slot = act.slot.clone().unwrap_or_default();
                let value = state.goal.section(&domain).and_then(|s| s.constraints.get(&slot)).cloned();
                if let Some(value) = value {
                    let inform = DialogueAct::inform(&domain, &slot, &value);
                    if !state.agenda.stack.contains(&inform) {
                        state.agenda.stack.push(inform);
                    }
                    helpful = true;
                }
            }
            Intent::Inform => {
                let slot = act.slot.clone().unwrap_or_default();
                if state.pending_request(&domain, &slot) {
                    let slipped = state.config.slip_probability > 0.0
                        && rng_for(state.config.slip_seed, "user-slip", state.turns)
                            .random_bool(state.config.slip_probability.min(1.0));
                    if !slipped {
                        state.agenda.remove(&DialogueAct::request(&domain, &slot));
                        state.satisfied_requests.entry(domain.clone()).or_default().insert(slot);
                    }
                    helpful = true;
                }
            }
            Intent::Offer => helpful |= active,
            Intent::BookConfirm => {
                if state.agenda.remove(&DialogueAct::book(&domain)) {
                    state.booking_done.insert(domain.clone(), true);
                    helpful = true;
                }
            }
            Intent::NoOffer | Intent::BookFail => {
                if active {
                    state.relax(&domain);
                    helpful = true;
                }
            }
            Intent::Book | Intent::Bye | Intent::Greet => {}
        }
    }

    if !helpful {
        state.agenda.patience = state.agenda.patience.saturating_sub(1);
        if state.agenda.patience == 0 {
            state.finished = true;
            return Ok((ActSet::from_acts([DialogueAct::bye()])?, true));
        }
    }
    let reply = state.emit_turn()?;
    Ok((reply, state.finished))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Constraints, GoalSection};

    fn goal(constraints: &[(&str, &str)], requests: &[&str], book: bool) -> UserGoal {
        UserGoal {
            sections: vec![GoalSection {
                domain: "hotel".into(),
                constraints: constraints.iter().map(|(s, v)| (s.to_string(), v.to_string())).collect(),
                fallbacks: Constraints::new(),
                requests: requests.iter().map(|s| s.to_string()).collect(),
                wants_booking: book,
            }],
        }
    }

    fn acts(a: &[DialogueAct]) -> ActSet {
        ActSet::from_acts(a.iter().cloned()).unwrap()
    }

    #[test]
    fn single_constraint_first_turn() {
        let (state, first) = user_reset(&goal(&[("area", "north")], &[], false), &UserConfig::default()).unwrap();
        assert_eq!(first, acts(&[DialogueAct::inform("hotel", "area", "north")]));
        assert_eq!(state.agenda.stack, vec![DialogueAct::bye()]);
    }

    #[test]
    fn request_only_first_turn() {
        let (_, first) = user_reset(&goal(&[], &["phone"], false), &UserConfig::default()).unwrap();
        assert_eq!(first, acts(&[DialogueAct::request("hotel", "phone")]));
    }

    #[test]
    fn first_turn_caps_at_three_acts_and_is_deterministic() {
        let g = goal(&[("area", "north"), ("kind", "lodge"), ("stars", "two"), ("parking", "free")], &["phone"], true);
        let (s1, t1) = user_reset(&g, &UserConfig::default()).unwrap();
        let (s2, t2) = user_reset(&g, &UserConfig::default()).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(s1, s2);
        assert_eq!(t1.len(), 3);
        assert!(t1.iter().all(|a| a.intent == Intent::Inform));
    }

    #[test]
    fn answering_a_pending_request_pops_it() {
        let g = goal(&[], &["phone", "address"], false);
        let (mut s, _) = user_reset(&g, &UserConfig::default()).unwrap();
        let (reply, finished) =
            user_respond(&mut s, &acts(&[DialogueAct::inform("hotel", "phone", "phone0001")])).unwrap();
        assert!(!finished);
        assert!(s.satisfied_requests["hotel"].contains("phone"));
        assert!(!s.agenda.stack.contains(&DialogueAct::request("hotel", "phone")));
        assert_eq!(reply, acts(&[DialogueAct::request("hotel", "address")]));
        assert_eq!(s.agenda.patience, 6);
    }

    #[test]
    fn system_request_for_constraint_is_answered_with_goal_value() {
        let g = goal(&[("area", "north")], &["phone"], false);
        let (mut s, _) = user_reset(&g, &UserConfig::default()).unwrap();
        let (reply, _) = user_respond(&mut s, &acts(&[DialogueAct::request("hotel", "area")])).unwrap();
        assert!(reply.contains(&DialogueAct::inform("hotel", "area", "north")));
        // Slots outside the goal are not answered and cost patience.
        let (reply, _) = user_respond(&mut s, &acts(&[DialogueAct::request("hotel", "stars")])).unwrap();
        assert!(reply.iter().all(|a| a.intent != Intent::Inform));
        assert_eq!(s.agenda.patience, 5);
    }

    #[test]
    fn patience_exhaustion_finishes_without_completion() {
        let cfg = UserConfig { patience: 1, ..UserConfig::default() };
        let (mut s, _) = user_reset(&goal(&[("area", "north")], &["phone"], false), &cfg).unwrap();
        let (reply, finished) = user_respond(&mut s, &ActSet::new()).unwrap();
        assert!(finished && s.finished && !s.completed);
        assert_eq!(reply, acts(&[DialogueAct::bye()]));
        assert!(matches!(user_respond(&mut s, &ActSet::new()), Err(Error::State(_))));
    }

    #[test]
    fn booking_then_bye_completes() {
        let g = goal(&[("area", "north")], &["phone"], true);
        let (mut s, _) = user_reset(&g, &UserConfig::default()).unwrap();
        let (t, _) = user_respond(&mut s, &acts(&[DialogueAct::offer("hotel", "hotel-01")])).unwrap();
        assert_eq!(t, acts(&[DialogueAct::request("hotel", "phone"), DialogueAct::book("hotel")]));
        let (t, done) = user_respond(
            &mut s,
            &acts(&[DialogueAct::inform("hotel", "phone", "p"), DialogueAct::book_confirm("hotel", "hotel-01")]),
        )
        .unwrap();
        assert!(done && s.completed);
        assert_eq!(t, acts(&[DialogueAct::bye()]));
        assert!(s.booking_done["hotel"]);
    }

    #[test]
    fn no_offer_uses_fallback_then_abandons() {
        let mut g = goal(&[("area", "north")], &["phone"], false);
        g.sections[0].fallbacks.insert("area".into(), "south".into());
        let (mut s, _) = user_reset(&g, &UserConfig::default()).unwrap();
        let (t, _) = user_respond(&mut s, &acts(&[DialogueAct::no_offer("hotel")])).unwrap();
        assert!(t.contains(&DialogueAct::inform("hotel", "area", "south")));
        assert_eq!(s.goal.sections[0].constraints["area"], "south");
        let (t, done) = user_respond(&mut s, &acts(&[DialogueAct::no_offer("hotel")])).unwrap();
        assert!(s.abandoned.contains("hotel"));
        assert!(done);
        assert_eq!(t, acts(&[DialogueAct::bye()]));
    }

    #[test]
    fn informs_always_carry_goal_values() {
        let g = goal(&[("area", "north"), ("stars", "two")], &["phone"], false);
        let (mut s, first) = user_reset(&g, &UserConfig::default()).unwrap();
        let mut turns = vec![first];
        for sys in [
            acts(&[DialogueAct::request("hotel", "area")]),
            acts(&[DialogueAct::request("hotel", "stars"), DialogueAct::request("hotel", "area")]),
            ActSet::new(),
        ] {
            turns.push(user_respond(&mut s, &sys).unwrap().0);
        }
        for a in turns.iter().flat_map(|t| t.iter()).filter(|a| a.intent == Intent::Inform) {
            let slot = a.slot.as_deref().unwrap();
            assert_eq!(a.value.as_deref(), Some(g.sections[0].constraints[slot].as_str()));
        }
    }

    #[test]
    fn slip_is_seeded() {
        let cfg = UserConfig { slip_probability: 0.5, slip_seed: 3, ..UserConfig::default() };
        let g = goal(&[], &["phone"], false);
        let run = || {
            let (mut s, _) = user_reset(&g, &cfg).unwrap();
            let mut log = Vec::new();
            for _ in 0..5 {
                if s.finished {
                    break;
                }
                log.push(user_respond(&mut s, &acts(&[DialogueAct::inform("hotel", "phone", "p")])).unwrap());
            }
            log
        };
        assert_eq!(run(), run());
    }
}
