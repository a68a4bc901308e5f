//! Rule-based dialogue state tracker.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{ActSet, Constraints, Intent};
use crate::error::Result;
use crate::nlg::Speaker;

/// Running summary of the dialogue, the MDP state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    /// Slot values the user has informed, per domain.
    pub constraints: BTreeMap<String, Constraints>,
    /// Requests the user has made and the system has not yet answered.
    pub requested: BTreeMap<String, BTreeSet<String>>,
    /// Answers given to user requests: slot → value.
    pub delivered: BTreeMap<String, BTreeMap<String, String>>,
    pub booking_requested: BTreeSet<String>,
    /// Confirmed booking per domain: entity id.
    pub booked: BTreeMap<String, String>,
    /// Entity currently offered per domain.
    pub offered: BTreeMap<String, String>,
    /// Number of database entities matching `constraints`, per domain.
    pub db_matches: BTreeMap<String, usize>,
    pub last_system: ActSet,
    pub last_user: ActSet,
    pub turn_index: usize,
    pub terminal: bool,
}

/// Applies one turn of acts to the belief state.
pub fn dst_update(state: &BeliefState, acts: &ActSet, speaker: Speaker) -> Result<BeliefState> {
    for act in acts {
        act.validate()?;
    }
    let mut next = state.clone();
    for act in acts {
        let Some(domain) = act.domain.clone() else { continue };
        let slot = act.slot.clone();
        match (speaker, act.intent) {
            (Speaker::User, Intent::Inform) => {
                next.constraints
                    .entry(domain)
                    .or_default()
                    .insert(slot.expect("validated"), act.value.clone().expect("validated"));
            }
            (Speaker::User, Intent::Request) => {
                next.requested.entry(domain).or_default().insert(slot.expect("validated"));
            }
            (Speaker::User, Intent::Book) => {
                next.booking_requested.insert(domain);
            }
            (Speaker::System, Intent::Inform) => {
                let slot = slot.expect("validated");
                if let Some(open) = next.requested.get_mut(&domain) {
                    if open.remove(&slot) {
                        next.delivered
                            .entry(domain)
                            .or_default()
                            .insert(slot, act.value.clone().expect("validated"));
                    }
                }
            }
            (Speaker::System, Intent::Offer) => {
                if let Some(entity) = &act.value {
                    next.offered.insert(domain, entity.clone());
                }
            }
            (Speaker::System, Intent::NoOffer) => {
                next.offered.remove(&domain);
            }
            (Speaker::System, Intent::BookConfirm) => {
                if let Some(entity) = &act.value {
                    next.booking_requested.remove(&domain);
                    next.booked.insert(domain, entity.clone());
                }
            }
            _ => {}
        }
    }
    next.requested.retain(|_, open| !open.is_empty());
    match speaker {
        Speaker::User => next.last_user = acts.clone(),
        Speaker::System => next.last_system = acts.clone(),
    }
    Ok(next)
}
