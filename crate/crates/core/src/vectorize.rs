//! Fixed-length encodings of belief states and system actions.
//!
//! The action catalog is delexicalized: entries name an intent, a domain and
//! a slot but never a value. Values are bound by the environment from the
//! database when an action is executed.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array1;
use serde::Serialize;

use crate::domain::{ActSet, DialogueAct, Intent, Ontology};
use crate::dst::BeliefState;
use crate::error::{Error, Result};

/// Belief-state vector, components in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Array1<f64>);

/// Binary action vector over the act catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionVector(pub Array1<f64>);

/// Database result-count buckets: none, one, a few (2–5), many.
const DB_BUCKETS: usize = 4;

#[derive(Clone, Debug)]
struct InformableBlock {
    slot: String,
    offset: usize,
    values: Vec<String>,
}

#[derive(Clone, Debug)]
struct DomainBlock {
    name: String,
    informable: Vec<InformableBlock>,
    requestable: Vec<String>,
    outstanding: usize,
    delivered: usize,
    booking: Option<usize>,
    offered: usize,
    db: usize,
}

/// Index layout of state and action vectors; a pure function of the
/// ontology and the turn limit.
#[derive(Clone, Debug)]
pub struct VectorLayout {
    catalog: Vec<DialogueAct>,
    catalog_index: HashMap<DialogueAct, usize>,
    domains: Vec<DomainBlock>,
    last_user: usize,
    last_system: usize,
    turn: usize,
    state_dim: usize,
    max_turns: usize,
    max_acts: usize,
}

#[derive(Serialize)]
struct LayoutDump<'a> {
    state_dim: usize,
    action_dim: usize,
    max_acts_per_turn: usize,
    state: &'a [String],
    actions: Vec<String>,
}

/// Every delexicalized act the policy can emit or the user can produce.
pub fn build_catalog(ontology: &Ontology) -> Vec<DialogueAct> {
    let mut catalog = BTreeSet::new();
    catalog.insert(DialogueAct::bye());
    catalog.insert(DialogueAct::greet());
    for d in &ontology.domains {
        let n = d.name.as_str();
        let slots = d.informable.iter().map(|s| s.name.as_str()).chain(d.requestable.iter().map(String::as_str));
        for s in slots {
            catalog.insert(DialogueAct::inform(n, s, "").delexicalized());
            catalog.insert(DialogueAct::request(n, s));
        }
        catalog.insert(DialogueAct::offer(n, "").delexicalized());
        catalog.insert(DialogueAct::no_offer(n));
        if d.bookable {
            catalog.insert(DialogueAct::book(n));
            catalog.insert(DialogueAct::book_confirm(n, "").delexicalized());
            catalog.insert(DialogueAct::book_fail(n));
        }
    }
    catalog.into_iter().collect()
}

impl VectorLayout {
    pub fn new(ontology: &Ontology, max_turns: usize, max_acts: usize) -> Result<Self> {
        ontology.validate()?;
        if max_turns == 0 || max_acts == 0 {
            return Err(Error::Config("max_turns and max_acts must be positive".into()));
        }
        let catalog = build_catalog(ontology);
        let catalog_index = catalog.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let mut domains = Vec::new();
        for d in &ontology.domains {
            let informable = d
                .informable
                .iter()
                .map(|s| InformableBlock { slot: s.name.clone(), offset: take(s.values.len()), values: s.values.clone() })
                .collect();
            let outstanding = take(d.requestable.len());
            let delivered = take(d.requestable.len());
            let booking = d.bookable.then(|| take(2));
            let offered = take(1);
            let db = take(DB_BUCKETS);
            domains.push(DomainBlock {
                name: d.name.clone(),
                informable,
                requestable: d.requestable.clone(),
                outstanding,
                delivered,
                booking,
                offered,
                db,
            });
        }
        let last_user = take(catalog.len());
        let last_system = take(catalog.len());
        let turn = take(1);
        Ok(Self {
            catalog,
            catalog_index,
            domains,
            last_user,
            last_system,
            turn,
            state_dim: cursor,
            max_turns,
            max_acts,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.catalog.len()
    }

    pub fn max_acts(&self) -> usize {
        self.max_acts
    }

    pub fn catalog(&self) -> &[DialogueAct] {
        &self.catalog
    }

    pub fn catalog_position(&self, act: &DialogueAct) -> Option<usize> {
        self.catalog_index.get(&act.delexicalized()).copied()
    }

    /// Human-readable name of every state component, in index order.
    pub fn state_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.state_dim];
        for d in &self.domains {
            for b in &d.informable {
                for (k, v) in b.values.iter().enumerate() {
                    names[b.offset + k] = format!("{}.{}={}", d.name, b.slot, v);
                }
            }
            for (k, r) in d.requestable.iter().enumerate() {
                names[d.outstanding + k] = format!("{}.requested.{}", d.name, r);
                names[d.delivered + k] = format!("{}.delivered.{}", d.name, r);
            }
            if let Some(b) = d.booking {
                names[b] = format!("{}.booking_requested", d.name);
                names[b + 1] = format!("{}.booked", d.name);
            }
            names[d.offered] = format!("{}.offered", d.name);
            for (k, label) in ["none", "one", "few", "many"].iter().enumerate() {
                names[d.db + k] = format!("{}.db.{}", d.name, label);
            }
        }
        for (i, a) in self.catalog.iter().enumerate() {
            names[self.last_user + i] = format!("user.{a}");
            names[self.last_system + i] = format!("system.{a}");
        }
        names[self.turn] = "turn".into();
        names
    }

    /// JSON dump of the layout; byte-identical for a fixed ontology.
    pub fn to_json(&self) -> String {
        let names = self.state_names();
        let dump = LayoutDump {
            state_dim: self.state_dim,
            action_dim: self.action_dim(),
            max_acts_per_turn: self.max_acts,
            state: &names,
            actions: self.catalog.iter().map(ToString::to_string).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("layout serializes")
    }

    fn mark_acts(&self, v: &mut Array1<f64>, offset: usize, acts: &ActSet) -> Result<()> {
        for a in acts {
            let i = self.catalog_position(a).ok_or_else(|| Error::Encoding(format!("act {a} not in catalog")))?;
            v[offset + i] = 1.0;
        }
        Ok(())
    }

    pub fn encode_state(&self, belief: &BeliefState) -> Result<StateVector> {
        let mut v = Array1::zeros(self.state_dim);
        for domain in belief
            .constraints
            .keys()
            .chain(belief.requested.keys())
            .chain(belief.delivered.keys())
            .chain(belief.offered.keys())
            .chain(belief.booked.keys())
            .chain(belief.booking_requested.iter())
            .chain(belief.db_matches.keys())
        {
            if !self.domains.iter().any(|d| &d.name == domain) {
                return Err(Error::Encoding(format!("unknown domain `{domain}`")));
            }
        }
        for d in &self.domains {
            if let Some(constraints) = belief.constraints.get(&d.name) {
                for (slot, value) in constraints {
                    let b = d
                        .informable
                        .iter()
                        .find(|b| &b.slot == slot)
                        .ok_or_else(|| Error::Encoding(format!("unknown slot `{}.{slot}`", d.name)))?;
                    let k = b
                        .values
                        .iter()
                        .position(|x| x == value)
                        .ok_or_else(|| Error::Encoding(format!("unknown value `{}.{slot}={value}`", d.name)))?;
                    v[b.offset + k] = 1.0;
                }
            }
            let flag = |set: Option<&BTreeSet<String>>, offset: usize, v: &mut Array1<f64>| -> Result<()> {
                for slot in set.into_iter().flatten() {
                    let k = d
                        .requestable
                        .iter()
                        .position(|r| r == slot)
                        .ok_or_else(|| Error::Encoding(format!("unknown requestable `{}.{slot}`", d.name)))?;
                    v[offset + k] = 1.0;
                }
                Ok(())
            };
            flag(belief.requested.get(&d.name), d.outstanding, &mut v)?;
            let delivered: Option<BTreeSet<String>> =
                belief.delivered.get(&d.name).map(|m| m.keys().cloned().collect());
            flag(delivered.as_ref(), d.delivered, &mut v)?;
            let wants = belief.booking_requested.contains(&d.name);
            let booked = belief.booked.contains_key(&d.name);
            match d.booking {
                Some(b) => {
                    v[b] = f64::from(u8::from(wants));
                    v[b + 1] = f64::from(u8::from(booked));
                }
                None if wants || booked => {
                    return Err(Error::Encoding(format!("`{}` is not bookable", d.name)));
                }
                None => {}
            }
            v[d.offered] = f64::from(u8::from(belief.offered.contains_key(&d.name)));
            if let Some(&n) = belief.db_matches.get(&d.name) {
                let bucket = match n {
                    0 => 0,
                    1 => 1,
                    2..=5 => 2,
                    _ => 3,
                };
                v[d.db + bucket] = 1.0;
            }
        }
        self.mark_acts(&mut v, self.last_user, &belief.last_user)?;
        self.mark_acts(&mut v, self.last_system, &belief.last_system)?;
        v[self.turn] = (belief.turn_index as f64 / self.max_turns as f64).min(1.0);
        Ok(StateVector(v))
    }

    pub fn encode_action(&self, acts: &ActSet) -> Result<ActionVector> {
        let mut v = Array1::zeros(self.action_dim());
        for a in acts {
            let i = self.catalog_position(a).ok_or_else(|| Error::Catalog(a.to_string()))?;
            v[i] = 1.0;
        }
        Ok(ActionVector(v))
    }

    /// Catalog acts whose bit is set, keeping at most `max_acts` of the
    /// highest indices.
    pub fn decode_action(&self, action: &ActionVector) -> Result<ActSet> {
        if action.0.len() != self.action_dim() {
            return Err(Error::Shape { expected: self.action_dim(), actual: action.0.len() });
        }
        let mut set = ActSet::new();
        for i in (0..self.action_dim()).rev().filter(|&i| action.0[i] > 0.5).take(self.max_acts) {
            set.insert(self.catalog[i].clone())?;
        }
        Ok(set)
    }

    /// Action vector after decode clamping.
    pub fn clamp_action(&self, action: &ActionVector) -> Result<ActionVector> {
        self.encode_action(&self.decode_action(action)?)
    }

    pub fn is_requestable(&self, domain: &str, slot: &str) -> bool {
        self.domains.iter().any(|d| d.name == domain && d.requestable.iter().any(|r| r == slot))
    }

    pub fn intents_for(&self, domain: &str) -> impl Iterator<Item = Intent> + '_ {
        let domain = domain.to_string();
        self.catalog.iter().filter(move |a| a.domain.as_deref() == Some(domain.as_str())).map(|a| a.intent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> VectorLayout {
        VectorLayout::new(&Ontology::default_multi_domain(), 40, 3).unwrap()
    }

    #[test]
    fn dims_are_gap_free_and_stable() {
        let l = layout();
        let names = l.state_names();
        assert_eq!(names.len(), l.state_dim());
        assert!(names.iter().all(|n| !n.is_empty()));
        let unique: BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(l.to_json(), layout().to_json());
        // Catalog: per domain 2 acts per slot + offer/nooffer (+3 booking), plus bye/greet.
        let o = Ontology::default_multi_domain();
        let expected: usize = 2 + o
            .domains
            .iter()
            .map(|d| 2 * (d.informable.len() + d.requestable.len()) + 2 + if d.bookable { 3 } else { 0 })
            .sum::<usize>();
        assert_eq!(l.action_dim(), expected);
    }

    #[test]
    fn empty_state_is_all_zero() {
        let l = layout();
        let v = l.encode_state(&BeliefState::default()).unwrap();
        assert!(v.0.iter().all(|x| *x == 0.0));
        let b = BeliefState { turn_index: 10, ..Default::default() };
        let v = l.encode_state(&b).unwrap();
        assert_eq!(v.0.iter().filter(|x| **x != 0.0).count(), 1);
        assert_eq!(v.0[l.turn], 0.25);
    }

    #[test]
    fn one_slot_difference_touches_only_its_block() {
        let l = layout();
        let mut a = BeliefState::default();
        a.constraints.entry("hotel".into()).or_default().insert("stars".into(), "two".into());
        let mut b = a.clone();
        b.constraints.get_mut("hotel").unwrap().insert("area".into(), "east".into());
        let va = l.encode_state(&a).unwrap().0;
        let vb = l.encode_state(&b).unwrap().0;
        let diff: Vec<usize> = (0..l.state_dim()).filter(|&i| va[i] != vb[i]).collect();
        let names = l.state_names();
        assert_eq!(diff.len(), 1);
        assert_eq!(names[diff[0]], "hotel.area=east");
    }

    #[test]
    fn unknown_slot_is_an_encoding_error() {
        let l = layout();
        let mut b = BeliefState::default();
        b.constraints.entry("hotel".into()).or_default().insert("colour".into(), "red".into());
        assert!(matches!(l.encode_state(&b), Err(Error::Encoding(_))));
        let mut b = BeliefState::default();
        b.booked.insert("taxi".into(), "taxi-01".into());
        assert!(matches!(l.encode_state(&b), Err(Error::Encoding(_))));
    }

    #[test]
    fn empty_and_singleton_round_trip() {
        let l = layout();
        let zero = l.encode_action(&ActSet::new()).unwrap();
        assert!(zero.0.iter().all(|x| *x == 0.0));
        assert!(l.decode_action(&zero).unwrap().is_empty());
        let bye = ActSet::from_acts([DialogueAct::bye()]).unwrap();
        let v = l.encode_action(&bye).unwrap();
        assert_eq!(v.0.sum(), 1.0);
        assert_eq!(l.decode_action(&v).unwrap(), bye);
    }

    #[test]
    fn every_singleton_round_trips() {
        let l = layout();
        for act in l.catalog().to_vec() {
            let set = ActSet::from_acts([act]).unwrap();
            assert_eq!(l.decode_action(&l.encode_action(&set).unwrap()).unwrap(), set);
        }
    }

    #[test]
    fn decode_keeps_highest_indices() {
        let l = layout();
        let mut v = Array1::zeros(l.action_dim());
        for i in [0, 3, 7, 20, 40] {
            v[i] = 1.0;
        }
        let set = l.decode_action(&ActionVector(v)).unwrap();
        let idx: Vec<usize> = set.iter().map(|a| l.catalog_position(a).unwrap()).collect();
        let mut idx = idx;
        idx.sort();
        assert_eq!(idx, [7, 20, 40]);
    }

    #[test]
    fn off_catalog_and_shape_errors() {
        let l = layout();
        let off = ActSet::from_acts([DialogueAct::book("taxi")]).unwrap();
        assert!(matches!(l.encode_action(&off), Err(Error::Catalog(_))));
        assert!(matches!(l.decode_action(&ActionVector(Array1::zeros(3))), Err(Error::Shape { .. })));
    }

    #[test]
    fn lexical_values_are_ignored_by_encoding() {
        let l = layout();
        let lex = ActSet::from_acts([DialogueAct::inform("hotel", "phone", "123")]).unwrap();
        let v = l.encode_action(&lex).unwrap();
        assert_eq!(l.decode_action(&v).unwrap(), lex.delexicalized());
    }
}
