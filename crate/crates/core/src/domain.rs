//! Synthetic multi-domain ontology, entity database, user goals and the
//! dialogue-act algebra shared by every other module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Upper bound on the number of acts carried by a single turn.
pub const MAX_ACTS: usize = 8;

/// Slot → value mapping used for goal constraints and database queries.
pub type Constraints = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub informable: Vec<SlotSpec>,
    pub requestable: Vec<String>,
    pub bookable: bool,
}

impl DomainSpec {
    pub fn informable_slot(&self, slot: &str) -> Option<&SlotSpec> {
        self.informable.iter().find(|s| s.name == slot)
    }

    pub fn is_requestable(&self, slot: &str) -> bool {
        self.requestable.iter().any(|s| s == slot)
    }
}

/// The set of domains, their informable slots (with finite value sets) and
/// requestable slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub domains: Vec<DomainSpec>,
}

impl Ontology {
    pub fn new(domains: Vec<DomainSpec>) -> Result<Self> {
        let ontology = Self { domains };
        ontology.validate()?;
        Ok(ontology)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("ontology has no domains".into()));
        }
        let mut seen = BTreeSet::new();
        for d in &self.domains {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Config(format!("duplicate domain `{}`", d.name)));
            }
            let mut slots = BTreeSet::new();
            for s in &d.informable {
                if !slots.insert(s.name.as_str()) {
                    return Err(Error::Config(format!("duplicate slot `{}.{}`", d.name, s.name)));
                }
                if s.values.is_empty() {
                    return Err(Error::Config(format!("slot `{}.{}` has no values", d.name, s.name)));
                }
            }
            for r in &d.requestable {
                if !slots.insert(r.as_str()) {
                    return Err(Error::Config(format!("duplicate slot `{}.{}`", d.name, r)));
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Result<&DomainSpec> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Domain(name.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ontology: Ontology = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ontology.validate()?;
        Ok(ontology)
    }

    /// Five domains shaped like the attraction/hotel/restaurant/train/taxi
    /// split of MultiWOZ.
    pub fn default_multi_domain() -> Self {
        fn slot(name: &str, values: &[&str]) -> SlotSpec {
            SlotSpec { name: name.into(), values: values.iter().map(|v| v.to_string()).collect() }
        }
        fn strings(v: &[&str]) -> Vec<String> {
            v.iter().map(|s| s.to_string()).collect()
        }
        let areas = ["north", "south", "east", "west", "centre"];
        let prices = ["cheap", "moderate", "expensive", "luxury"];
        let towns = ["cambridge", "london", "ely", "norwich", "stevenage", "peterborough"];
        let times = ["morning", "noon", "afternoon", "evening", "night", "midnight"];
        let places = ["station", "airport", "museum", "hospital", "college", "market"];
        let domains = vec![
            DomainSpec {
                name: "attraction".into(),
                informable: vec![
                    slot("area", &areas),
                    slot("type", &["museum", "park", "theatre", "college", "gallery", "church"]),
                    slot("entrance", &["free", "cheap", "moderate", "expensive"]),
                ],
                requestable: strings(&["phone", "address", "postcode", "openhours"]),
                bookable: false,
            },
            DomainSpec {
                name: "hotel".into(),
                informable: vec![
                    slot("area", &areas),
                    slot("pricerange", &prices),
                    slot("stars", &["one", "two", "three", "four", "five"]),
                    slot("kind", &["hotel", "guesthouse", "lodge", "hostel"]),
                    slot("parking", &["free", "paid", "street", "none"]),
                ],
                requestable: strings(&["phone", "address", "postcode"]),
                bookable: true,
            },
            DomainSpec {
                name: "restaurant".into(),
                informable: vec![
                    slot(
                        "food",
                        &["italian", "chinese", "indian", "british", "french", "thai", "mexican", "spanish"],
                    ),
                    slot("area", &areas),
                    slot("pricerange", &prices),
                ],
                requestable: strings(&["phone", "address", "postcode"]),
                bookable: true,
            },
            DomainSpec {
                name: "train".into(),
                informable: vec![
                    slot("departure", &towns),
                    slot("destination", &towns),
                    slot("day", &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]),
                    slot("leaveat", &times),
                ],
                requestable: strings(&["trainid", "duration", "price"]),
                bookable: true,
            },
            DomainSpec {
                name: "taxi".into(),
                informable: vec![slot("departure", &places), slot("destination", &places), slot("leaveat", &times)],
                requestable: strings(&["car", "phone"]),
                bookable: false,
            },
        ];
        Self { domains }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    /// Informable slot values (legal per the ontology) plus requestable
    /// information fields.
    pub slots: BTreeMap<String, String>,
}

impl Entity {
    pub fn matches(&self, constraints: &Constraints) -> bool {
        constraints.iter().all(|(s, v)| self.slots.get(s) == Some(v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainTable {
    pub informable: Vec<String>,
    pub bookable: bool,
    /// Sorted by entity id.
    pub entities: Vec<Entity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDatabase {
    pub tables: BTreeMap<String, DomainTable>,
}

/// Default number of entities per domain.
pub const DEFAULT_ENTITIES_PER_DOMAIN: usize = 20;

impl EntityDatabase {
    /// Generates `per_domain` entities per domain with informable values drawn
    /// uniformly from the ontology.
    pub fn generate(ontology: &Ontology, seed: u64, per_domain: usize) -> Result<Self> {
        ontology.validate()?;
        if per_domain == 0 {
            return Err(Error::Config("database needs at least one entity per domain".into()));
        }
        let mut tables = BTreeMap::new();
        for (di, d) in ontology.domains.iter().enumerate() {
            let mut rng = rng_for(seed, "database", di as u64);
            let width = per_domain.to_string().len().max(2);
            let entities = (0..per_domain)
                .map(|i| {
                    let mut slots = BTreeMap::new();
                    for s in &d.informable {
                        let v = s.values.choose(&mut rng).expect("non-empty value set");
                        slots.insert(s.name.clone(), v.clone());
                    }
                    for r in &d.requestable {
                        slots.insert(r.clone(), format!("{}{:04}", r, rng.random_range(0..10_000)));
                    }
                    Entity { id: format!("{}-{:0width$}", d.name, i, width = width), slots }
                })
                .collect();
            tables.insert(
                d.name.clone(),
                DomainTable {
                    informable: d.informable.iter().map(|s| s.name.clone()).collect(),
                    bookable: d.bookable,
                    entities,
                },
            );
        }
        Ok(Self { tables })
    }

    pub fn table(&self, domain: &str) -> Result<&DomainTable> {
        self.tables.get(domain).ok_or_else(|| Error::Domain(domain.to_string()))
    }

    pub fn entity(&self, domain: &str, id: &str) -> Option<&Entity> {
        self.tables.get(domain)?.entities.iter().find(|e| e.id == id)
    }

    /// Checks every entity against the ontology.
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        for d in &ontology.domains {
            let table = self.table(&d.name)?;
            if table.entities.is_empty() {
                return Err(Error::Config(format!("domain `{}` has no entities", d.name)));
            }
            for e in &table.entities {
                for s in &d.informable {
                    match e.slots.get(&s.name) {
                        Some(v) if s.values.contains(v) => {}
                        _ => {
                            return Err(Error::Config(format!(
                                "entity `{}` has an illegal or missing `{}`",
                                e.id, s.name
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Entities of `domain` matching every constraint, ordered by id.
pub fn query_entities<'a>(
    database: &'a EntityDatabase,
    domain: &str,
    constraints: &Constraints,
) -> Result<Vec<&'a Entity>> {
    let table = database.table(domain)?;
    if let Some(bad) = constraints.keys().find(|s| !table.informable.contains(s)) {
        return Err(Error::Constraint(format!("`{domain}` has no informable slot `{bad}`")));
    }
    Ok(table.entities.iter().filter(|e| e.matches(constraints)).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BookingOutcome {
    Confirmed { entity: String },
    Failed,
}

pub fn check_booking(database: &EntityDatabase, domain: &str, constraints: &Constraints) -> Result<BookingOutcome> {
    if !database.table(domain)?.bookable {
        return Err(Error::Domain(format!("`{domain}` is not bookable")));
    }
    Ok(match query_entities(database, domain, constraints)?.first() {
        Some(e) => BookingOutcome::Confirmed { entity: e.id.clone() },
        None => BookingOutcome::Failed,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSection {
    pub domain: String,
    pub constraints: Constraints,
    /// One alternative value per constraint slot, used when the system
    /// reports that nothing matches.
    #[serde(default)]
    pub fallbacks: Constraints,
    pub requests: BTreeSet<String>,
    pub wants_booking: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub sections: Vec<GoalSection>,
}

impl UserGoal {
    pub fn section(&self, domain: &str) -> Option<&GoalSection> {
        self.sections.iter().find(|s| s.domain == domain)
    }

    pub fn wants_booking(&self) -> bool {
        self.sections.iter().any(|s| s.wants_booking)
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        if self.sections.is_empty() || self.sections.len() > 3 {
            return Err(Error::Config(format!("goal covers {} domains", self.sections.len())));
        }
        for s in &self.sections {
            let d = ontology.domain(&s.domain)?;
            for (slot, value) in s.constraints.iter().chain(&s.fallbacks) {
                let spec = d
                    .informable_slot(slot)
                    .ok_or_else(|| Error::Constraint(format!("`{}` has no slot `{slot}`", s.domain)))?;
                if !spec.values.contains(value) {
                    return Err(Error::Constraint(format!("`{value}` is not a legal `{}.{slot}`", s.domain)));
                }
            }
            if let Some(r) = s.requests.iter().find(|r| !d.is_requestable(r)) {
                return Err(Error::Constraint(format!("`{}` has no requestable slot `{r}`", s.domain)));
            }
            if s.wants_booking && !d.bookable {
                return Err(Error::Constraint(format!("`{}` is not bookable", s.domain)));
            }
        }
        Ok(())
    }
}

/// Probability of a goal spanning 1, 2 and 3 domains.
pub const DOMAIN_COUNT_WEIGHTS: [f64; 3] = [0.35, 0.45, 0.20];

/// Samples a satisfiable goal. Constraints are copied from a real entity so
/// at least one entity per chosen domain matches.
pub fn sample_goal(ontology: &Ontology, database: &EntityDatabase, seed: u64) -> Result<UserGoal> {
    ontology.validate()?;
    let mut rng = rng_for(seed, "goal", 0);

    let u: f64 = rng.random();
    let mut wanted = 3;
    let mut acc = 0.0;
    for (i, w) in DOMAIN_COUNT_WEIGHTS.iter().enumerate() {
        acc += w;
        if u < acc {
            wanted = i + 1;
            break;
        }
    }
    let n_domains = wanted.min(ontology.domains.len());
    let mut order: Vec<usize> = (0..ontology.domains.len()).collect();
    order.shuffle(&mut rng);

    let mut sections = Vec::with_capacity(n_domains);
    for &di in order.iter().take(n_domains) {
        let d = &ontology.domains[di];
        let table = database.table(&d.name)?;
        let entity = table
            .entities
            .choose(&mut rng)
            .ok_or_else(|| Error::Config(format!("domain `{}` has no entities", d.name)))?;

        let mut slots: Vec<&SlotSpec> = d.informable.iter().collect();
        slots.shuffle(&mut rng);
        let n_constraints = if slots.is_empty() { 0 } else { rng.random_range(1..=slots.len().min(3)) };
        let constraints: Constraints = slots
            .iter()
            .take(n_constraints)
            .map(|s| (s.name.clone(), entity.slots[&s.name].clone()))
            .collect();

        let mut fallbacks = Constraints::new();
        for slot in constraints.keys() {
            let mut others = constraints.clone();
            let current = others.remove(slot).expect("slot present");
            let alternatives: BTreeSet<&String> = table
                .entities
                .iter()
                .filter(|e| e.matches(&others))
                .map(|e| &e.slots[slot])
                .filter(|v| **v != current)
                .collect();
            let alternatives: Vec<&String> = alternatives.into_iter().collect();
            if let Some(v) = alternatives.choose(&mut rng) {
                fallbacks.insert(slot.clone(), (*v).clone());
            }
        }

        let mut requestable = d.requestable.clone();
        requestable.shuffle(&mut rng);
        let n_requests = if requestable.is_empty() { 0 } else { rng.random_range(1..=requestable.len().min(2)) };
        let requests = requestable.into_iter().take(n_requests).collect();
        let wants_booking = d.bookable && rng.random_bool(0.5);

        sections.push(GoalSection { domain: d.name.clone(), constraints, fallbacks, requests, wants_booking });
    }
    Ok(UserGoal { sections })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intent {
    Inform,
    Request,
    Book,
    Offer,
    NoOffer,
    BookConfirm,
    BookFail,
    Bye,
    Greet,
}

impl Intent {
    pub const ALL: [Intent; 9] = [
        Intent::Inform,
        Intent::Request,
        Intent::Book,
        Intent::Offer,
        Intent::NoOffer,
        Intent::BookConfirm,
        Intent::BookFail,
        Intent::Bye,
        Intent::Greet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intent::Inform => "inform",
            Intent::Request => "request",
            Intent::Book => "book",
            Intent::Offer => "offer",
            Intent::NoOffer => "nooffer",
            Intent::BookConfirm => "bookconfirm",
            Intent::BookFail => "bookfail",
            Intent::Bye => "bye",
            Intent::Greet => "greet",
        }
    }
}

/// An (intent, domain, slot, value) tuple. Field order defines the canonical
/// act order: domain, then intent, then slot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    pub domain: Option<String>,
    pub intent: Intent,
    pub slot: Option<String>,
    pub value: Option<String>,
}

impl DialogueAct {
    fn new(intent: Intent, domain: Option<&str>, slot: Option<&str>, value: Option<&str>) -> Self {
        Self {
            domain: domain.map(str::to_string),
            intent,
            slot: slot.map(str::to_string),
            value: value.map(str::to_string),
        }
    }

    pub fn inform(domain: &str, slot: &str, value: &str) -> Self {
        Self::new(Intent::Inform, Some(domain), Some(slot), Some(value))
    }
    pub fn request(domain: &str, slot: &str) -> Self {
        Self::new(Intent::Request, Some(domain), Some(slot), None)
    }
    pub fn book(domain: &str) -> Self {
        Self::new(Intent::Book, Some(domain), None, None)
    }
    pub fn offer(domain: &str, entity: &str) -> Self {
        Self::new(Intent::Offer, Some(domain), None, Some(entity))
    }
    pub fn no_offer(domain: &str) -> Self {
        Self::new(Intent::NoOffer, Some(domain), None, None)
    }
    pub fn book_confirm(domain: &str, entity: &str) -> Self {
        Self::new(Intent::BookConfirm, Some(domain), None, Some(entity))
    }
    pub fn book_fail(domain: &str) -> Self {
        Self::new(Intent::BookFail, Some(domain), None, None)
    }
    pub fn bye() -> Self {
        Self::new(Intent::Bye, None, None, None)
    }
    pub fn greet() -> Self {
        Self::new(Intent::Greet, None, None, None)
    }

    /// Catalog form: same act with the value stripped.
    pub fn delexicalized(&self) -> Self {
        Self { value: None, ..self.clone() }
    }

    pub fn domain_str(&self) -> Option<&str> {
        self.domain.as_deref()
    }

    pub fn slot_str(&self) -> Option<&str> {
        self.slot.as_deref()
    }

    /// Structural invariants of a surface (lexicalized) act.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.intent {
            Intent::Inform => self.domain.is_some() && self.slot.is_some() && self.value.is_some(),
            Intent::Request => self.domain.is_some() && self.slot.is_some() && self.value.is_none(),
            Intent::Bye | Intent::Greet => self.domain.is_none() && self.slot.is_none() && self.value.is_none(),
            Intent::Book | Intent::NoOffer | Intent::BookFail => {
                self.domain.is_some() && self.slot.is_none() && self.value.is_none()
            }
            Intent::Offer | Intent::BookConfirm => self.domain.is_some() && self.slot.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Act(self.to_string()))
        }
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.intent.name())?;
        let parts: Vec<&str> = [self.domain_str(), self.slot_str(), self.value.as_deref()]
            .into_iter()
            .flatten()
            .collect();
        write!(f, "{})", parts.join(", "))
    }
}

/// Set of acts carried by one turn, iterated in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<DialogueAct>", into = "Vec<DialogueAct>")]
pub struct ActSet(BTreeSet<DialogueAct>);

impl ActSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an act; returns whether it was new. Fails past [`MAX_ACTS`].
    pub fn insert(&mut self, act: DialogueAct) -> Result<bool> {
        if self.0.contains(&act) {
            return Ok(false);
        }
        if self.0.len() >= MAX_ACTS {
            return Err(Error::Act(format!("act set already holds {MAX_ACTS} acts")));
        }
        Ok(self.0.insert(act))
    }

    pub fn from_acts<I: IntoIterator<Item = DialogueAct>>(acts: I) -> Result<Self> {
        let mut set = Self::new();
        for a in acts {
            set.insert(a)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, act: &DialogueAct) -> bool {
        self.0.contains(act)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DialogueAct> {
        self.0.iter()
    }

    pub fn delexicalized(&self) -> ActSet {
        ActSet(self.0.iter().map(DialogueAct::delexicalized).collect())
    }
}

impl TryFrom<Vec<DialogueAct>> for ActSet {
    type Error = Error;
    fn try_from(v: Vec<DialogueAct>) -> Result<Self> {
        Self::from_acts(v)
    }
}

impl From<ActSet> for Vec<DialogueAct> {
    fn from(s: ActSet) -> Self {
        s.0.into_iter().collect()
    }
}

impl<'a> IntoIterator for &'a ActSet {
    type Item = &'a DialogueAct;
    type IntoIter = std::collections::btree_set::Iter<'a, DialogueAct>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for ActSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}
