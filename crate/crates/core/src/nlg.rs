//! Template realization of dialogue acts and the hashed utterance encoder
//! used by the utterance-mode intrinsic reward models.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActSet, DialogueAct, Intent};
use crate::error::{Error, Result};
use crate::rng::{fnv1a, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub speaker: Speaker,
}

/// One template. `domain: None` matches any domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub intent: Intent,
    #[serde(default)]
    pub domain: Option<String>,
    pub has_slot: bool,
    pub has_value: bool,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub user: Vec<Template>,
    pub system: Vec<Template>,
}

impl TemplateSet {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn table(&self, speaker: Speaker) -> &[Template] {
        match speaker {
            Speaker::User => &self.user,
            Speaker::System => &self.system,
        }
    }

    /// Domain-specific templates win over wildcard ones.
    pub fn lookup(&self, act: &DialogueAct, speaker: Speaker) -> Option<&Template> {
        let shape = |t: &&Template| {
            t.intent == act.intent && t.has_slot == act.slot.is_some() && t.has_value == act.value.is_some()
        };
        let table = self.table(speaker);
        table
            .iter()
            .filter(shape)
            .find(|t| t.domain.is_some() && t.domain == act.domain)
            .or_else(|| table.iter().filter(shape).find(|t| t.domain.is_none()))
    }

    /// Fails on the first act without a template for either speaker.
    pub fn check_coverage<'a>(&self, acts: impl IntoIterator<Item = &'a DialogueAct>) -> Result<()> {
        for act in acts {
            for speaker in [Speaker::User, Speaker::System] {
                if self.lookup(act, speaker).is_none() {
                    return Err(Error::Template(format!("{act} ({speaker:?})")));
                }
            }
        }
        Ok(())
    }

    pub fn realize_act(&self, act: &DialogueAct, speaker: Speaker) -> Result<String> {
        let t = self
            .lookup(act, speaker)
            .ok_or_else(|| Error::Template(format!("{act} ({speaker:?})")))?;
        Ok(t.text
            .replace("{domain}", act.domain_str().unwrap_or(""))
            .replace("{slot}", act.slot_str().unwrap_or(""))
            .replace("{value}", act.value.as_deref().unwrap_or("")))
    }

    /// Realizes every act in canonical order and joins the pieces.
    pub fn realize(&self, acts: &ActSet, speaker: Speaker) -> Result<Utterance> {
        if acts.is_empty() {
            return Err(Error::Argument("cannot realize an empty act set".into()));
        }
        let parts = acts.iter().map(|a| self.realize_act(a, speaker)).collect::<Result<Vec<_>>>()?;
        Ok(Utterance { text: parts.join(" "), speaker })
    }

    /// Like [`realize`](Self::realize) but maps an empty set to empty text.
    pub fn realize_or_empty(&self, acts: &ActSet, speaker: Speaker) -> Result<String> {
        if acts.is_empty() {
            Ok(String::new())
        } else {
            Ok(self.realize(acts, speaker)?.text)
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        fn t(intent: Intent, domain: Option<&str>, has_slot: bool, has_value: bool, text: &str) -> Template {
            Template { intent, domain: domain.map(str::to_string), has_slot, has_value, text: text.into() }
        }
        use Intent::*;
        let user = vec![
            t(Inform, None, true, true, "i am looking for {value} {slot} ."),
            t(Inform, Some("train"), true, true, "i need a train with {slot} {value} ."),
            t(Inform, Some("taxi"), true, true, "the taxi {slot} should be {value} ."),
            t(Inform, None, true, false, "i have a preference for the {slot} ."),
            t(Request, None, true, false, "what is the {slot} ?"),
            t(Book, None, false, false, "please book the {domain} ."),
            t(Offer, None, false, true, "is {value} available ?"),
            t(Offer, None, false, false, "do you have a {domain} ?"),
            t(NoOffer, None, false, false, "i could not find a {domain} ."),
            t(BookConfirm, None, false, true, "my booking is at {value} ."),
            t(BookConfirm, None, false, false, "my {domain} booking is confirmed ."),
            t(BookFail, None, false, false, "my {domain} booking failed ."),
            t(Bye, None, false, false, "thank you , goodbye ."),
            t(Greet, None, false, false, "hello ."),
        ];
        let system = vec![
            t(Inform, None, true, true, "the {slot} is {value} ."),
            t(Inform, None, true, false, "i can tell you the {slot} ."),
            t(Request, None, true, false, "what {slot} would you like ?"),
            t(Request, Some("train"), true, false, "what {slot} should the train have ?"),
            t(Book, None, false, false, "shall i book the {domain} ?"),
            t(Offer, None, false, true, "how about {value} ?"),
            t(Offer, None, false, false, "i have a {domain} for you ."),
            t(NoOffer, None, false, false, "sorry , there is no {domain} matching your request ."),
            t(BookConfirm, None, false, true, "booking confirmed at {value} ."),
            t(BookConfirm, None, false, false, "your {domain} is booked ."),
            t(BookFail, None, false, false, "sorry , the {domain} booking failed ."),
            t(Bye, None, false, false, "goodbye ."),
            t(Greet, None, false, false, "welcome , how can i help ?"),
        ];
        Self { user, system }
    }
}

/// Lowercased alphanumeric runs; punctuation and whitespace separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Default number of hash buckets.
pub const DEFAULT_VOCAB_DIM: usize = 2048;
/// Default embedding width, shared by the utterance-mode models.
pub const DEFAULT_EMBED_DIM: usize = 256;
/// Token budget for one (user, system) exchange.
pub const DEFAULT_MAX_TOKENS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_dim: usize,
    pub embed_dim: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { vocab_dim: DEFAULT_VOCAB_DIM, embed_dim: DEFAULT_EMBED_DIM, max_tokens: DEFAULT_MAX_TOKENS, seed: 0 }
    }
}

/// Feature-hash bag of words followed by a frozen random projection.
///
/// Tokens are namespaced by speaker (`u:` / `s:`) before hashing so the same
/// word said by the user and by the system lands in different buckets.
#[derive(Clone, Debug)]
pub struct UtteranceEncoder {
    config: EncoderConfig,
    projection: Array2<f64>,
}

impl UtteranceEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.vocab_dim == 0 || config.embed_dim == 0 || config.max_tokens == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut rng = rng_for(config.seed, "utterance-projection", 0);
        let bound = 3f64.sqrt();
        let projection =
            Array2::from_shape_fn((config.vocab_dim, config.embed_dim), |_| rng.random_range(-bound..bound));
        Ok(Self { config, projection })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.config.vocab_dim as u64) as usize
    }

    /// Speaker-tagged tokens of the exchange, truncated to `max_tokens`.
    pub fn exchange_tokens(&self, user: &str, system: &str) -> Vec<String> {
        tokenize(user)
            .into_iter()
            .map(|t| format!("u:{t}"))
            .chain(tokenize(system).into_iter().map(|t| format!("s:{t}")))
            .take(self.config.max_tokens)
            .collect()
    }

    /// Raw (unnormalized) hashed token counts.
    pub fn hashed_counts(&self, user: &str, system: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.config.vocab_dim];
        for tok in self.exchange_tokens(user, system) {
            counts[self.bucket(&tok)] += 1.0;
        }
        counts
    }

    /// Embeds one (user utterance, system utterance) exchange.
    pub fn encode(&self, user: &str, system: &str) -> Array1<f64> {
        let counts = self.hashed_counts(user, system);
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let mut out = Array1::zeros(self.config.embed_dim);
        if norm == 0.0 {
            return out;
        }
        for (bucket, c) in counts.iter().enumerate().filter(|(_, c)| **c != 0.0) {
            out.scaled_add(c / norm, &self.projection.row(bucket));
        }
        out
    }
}
