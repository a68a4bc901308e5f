//! Task-oriented dialogue policy learning with curiosity-driven exploration.

pub mod domain;
pub mod dst;
pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod icm;
pub mod nlg;
pub mod nn;
pub mod ppo;
pub mod rnd;
pub mod rng;
pub mod user;
pub mod vectorize;

pub use domain::{ActSet, DialogueAct, EntityDatabase, Intent, Ontology, UserGoal};
pub use dst::{dst_update, BeliefState};
pub use env::{compute_metrics, DialogueEnv, EnvConfig, EpisodeLog, Metrics, StepResult, World};
pub use error::{Error, Result};
pub use vectorize::{ActionVector, StateVector, VectorLayout};
pub use features::{Featurizer, InputMode};
pub use harness::{Arm, RunConfig};
pub use icm::{IcConfig, IcModel};
pub use nn::{AdamW, Mlp};
pub use ppo::{ActorCritic, PpoConfig, Transition};
pub use rnd::{RndConfig, RndModel};
