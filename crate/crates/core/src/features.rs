//! Inputs of the intrinsic-reward models, built from one dialogue exchange.

use std::sync::Arc;

use ndarray::{concatenate, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::domain::ActSet;
use crate::dst::BeliefState;
use crate::env::World;
use crate::error::Result;
use crate::nlg::{EncoderConfig, Speaker, UtteranceEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    /// Dialogue-act vectors.
    Das,
    /// Realised utterances through the hashed encoder.
    Utt,
}

/// Turns (user acts, system acts) exchanges into model inputs.
#[derive(Clone, Debug)]
pub struct Featurizer {
    world: Arc<World>,
    encoder: UtteranceEncoder,
}

impl Featurizer {
    pub fn new(world: Arc<World>, encoder: EncoderConfig) -> Result<Self> {
        Ok(Self { world, encoder: UtteranceEncoder::new(encoder)? })
    }

    pub fn standard(world: Arc<World>) -> Result<Self> {
        Self::new(world, EncoderConfig::default())
    }

    pub fn dim(&self, mode: InputMode) -> usize {
        match mode {
            InputMode::Das => 2 * self.world.layout.action_dim(),
            InputMode::Utt => self.encoder.embed_dim(),
        }
    }

    /// User-act vector followed by system-act vector, or the embedding of
    /// both realised utterances.
    pub fn exchange(&self, mode: InputMode, user: &ActSet, system: &ActSet) -> Result<Array1<f64>> {
        match mode {
            InputMode::Das => {
                let layout = &self.world.layout;
                let u = layout.encode_action(&user.delexicalized())?;
                let s = layout.encode_action(&system.delexicalized())?;
                Ok(concatenate(Axis(0), &[u.0.view(), s.0.view()]).expect("1-d arrays"))
            }
            InputMode::Utt => {
                let t = &self.world.templates;
                let u = t.realize_or_empty(user, Speaker::User)?;
                let s = t.realize_or_empty(system, Speaker::System)?;
                Ok(self.encoder.encode(&u, &s))
            }
        }
    }

    /// The exchange that produced a belief state.
    pub fn last_exchange(&self, mode: InputMode, belief: &BeliefState) -> Result<Array1<f64>> {
        self.exchange(mode, &belief.last_user, &belief.last_system)
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }
}
