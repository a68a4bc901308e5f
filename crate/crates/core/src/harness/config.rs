use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{EntityDatabase, Ontology, DEFAULT_ENTITIES_PER_DOMAIN};
use crate::env::{EnvConfig, World, DEFAULT_DATABASE_SEED};
use crate::error::{Error, Result};
use crate::features::InputMode;
use crate::icm::IcConfig;
use crate::nlg::TemplateSet;
use crate::ppo::PpoConfig;
use crate::rnd::RndConfig;
use crate::user::UserConfig;

/// Full-length training budget.
pub const FULL_SCALE_STEPS: u64 = 1_000_000;
/// Desk-scale default budget.
pub const DEFAULT_STEPS: u64 = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "ppo")]
    Ppo,
    #[serde(rename = "ppo-rnd-das")]
    PpoRndDas,
    #[serde(rename = "ppo-rnd-utt")]
    PpoRndUtt,
    #[serde(rename = "ppo-ic-das")]
    PpoIcDas,
    #[serde(rename = "ppo-ic-utt")]
    PpoIcUtt,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Ppo, Arm::PpoRndDas, Arm::PpoRndUtt, Arm::PpoIcDas, Arm::PpoIcUtt];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Ppo => "ppo",
            Arm::PpoRndDas => "ppo-rnd-das",
            Arm::PpoRndUtt => "ppo-rnd-utt",
            Arm::PpoIcDas => "ppo-ic-das",
            Arm::PpoIcUtt => "ppo-ic-utt",
        }
    }

    pub fn rnd_mode(self) -> Option<InputMode> {
        match self {
            Arm::PpoRndDas => Some(InputMode::Das),
            Arm::PpoRndUtt => Some(InputMode::Utt),
            _ => None,
        }
    }

    pub fn ic_mode(self) -> Option<InputMode> {
        match self {
            Arm::PpoIcDas => Some(InputMode::Das),
            Arm::PpoIcUtt => Some(InputMode::Utt),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['+', '_', '(', ')', ' '], "-");
        let key = key.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-");
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}; expected one of ppo, ppo-rnd-das, ppo-rnd-utt, ppo-ic-das, ppo-ic-utt")))
    }
}

/// Which checkpoints a run keeps on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointPolicy {
    /// One file per evaluation.
    All,
    /// Only the most recent evaluation.
    Last,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arm: Arm,
    pub steps: u64,
    pub seed: u64,
    pub ontology: Option<PathBuf>,
    pub eval_interval: u64,
    pub n_eval: usize,
    pub out_dir: PathBuf,
    pub checkpoints: CheckpointPolicy,
    pub log_episodes: bool,
    pub env: EnvConfig,
    pub user: UserConfig,
    pub ppo: PpoConfig,
    /// Defaults to the arm's mode preset.
    pub rnd: Option<RndConfig>,
    pub ic: Option<IcConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arm: Arm::Ppo,
            steps: DEFAULT_STEPS,
            seed: 0,
            ontology: None,
            eval_interval: 10_000,
            n_eval: 1000,
            out_dir: PathBuf::from("runs/default"),
            checkpoints: CheckpointPolicy::All,
            log_episodes: false,
            env: EnvConfig::default(),
            user: UserConfig::default(),
            ppo: PpoConfig::default(),
            rnd: None,
            ic: None,
        }
    }
}

impl RunConfig {
    /// Parses a (possibly partial) configuration. Partial `rnd` and `ic`
    /// objects are laid over the preset for their mode, which defaults to the
    /// arm's.
    pub fn from_json(s: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(s)?;
        let arm: Arm = match value.get("arm") {
            Some(a) => serde_json::from_value(a.clone())?,
            None => Self::default().arm,
        };
        if let Some(obj) = value.as_object_mut() {
            for key in ["rnd", "ic"] {
                let Some(patch) = obj.get(key).and_then(|v| v.as_object()).cloned() else { continue };
                let mode = match patch.get("mode") {
                    Some(m) => serde_json::from_value(m.clone())?,
                    None => if key == "rnd" { arm.rnd_mode() } else { arm.ic_mode() }.unwrap_or(InputMode::Das),
                };
                let mut preset = if key == "rnd" {
                    serde_json::to_value(RndConfig::for_mode(mode))?
                } else {
                    serde_json::to_value(IcConfig::for_mode(mode))?
                };
                let fields = preset.as_object_mut().expect("config presets are objects");
                fields.extend(patch);
                obj.insert(key.to_string(), preset);
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Fills the intrinsic-module presets for the arm and checks every field.
    pub fn resolved(mut self) -> Result<Self> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.n_eval == 0 || self.eval_interval == 0 {
            return Err(Error::Config("n_eval and eval_interval must be positive".into()));
        }
        self.env.validate()?;
        self.ppo.validate()?;
        match self.arm.rnd_mode() {
            Some(mode) => {
                let rnd = self.rnd.take().unwrap_or_else(|| RndConfig::for_mode(mode));
                if rnd.mode != mode {
                    return Err(Error::Config(format!("rnd mode {:?} does not match arm {}", rnd.mode, self.arm)));
                }
                rnd.validate()?;
                self.rnd = Some(rnd);
            }
            None => self.rnd = None,
        }
        match self.arm.ic_mode() {
            Some(mode) => {
                let ic = self.ic.take().unwrap_or_else(|| IcConfig::for_mode(mode));
                if ic.mode != mode {
                    return Err(Error::Config(format!("ic mode {:?} does not match arm {}", ic.mode, self.arm)));
                }
                ic.validate()?;
                self.ic = Some(ic);
            }
            None => self.ic = None,
        }
        Ok(self)
    }

    pub fn build_world(&self) -> Result<Arc<World>> {
        let ontology = match &self.ontology {
            Some(path) => Ontology::load(path)?,
            None => Ontology::default_multi_domain(),
        };
        let database = EntityDatabase::generate(&ontology, DEFAULT_DATABASE_SEED, DEFAULT_ENTITIES_PER_DOMAIN)?;
        World::new(ontology, database, TemplateSet::default(), self.env.clone(), self.user.clone())
    }
}
