use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{DialogueEnv, Metrics, World};
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::harness::analyze::analyze;
use crate::harness::config::{CheckpointPolicy, RunConfig};
use crate::harness::policies::ActorPolicy;
use crate::icm::{ic_state_input, IcModel, IcPhase, IcSample, IcStats};
use crate::ppo::{policy_act, ppo_update, ActMode, ActorCritic, PpoStats, Transition};
use crate::rnd::RndModel;
use crate::rng::{derive_seed, rng_for};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Column list of `metrics.csv`.
pub const CSV_COLUMNS: [&str; 19] = [
    "step",
    "episodes",
    "complete_rate",
    "success_rate",
    "book_rate",
    "avg_turns",
    "avg_return",
    "train_success_rate",
    "train_avg_return",
    "actor_loss",
    "critic_loss",
    "mean_ratio",
    "clip_fraction",
    "mean_intrinsic",
    "eta",
    "predictor_loss",
    "forward_loss",
    "inverse_loss",
    "inverse_accuracy",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub transitions: usize,
    pub dialogues: usize,
    pub ppo: PpoStats,
    pub mean_intrinsic: f64,
    #[serde(default)]
    pub min_intrinsic: f64,
    pub eta: Option<f64>,
    pub predictor_loss: Option<f64>,
    pub ic: Option<IcStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub episodes: u64,
    pub metrics: Metrics,
    /// Over training dialogues since the previous row.
    pub train_success_rate: f64,
    pub train_avg_return: f64,
    pub batch: BatchStats,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let ic = self.batch.ic.as_ref();
        let m = &self.metrics;
        let b = &self.batch;
        [
            self.step.to_string(),
            self.episodes.to_string(),
            m.complete_rate.to_string(),
            m.success_rate.to_string(),
            opt(m.book_rate),
            m.avg_turns.to_string(),
            m.avg_return.to_string(),
            self.train_success_rate.to_string(),
            self.train_avg_return.to_string(),
            b.ppo.actor_loss.to_string(),
            b.ppo.critic_loss.to_string(),
            b.ppo.mean_ratio.to_string(),
            b.ppo.clip_fraction.to_string(),
            b.mean_intrinsic.to_string(),
            opt(b.eta),
            opt(b.predictor_loss),
            opt(ic.map(|s| s.forward_loss)),
            opt(ic.map(|s| s.inverse_loss)),
            opt(ic.map(|s| s.inverse_accuracy)),
        ]
        .join(",")
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_line()).expect("writing to a string");
    }
    out
}

/// Everything needed to continue a run exactly where it stopped. Random
/// streams are derived from counters, so no generator state is stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: RunConfig,
    pub steps: u64,
    pub episodes: u64,
    pub batches: u64,
    pub next_eval: u64,
    pub model: ActorCritic,
    pub rnd: Option<RndModel>,
    pub ic: Option<IcModel>,
    pub rows: Vec<MetricRow>,
    pub last_batch: BatchStats,
    window_episodes: u64,
    window_successes: u64,
    window_return: f64,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {}", ck.format)));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricRow>,
    pub steps: u64,
    pub episodes: u64,
}

impl RunSummary {
    pub fn final_metrics(&self) -> Option<&Metrics> {
        self.rows.last().map(|r| &r.metrics)
    }
}

/// Collect → intrinsic update → PPO update, with evaluation rows at every
/// multiple of the evaluation interval.
pub struct Trainer {
    world: Arc<World>,
    featurizer: Featurizer,
    env: DialogueEnv,
    state: Checkpoint,
    out_dir: PathBuf,
    episode_log: Option<BufWriter<File>>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        let config = config.resolved()?;
        let world = config.build_world()?;
        let featurizer = Featurizer::standard(world.clone())?;
        let layout = &world.layout;
        let seed = config.seed;
        let model = ActorCritic::new(layout.state_dim(), layout.action_dim(), &config.ppo, &mut rng_for(seed, "ppo-init", 0))?;
        let rnd = match &config.rnd {
            Some(c) => Some(RndModel::new(
                c.clone(),
                featurizer.dim(c.mode),
                match c.mode {
                    crate::features::InputMode::Das => layout.state_dim(),
                    crate::features::InputMode::Utt => featurizer.dim(c.mode),
                },
                &mut rng_for(seed, "rnd-init", 0),
            )?),
            None => None,
        };
        let ic = match &config.ic {
            Some(c) => {
                let input_dim = match c.mode {
                    crate::features::InputMode::Das => layout.state_dim(),
                    crate::features::InputMode::Utt => featurizer.dim(c.mode),
                };
                let mut ic = IcModel::new(c.clone(), input_dim, layout.action_dim(), &mut rng_for(seed, "ic-init", 0))?;
                let mut pre_env = DialogueEnv::new(world.clone());
                ic.pretrain(&mut pre_env, &featurizer, derive_seed(seed, "ic-pretrain", 0))?;
                if c.joint {
                    ic.enter_joint_phase();
                }
                Some(ic)
            }
            None => None,
        };
        let out_dir = config.out_dir.clone();
        let state = Checkpoint {
            format: CHECKPOINT_FORMAT,
            next_eval: config.eval_interval,
            config,
            steps: 0,
            episodes: 0,
            batches: 0,
            model,
            rnd,
            ic,
            rows: Vec::new(),
            last_batch: BatchStats::default(),
            window_episodes: 0,
            window_successes: 0,
            window_return: 0.0,
        };
        Self::assemble(world, featurizer, state, out_dir)
    }

    /// Continues from a checkpoint, writing into `out_dir` (default: the
    /// checkpoint's own run directory).
    pub fn resume(checkpoint: &Path, out_dir: Option<PathBuf>) -> Result<Self> {
        let state = Checkpoint::load(checkpoint)?;
        let world = state.config.build_world()?;
        let featurizer = Featurizer::standard(world.clone())?;
        let out_dir = out_dir.unwrap_or_else(|| state.config.out_dir.clone());
        Self::assemble(world, featurizer, state, out_dir)
    }

    fn assemble(world: Arc<World>, featurizer: Featurizer, state: Checkpoint, out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir)?;
        let episode_log = if state.config.log_episodes {
            let file = fs::OpenOptions::new().create(true).append(true).open(out_dir.join("episodes.jsonl"))?;
            Some(BufWriter::new(file))
        } else {
            None
        };
        let env = DialogueEnv::new(world.clone());
        let trainer = Self { world, featurizer, env, state, out_dir, episode_log };
        trainer.write_manifest()?;
        Ok(trainer)
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn write_manifest(&self) -> Result<()> {
        let layout = &self.world.layout;
        let manifest = serde_json::json!({
            "program": "curio",
            "version": format!("v{}", env!("CARGO_PKG_VERSION")),
            "arm": self.state.config.arm.name(),
            "seed": self.state.config.seed,
            "config": self.state.config,
            "state_dim": layout.state_dim(),
            "action_dim": layout.action_dim(),
            "layout_sha256": sha256_hex(layout.to_json().as_bytes()),
            "actor_parameters": self.state.model.actor.param_count(),
            "critic_parameters": self.state.model.critic.param_count(),
            "rnd_target_sha256": self.state.rnd.as_ref().map(|r| r.initial_target_checksum().to_string()),
            "csv_columns": CSV_COLUMNS,
        });
        fs::write(self.out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn finished(&self) -> bool {
        let s = &self.state;
        s.steps >= s.config.steps && s.next_eval > s.config.steps
    }

    /// Runs to the step budget. `on_row` sees every new evaluation row.
    pub fn run(&mut self, on_row: &mut dyn FnMut(&MetricRow)) -> Result<RunSummary> {
        loop {
            self.evaluate_due(on_row)?;
            if self.state.steps >= self.state.config.steps {
                break;
            }
            if let Err(e) = self.train_batch() {
                self.write_diagnostics(&e)?;
                return Err(e);
            }
        }
        if let Some(log) = &mut self.episode_log {
            log.flush()?;
        }
        Ok(RunSummary {
            out_dir: self.out_dir.clone(),
            rows: self.state.rows.clone(),
            steps: self.state.steps,
            episodes: self.state.episodes,
        })
    }

    fn evaluate_due(&mut self, on_row: &mut dyn FnMut(&MetricRow)) -> Result<()> {
        let total = self.state.config.steps;
        while self.state.next_eval <= total && self.state.steps >= self.state.next_eval {
            let boundary = self.state.next_eval;
            let config = &self.state.config;
            let eval_seed = derive_seed(config.seed, "evaluation", 0);
            let metrics = analyze(&mut ActorPolicy { actor: &self.state.model.actor }, &self.world, config.n_eval, eval_seed)?;
            let s = &mut self.state;
            let episodes = s.window_episodes.max(1) as f64;
            let row = MetricRow {
                step: boundary,
                episodes: s.episodes,
                metrics,
                train_success_rate: s.window_successes as f64 / episodes,
                train_avg_return: s.window_return / episodes,
                batch: s.last_batch.clone(),
            };
            s.window_episodes = 0;
            s.window_successes = 0;
            s.window_return = 0.0;
            s.rows.push(row);
            s.next_eval += s.config.eval_interval;
            fs::write(self.out_dir.join("metrics.csv"), metrics_csv(&self.state.rows))?;
            self.save_checkpoint(boundary)?;
            on_row(self.state.rows.last().expect("just pushed"));
        }
        Ok(())
    }

    fn save_checkpoint(&self, step: u64) -> Result<()> {
        let policy = self.state.config.checkpoints;
        if policy == CheckpointPolicy::None {
            return Ok(());
        }
        let dir = self.out_dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("step_{step}.json"));
        fs::write(&path, self.state.to_json()?)?;
        if policy == CheckpointPolicy::Last {
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p != path && p.extension().is_some_and(|e| e == "json") {
                    fs::remove_file(p)?;
                }
            }
        }
        Ok(())
    }

    fn write_diagnostics(&self, error: &Error) -> Result<()> {
        let s = &self.state;
        let dump = serde_json::json!({
            "error": error.to_string(),
            "steps": s.steps,
            "episodes": s.episodes,
            "batches": s.batches,
            "last_batch": s.last_batch,
            "eta": s.rnd.as_ref().map(|r| r.eta),
            "actor_sha256": s.model.actor.checksum(),
        });
        fs::write(self.out_dir.join("diagnostics.json"), serde_json::to_string_pretty(&dump)?)?;
        Ok(())
    }

    /// One collection of up to `dialogue_batch` dialogues and the updates.
    pub fn train_batch(&mut self) -> Result<BatchStats> {
        let config = self.state.config.clone();
        let seed = config.seed;
        let layout = self.world.layout.clone();
        let stop_at = self.state.next_eval.min(config.steps);
        if self.state.steps >= stop_at {
            return Err(Error::Argument(format!("no steps left before step {stop_at}; evaluate first")));
        }
        let mut rng = rng_for(seed, "rollout", self.state.batches);
        let rnd_mode = self.state.rnd.as_ref().map(|r| r.config.mode);
        let ic_mode = self.state.ic.as_ref().map(|m| m.config.mode);

        let mut transitions = Vec::new();
        let mut rnd_inputs: Vec<Array1<f64>> = Vec::new();
        let mut ic_samples = Vec::new();
        let mut dialogues = 0usize;
        while dialogues < config.ppo.dialogue_batch && self.state.steps < stop_at {
            let goal_seed = derive_seed(seed, "train-goal", self.state.episodes);
            let mut belief = self.env.reset(goal_seed)?;
            loop {
                let state = layout.encode_state(&belief)?;
                let (bits, log_prob) = policy_act(&self.state.model.actor, &state.0, ActMode::Sample, &mut rng)?;
                let value = self.state.model.value(&state.0)?;
                let acts = layout.decode_action(&bits)?;
                let r = self.env.step(&acts)?;
                if let Some(mode) = rnd_mode {
                    rnd_inputs.push(self.featurizer.exchange(mode, &r.user_acts, &r.system_acts)?);
                }
                if let Some(mode) = ic_mode {
                    ic_samples.push(IcSample {
                        state: ic_state_input(mode, &self.featurizer, &belief)?,
                        action: layout.encode_action(&acts)?.0,
                        next_state: ic_state_input(mode, &self.featurizer, &r.next_state)?,
                    });
                }
                transitions.push(Transition {
                    state: state.0,
                    action: bits.0,
                    log_prob,
                    extrinsic_reward: r.extrinsic_reward,
                    intrinsic_reward: 0.0,
                    done: r.done,
                    value,
                });
                self.state.steps += 1;
                if r.done {
                    break;
                }
                belief = r.next_state;
            }
            let log = self.env.log().expect("dialogue in progress");
            self.state.window_episodes += 1;
            self.state.window_successes += u64::from(log.successful);
            self.state.window_return += log.extrinsic_return;
            if let Some(out) = &mut self.episode_log {
                writeln!(out, "{}", serde_json::to_string(log)?)?;
            }
            self.state.episodes += 1;
            dialogues += 1;
        }

        let mut stats = BatchStats { transitions: transitions.len(), dialogues, ..BatchStats::default() };
        let mut policy_weight = 1.0;
        if let Some(rnd) = &mut self.state.rnd {
            let inputs = stack(&rnd_inputs);
            let (rewards, _) = rnd.batch_rewards(&inputs, dialogues as u64)?;
            for (t, r) in transitions.iter_mut().zip(rewards) {
                t.intrinsic_reward = r;
            }
            stats.predictor_loss = Some(rnd.update(&inputs)?);
            stats.eta = Some(rnd.eta);
        }
        if let Some(ic) = &mut self.state.ic {
            for (t, r) in transitions.iter_mut().zip(ic.intrinsic_rewards(&ic_samples)?) {
                t.intrinsic_reward = r;
            }
            stats.eta = Some(ic.config.eta);
            if ic.phase == IcPhase::Joint {
                stats.ic = Some(ic.update(&ic_samples)?);
                policy_weight = ic.config.lambda_pol;
            } else {
                stats.ic = Some(ic.evaluate(&ic_samples)?);
            }
        }
        stats.mean_intrinsic = transitions.iter().map(|t| t.intrinsic_reward).sum::<f64>() / transitions.len() as f64;
        stats.min_intrinsic = transitions.iter().map(|t| t.intrinsic_reward).fold(f64::INFINITY, f64::min);
        let mut shuffle = rng_for(seed, "ppo-shuffle", self.state.batches);
        stats.ppo = ppo_update(&mut self.state.model, &transitions, &config.ppo, policy_weight, &mut shuffle)?;
        self.state.batches += 1;
        self.state.last_batch = stats.clone();
        Ok(stats)
    }
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(src);
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains one run end to end and returns its rows.
pub fn run_training(config: RunConfig) -> Result<RunSummary> {
    Trainer::new(config)?.run(&mut |_| {})
}

pub fn resume_training(checkpoint: &Path, out_dir: Option<PathBuf>) -> Result<RunSummary> {
    Trainer::resume(checkpoint, out_dir)?.run(&mut |_| {})
}
