//! Intrinsic curiosity: a state encoder trained through forward and inverse
//! dynamics models. The forward model's error in feature space is the bonus.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ActSet;
use crate::dst::BeliefState;
use crate::env::DialogueEnv;
use crate::error::{Error, Result};
use crate::features::{Featurizer, InputMode};
use crate::nn::{AdamW, AdamWConfig, Mlp, Params};
use crate::ppo::sigmoid;
use crate::rng::{derive_seed, rng_for};
use crate::vectorize::{ActionVector, VectorLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcConfig {
    pub mode: InputMode,
    pub pretrain_steps: usize,
    pub lr_pretrain: f64,
    pub lr_joint: f64,
    pub update_rounds: usize,
    pub grad_clip: f64,
    pub eta: f64,
    pub beta_das: f64,
    pub beta_utt: f64,
    pub beta_joint: f64,
    pub lambda_pol: f64,
    pub inverse_hidden: usize,
    pub forward_hidden: usize,
    pub feature_dim: usize,
    /// Samples per pre-training update, drawn from the collected buffer.
    pub pretrain_batch: usize,
    /// Keep training jointly with the policy after pre-training.
    pub joint: bool,
}

impl IcConfig {
    pub fn for_mode(mode: InputMode) -> Self {
        Self {
            mode,
            pretrain_steps: 1000,
            lr_pretrain: 1e-3,
            lr_joint: 1e-5,
            update_rounds: 1,
            grad_clip: 10.0,
            eta: 0.01,
            beta_das: 0.2,
            beta_utt: 0.2,
            beta_joint: 0.8,
            lambda_pol: 0.5,
            inverse_hidden: 524,
            forward_hidden: 524,
            feature_dim: 256,
            pretrain_batch: 32,
            joint: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if ![self.beta_das, self.beta_utt, self.beta_joint, self.lambda_pol].into_iter().all(unit) {
            return Err(Error::Config("IC mixing weights must lie in [0, 1]".into()));
        }
        if self.eta <= 0.0 || self.lr_pretrain <= 0.0 || self.lr_joint <= 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Config("IC eta, learning rates and gradient clip must be positive".into()));
        }
        if self.update_rounds == 0 || self.inverse_hidden == 0 || self.forward_hidden == 0 || self.feature_dim == 0 {
            return Err(Error::Config("IC counts and widths must be at least 1".into()));
        }
        if self.pretrain_batch == 0 {
            return Err(Error::Config("pretrain_batch must be at least 1".into()));
        }
        Ok(())
    }

    /// Forward-loss weight of the standalone variant.
    pub fn variant_beta(&self) -> f64 {
        match self.mode {
            InputMode::Das => self.beta_das,
            InputMode::Utt => self.beta_utt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcPhase {
    Pretrain,
    Joint,
}

/// One transition as seen by the curiosity model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSample {
    pub state: Array1<f64>,
    /// Executed (clamped) action bits.
    pub action: Array1<f64>,
    pub next_state: Array1<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IcStats {
    pub forward_loss: f64,
    pub inverse_loss: f64,
    pub inverse_accuracy: f64,
    /// Mean of true-positive and true-negative rates of the inverse model.
    pub inverse_balanced_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcModel {
    pub config: IcConfig,
    pub encoder: Mlp,
    pub forward: Mlp,
    pub inverse: Mlp,
    pub encoder_opt: AdamW,
    pub forward_opt: AdamW,
    pub inverse_opt: AdamW,
    pub phase: IcPhase,
    pub updates: u64,
}

/// `λ_pol · policy_loss + (1 − λ_pol) · ic_loss`.
pub fn ic_joint_loss(ic_loss: f64, policy_loss: f64, lambda_pol: f64) -> f64 {
    lambda_pol * policy_loss + (1.0 - lambda_pol) * ic_loss
}

fn stack(rows: impl Iterator<Item = Array1<f64>>, width: usize) -> Array2<f64> {
    let rows: Vec<Array1<f64>> = rows.collect();
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    out
}

impl IcModel {
    /// `input_dim` is the state-vector length (DAs) or the frozen utterance
    /// feature length (Utt).
    pub fn new<R: Rng + ?Sized>(config: IcConfig, input_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = config.feature_dim;
        let encoder = match config.mode {
            InputMode::Das => Mlp::new(&[input_dim, f, f], rng)?,
            InputMode::Utt => Mlp::new(&[input_dim, f], rng)?,
        };
        let forward = Mlp::new(&[f + action_dim, config.forward_hidden, f], rng)?;
        let inverse = Mlp::new(&[2 * f, config.inverse_hidden, action_dim], rng)?;
        let opt = |m: &Mlp| AdamW::new(m, AdamWConfig::with_lr(config.lr_pretrain));
        Ok(Self {
            encoder_opt: opt(&encoder),
            forward_opt: opt(&forward),
            inverse_opt: opt(&inverse),
            encoder,
            forward,
            inverse,
            config,
            phase: IcPhase::Pretrain,
            updates: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.inverse.output_dim()
    }

    /// Switches to joint training: joint learning rate and β.
    pub fn enter_joint_phase(&mut self) {
        self.phase = IcPhase::Joint;
        for opt in [&mut self.encoder_opt, &mut self.forward_opt, &mut self.inverse_opt] {
            opt.config.lr = self.config.lr_joint;
        }
    }

    pub fn beta(&self) -> f64 {
        match self.phase {
            IcPhase::Pretrain => self.config.variant_beta(),
            IcPhase::Joint => self.config.beta_joint,
        }
    }

    /// Weight of the IC gradients: `1 − λ_pol` in joint mode, 1 otherwise.
    pub fn loss_weight(&self) -> f64 {
        match self.phase {
            IcPhase::Pretrain => 1.0,
            IcPhase::Joint => 1.0 - self.config.lambda_pol,
        }
    }

    pub fn features(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(states.view())
    }

    /// `‖F(φ(s), a) − φ(s′)‖²` per sample.
    pub fn forward_errors(&self, samples: &[IcSample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let (s, a, n) = self.batch(samples);
        let phi = self.features(&s)?;
        let phi_next = self.features(&n)?;
        let pred = self.forward.predict(concatenate(Axis(1), &[phi.view(), a.view()]).expect("rows agree").view())?;
        Ok((pred - phi_next).mapv(|d| d * d).sum_axis(Axis(1)).to_vec())
    }

    /// `η · ‖F(φ(s), a) − φ(s′)‖²` per sample.
    pub fn intrinsic_rewards(&self, samples: &[IcSample]) -> Result<Vec<f64>> {
        Ok(self.forward_errors(samples)?.into_iter().map(|e| self.config.eta * e).collect())
    }

    fn batch(&self, samples: &[IcSample]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let sw = samples[0].state.len();
        let aw = samples[0].action.len();
        (
            stack(samples.iter().map(|x| x.state.clone()), sw),
            stack(samples.iter().map(|x| x.action.clone()), aw),
            stack(samples.iter().map(|x| x.next_state.clone()), sw),
        )
    }

    /// Losses and inverse accuracies without updating.
    pub fn evaluate(&self, samples: &[IcSample]) -> Result<IcStats> {
        if samples.is_empty() {
            return Err(Error::Argument("empty IC batch".into()));
        }
        let (s, a, n) = self.batch(samples);
        let phi = self.features(&s)?;
        let phi_next = self.features(&n)?;
        let pred = self.forward.predict(concatenate(Axis(1), &[phi.view(), a.view()]).expect("rows agree").view())?;
        let logits =
            self.inverse.predict(concatenate(Axis(1), &[phi.view(), phi_next.view()]).expect("rows agree").view())?;
        Ok(losses(&pred, &phi_next, &logits, &a).0)
    }

    /// One IC loss evaluation and optimiser step per round. Returns the stats
    /// of the final round, measured before its step.
    pub fn update(&mut self, samples: &[IcSample]) -> Result<IcStats> {
        if samples.is_empty() {
            return Err(Error::Argument("empty IC batch".into()));
        }
        let (s, a, n) = self.batch(samples);
        let f = self.config.feature_dim;
        let beta = self.beta();
        let weight = self.loss_weight();
        let mut stats = IcStats::default();
        for _ in 0..self.config.update_rounds {
            let (phi, tape_s) = self.encoder.forward(s.view())?;
            let (phi_next, tape_n) = self.encoder.forward(n.view())?;
            let fwd_in = concatenate(Axis(1), &[phi.view(), a.view()]).expect("rows agree");
            let (pred, tape_f) = self.forward.forward(fwd_in.view())?;
            let inv_in = concatenate(Axis(1), &[phi.view(), phi_next.view()]).expect("rows agree");
            let (logits, tape_i) = self.inverse.forward(inv_in.view())?;
            let (round, g_pred, g_logits) = losses(&pred, &phi_next, &logits, &a);
            if !(round.forward_loss.is_finite() && round.inverse_loss.is_finite()) {
                return Err(Error::Numeric(format!(
                    "IC loss not finite: forward {}, inverse {} after {} updates",
                    round.forward_loss, round.inverse_loss, self.updates
                )));
            }
            stats = round;

            // The forward target φ(s′) is treated as a constant.
            let (mut gf, gx_f) = self.forward.backward(&tape_f, (g_pred * (beta * weight)).view())?;
            let (mut gi, gx_i) = self.inverse.backward(&tape_i, (g_logits * ((1.0 - beta) * weight)).view())?;
            let g_phi = &gx_f.slice(s![.., ..f]) + &gx_i.slice(s![.., ..f]);
            let g_phi_next = gx_i.slice(s![.., f..]).to_owned();
            let (mut ge, _) = self.encoder.backward(&tape_s, g_phi.view())?;
            let (ge_next, _) = self.encoder.backward(&tape_n, g_phi_next.view())?;
            ge.add_scaled(&ge_next, 1.0);
            clip_all(&mut [&mut ge, &mut gf, &mut gi], self.config.grad_clip);
            self.encoder_opt.step(&mut self.encoder, &ge)?;
            self.forward_opt.step(&mut self.forward, &gf)?;
            self.inverse_opt.step(&mut self.inverse, &gi)?;
            self.updates += 1;
        }
        Ok(stats)
    }

    /// Collects `pretrain_steps` environment steps with the random catalog
    /// policy and updates once per step on a batch drawn from everything
    /// collected so far.
    pub fn pretrain(&mut self, env: &mut DialogueEnv, featurizer: &Featurizer, seed: u64) -> Result<Vec<IcSample>> {
        let samples = collect_random_samples(env, featurizer, self.config.mode, self.config.pretrain_steps, seed)?;
        let mut rng = rng_for(seed, "ic-pretrain-batches", 0);
        for t in 0..samples.len() {
            let pool = &samples[..=t];
            let batch: Vec<IcSample> =
                (0..self.config.pretrain_batch).map(|_| pool.choose(&mut rng).expect("non-empty").clone()).collect();
            self.update(&batch)?;
        }
        Ok(samples)
    }
}

/// Per-bit BCE and squared-error losses, with their gradients w.r.t. the
/// forward prediction and the inverse logits (unweighted by β).
fn losses(pred: &Array2<f64>, phi_next: &Array2<f64>, logits: &Array2<f64>, a: &Array2<f64>) -> (IcStats, Array2<f64>, Array2<f64>) {
    let n = pred.nrows() as f64;
    let k = logits.ncols() as f64;
    let diff = pred - phi_next;
    let forward_loss = diff.mapv(|d| d * d).sum() / n;
    let g_pred = diff * (2.0 / n);
    let mut inverse_loss = 0.0;
    let mut correct = 0usize;
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    let mut g_logits = Array2::zeros(logits.dim());
    for ((z, y), g) in logits.iter().zip(a.iter()).zip(g_logits.iter_mut()) {
        // log(1 + e^z) − y·z, computed stably.
        inverse_loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(*z) - y) / (n * k);
        let predicted = *z > 0.0;
        let actual = *y > 0.5;
        correct += usize::from(predicted == actual);
        if actual {
            pos += 1;
            tp += usize::from(predicted);
        } else {
            neg += 1;
            tn += usize::from(!predicted);
        }
    }
    let rate = |hit: usize, total: usize| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
    let stats = IcStats {
        forward_loss,
        inverse_loss: inverse_loss / (n * k),
        inverse_accuracy: correct as f64 / (n * k),
        inverse_balanced_accuracy: 0.5 * (rate(tp, pos) + rate(tn, neg)),
    };
    (stats, g_pred, g_logits)
}

fn clip_all(grads: &mut [&mut Params], max_norm: f64) {
    let norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.iter_mut().for_each(|g| g.scale(max_norm / norm));
    }
}

/// Model input for a belief state: the state vector (DAs) or the frozen
/// embedding of the exchange that produced it (Utt).
pub fn ic_state_input(mode: InputMode, featurizer: &Featurizer, belief: &BeliefState) -> Result<Array1<f64>> {
    match mode {
        InputMode::Das => Ok(featurizer.world().layout.encode_state(belief)?.0),
        InputMode::Utt => featurizer.last_exchange(InputMode::Utt, belief),
    }
}

/// Uniform random policy over the action catalog: 1 to `max_acts` distinct acts.
pub fn random_catalog_action<R: Rng + ?Sized>(layout: &VectorLayout, rng: &mut R) -> Result<ActSet> {
    let k = rng.random_range(1..=layout.max_acts().min(layout.action_dim()));
    let picks = rand::seq::index::sample(rng, layout.action_dim(), k);
    ActSet::from_acts(picks.iter().map(|i| layout.catalog()[i].clone()))
}

/// `steps` transitions of the random catalog policy, over as many seeded
/// dialogues as needed.
pub fn collect_random_samples(
    env: &mut DialogueEnv,
    featurizer: &Featurizer,
    mode: InputMode,
    steps: usize,
    seed: u64,
) -> Result<Vec<IcSample>> {
    let layout = env.world().layout.clone();
    let mut rng = rng_for(seed, "ic-random-policy", 0);
    let mut out = Vec::with_capacity(steps);
    let mut episode = 0u64;
    let mut belief = None;
    while out.len() < steps {
        let state = match belief.take() {
            Some(b) => b,
            None => {
                episode += 1;
                env.reset(derive_seed(seed, "ic-random-goal", episode))?
            }
        };
        let acts = random_catalog_action(&layout, &mut rng)?;
        let action: ActionVector = layout.encode_action(&acts)?;
        let r = env.step(&acts)?;
        out.push(IcSample {
            state: ic_state_input(mode, featurizer, &state)?,
            action: action.0,
            next_state: ic_state_input(mode, featurizer, &r.next_state)?,
        });
        if !r.done {
            belief = Some(r.next_state);
        }
    }
    Ok(out)
}
