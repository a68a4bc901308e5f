//! PPO actor-critic over independent Bernoulli action bits.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW, AdamWConfig, Mlp, Params};
use crate::vectorize::ActionVector;

/// Probability floor applied to every action bit.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub epochs: usize,
    pub dialogue_batch: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub actor_grad_clip: f64,
    /// Expected number of set bits of the freshly initialised actor.
    pub initial_active_bits: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.1,
            actor_lr: 5e-6,
            critic_lr: 1e-5,
            actor_hidden: 100,
            critic_hidden: 50,
            epochs: 5,
            dialogue_batch: 32,
            minibatch: 32,
            entropy_coef: 0.0,
            actor_grad_clip: 10.0,
            initial_active_bits: 1.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must lie in (0, 1]".into()));
        }
        if self.clip_epsilon <= 0.0 || self.actor_lr <= 0.0 || self.critic_lr <= 0.0 || self.actor_grad_clip <= 0.0 {
            return Err(Error::Config("clip epsilon, learning rates and gradient clip must be positive".into()));
        }
        if self.epochs == 0 || self.dialogue_batch == 0 || self.minibatch == 0 {
            return Err(Error::Config("epochs and batch sizes must be at least 1".into()));
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 {
            return Err(Error::Config("hidden sizes must be at least 1".into()));
        }
        if self.entropy_coef != 0.0 {
            return Err(Error::Config("entropy bonus is not supported".into()));
        }
        if self.initial_active_bits <= 0.0 {
            return Err(Error::Config("initial_active_bits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Array1<f64>,
    /// Raw sampled bits, before decode clamping.
    pub action: Array1<f64>,
    pub log_prob: f64,
    pub extrinsic_reward: f64,
    pub intrinsic_reward: f64,
    pub done: bool,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Sample,
    Greedy,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Joint log-probability of `bits` under independent Bernoulli(σ(logits)).
pub fn bernoulli_log_prob(logits: &[f64], bits: &[f64]) -> f64 {
    logits
        .iter()
        .zip(bits)
        .map(|(&z, &b)| {
            let p = clamp_prob(sigmoid(z));
            if b > 0.5 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// `∂ log π(bits) / ∂ logit`, zero where the probability floor is active.
fn log_prob_grad(z: f64, b: f64) -> f64 {
    let p = sigmoid(z);
    if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p) {
        0.0
    } else {
        b - p
    }
}

/// Draws (or thresholds) an action from the actor. The log-probability is
/// that of the returned raw vector.
pub fn policy_act<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &Array1<f64>,
    mode: ActMode,
    rng: &mut R,
) -> Result<(ActionVector, f64)> {
    let logits = actor.predict_one(state)?;
    let bits: Array1<f64> = logits.mapv(|z| {
        let p = clamp_prob(sigmoid(z));
        let on = match mode {
            ActMode::Sample => rng.random::<f64>() < p,
            ActMode::Greedy => p > 0.5,
        };
        if on {
            1.0
        } else {
            0.0
        }
    });
    let lp = bernoulli_log_prob(logits.as_slice().expect("contiguous"), bits.as_slice().expect("contiguous"));
    Ok((ActionVector(bits), lp))
}

/// Generalised advantage estimates and value targets. `next_value` bootstraps
/// a final transition that is not terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    next_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::Argument("empty trajectory".into()));
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape { expected: n, actual: values.len().min(dones.len()) });
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_v, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], running)
        } else {
            (next_value, 0.0)
        };
        let delta = rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// In-place standardisation with a 1e-8 floor on the standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A))` with `ρ = exp(new − old)`.
pub fn clipped_surrogate_loss(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], epsilon: f64) -> f64 {
    let n = new_log_probs.len();
    let total: f64 = (0..n)
        .map(|i| {
            let rho = (new_log_probs[i] - old_log_probs[i]).exp();
            (rho * advantages[i]).min(rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantages[i])
        })
        .sum();
    -total / n as f64
}

/// Per-sample `∂loss/∂new_log_prob` of [`clipped_surrogate_loss`], and
/// whether the clipped branch was selected.
pub fn surrogate_grad(new_log_prob: f64, old_log_prob: f64, advantage: f64, epsilon: f64, n: usize) -> (f64, bool) {
    let rho = (new_log_prob - old_log_prob).exp();
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < unclipped {
        (0.0, true)
    } else {
        (-unclipped / n as f64, false)
    }
}

/// Actor and critic networks with their separate optimisers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: AdamW,
    pub critic_opt: AdamW,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: &PpoConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut actor = Mlp::new(&[state_dim, config.actor_hidden, action_dim], rng)?;
        let critic = Mlp::new(&[state_dim, config.critic_hidden, 1], rng)?;
        let p = (config.initial_active_bits / action_dim as f64).min(0.5);
        let prior = (p / (1.0 - p)).ln();
        actor.params_mut().biases.last_mut().expect("output layer").fill(prior);
        let actor_opt = AdamW::new(&actor, AdamWConfig::with_lr(config.actor_lr));
        let critic_opt = AdamW::new(&critic, AdamWConfig::with_lr(config.critic_lr));
        Ok(Self { actor, critic, actor_opt, critic_opt })
    }

    pub fn value(&self, state: &Array1<f64>) -> Result<f64> {
        Ok(self.critic.predict_one(state)?[0])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Clip fraction of the very first minibatch, which must be zero.
    pub first_clip_fraction: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate loss of one minibatch with its actor gradient.
#[derive(Clone, Debug)]
pub struct SurrogateGrad {
    pub loss: f64,
    pub grads: Params,
    pub new_log_probs: Vec<f64>,
    /// Samples whose clipped branch was selected.
    pub clipped: usize,
}

/// Loss and parameter gradient of [`clipped_surrogate_loss`] for the actor
/// on a minibatch of `(state, action bits)` rows.
pub fn actor_surrogate_grad(
    actor: &Mlp,
    states: &Array2<f64>,
    actions: &Array2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<SurrogateGrad> {
    let n = states.nrows();
    if n == 0 || actions.nrows() != n || old_log_probs.len() != n || advantages.len() != n {
        return Err(Error::Argument("surrogate minibatch rows disagree or are empty".into()));
    }
    let action_dim = actor.output_dim();
    let (logits, tape) = actor.forward(states.view())?;
    let mut grad_logits = Array2::zeros((n, action_dim));
    let mut new_log_probs = Vec::with_capacity(n);
    let mut clipped = 0usize;
    for r in 0..n {
        let z = logits.row(r);
        let b = actions.row(r);
        let lp = bernoulli_log_prob(z.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"));
        let (g, was_clipped) = surrogate_grad(lp, old_log_probs[r], advantages[r], epsilon, n);
        clipped += usize::from(was_clipped);
        new_log_probs.push(lp);
        if g != 0.0 {
            for k in 0..action_dim {
                grad_logits[[r, k]] = g * log_prob_grad(z[k], b[k]);
            }
        }
    }
    let loss = clipped_surrogate_loss(&new_log_probs, old_log_probs, advantages, epsilon);
    let (grads, _) = actor.backward(&tape, grad_logits.view())?;
    Ok(SurrogateGrad { loss, grads, new_log_probs, clipped })
}

/// Five-epoch clipped-surrogate update of the actor and mean-squared-error
/// update of the critic. Actor gradients are multiplied by `policy_weight`.
pub fn ppo_update<R: Rng + ?Sized>(
    model: &mut ActorCritic,
    batch: &[Transition],
    config: &PpoConfig,
    policy_weight: f64,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::Argument("empty PPO batch".into()));
    }
    let rewards: Vec<f64> = batch.iter().map(|t| t.extrinsic_reward + t.intrinsic_reward).collect();
    let values: Vec<f64> = batch.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    let (mut adv, targets) = compute_gae(&rewards, &values, &dones, 0.0, config.gamma, config.gae_lambda)?;
    normalize_advantages(&mut adv);

    let state_dim = batch[0].state.len();
    let action_dim = batch[0].action.len();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut clipped_total = 0usize;
    let mut samples_total = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let n = chunk.len();
            let mut states = Array2::zeros((n, state_dim));
            let mut actions = Array2::zeros((n, action_dim));
            for (r, &i) in chunk.iter().enumerate() {
                states.row_mut(r).assign(&batch[i].state);
                actions.row_mut(r).assign(&batch[i].action);
            }

            let old: Vec<f64> = chunk.iter().map(|&i| batch[i].log_prob).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let sg = actor_surrogate_grad(&model.actor, &states, &actions, &old, &a, config.clip_epsilon)?;
            let actor_loss = sg.loss;
            let clipped = sg.clipped;
            stats.mean_ratio += sg.new_log_probs.iter().zip(&old).map(|(n, o)| (n - o).exp()).sum::<f64>();

            let (v, ctape) = model.critic.forward(states.view())?;
            let mut grad_v = Array2::zeros((n, 1));
            let mut critic_loss = 0.0;
            for (r, &i) in chunk.iter().enumerate() {
                let diff = v[[r, 0]] - targets[i];
                critic_loss += diff * diff / n as f64;
                grad_v[[r, 0]] = 2.0 * diff / n as f64;
            }
            if !actor_loss.is_finite() || !critic_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "PPO loss not finite: actor {actor_loss}, critic {critic_loss}, minibatch {} of size {n}, \
                     advantages {:?}, old log-probs {:?}",
                    stats.minibatches, a, old
                )));
            }

            // A zero policy weight freezes the actor, weight decay included.
            if policy_weight != 0.0 {
                let mut ga = sg.grads;
                ga.scale(policy_weight);
                clip_grad_norm(&mut ga, config.actor_grad_clip);
                model.actor_opt.step(&mut model.actor, &ga)?;
            }
            let (gc, _) = model.critic.backward(&ctape, grad_v.view())?;
            model.critic_opt.step(&mut model.critic, &gc)?;

            if stats.minibatches == 0 {
                stats.first_clip_fraction = clipped as f64 / n as f64;
            }
            stats.actor_loss += actor_loss;
            stats.critic_loss += critic_loss;
            stats.minibatches += 1;
            clipped_total += clipped;
            samples_total += n;
        }
    }
    let m = stats.minibatches as f64;
    stats.actor_loss /= m;
    stats.critic_loss /= m;
    stats.mean_ratio /= samples_total as f64;
    stats.clip_fraction = clipped_total as f64 / samples_total as f64;
    Ok(stats)
}

/// Mean probability per action bit over a batch of states.
pub fn mean_bit_probability(actor: &Mlp, states: &Array2<f64>) -> Result<Array1<f64>> {
    let p = actor.predict(states.view())?.mapv(|z| clamp_prob(sigmoid(z)));
    Ok(p.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(actor.output_dim())))
}
