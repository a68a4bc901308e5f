//! Random network distillation: a trainable predictor chases a frozen random
//! target, and its error on an input is that input's novelty bonus.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::InputMode;
use crate::nn::{clip_grad_norm, AdamW, AdamWConfig, Mlp};

/// Floor of the normalising standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RndConfig {
    pub mode: InputMode,
    pub eta0: f64,
    pub alpha: f64,
    pub warmup_episodes: u64,
    /// Number of recent batches whose errors set the normalising std.
    pub moving_average_period: usize,
    pub update_rounds: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Environment steps over which η is annealed.
    pub anneal_span: u64,
    pub hidden: usize,
    pub normalize: bool,
}

impl RndConfig {
    pub fn das() -> Self {
        Self {
            mode: InputMode::Das,
            eta0: 5.0,
            alpha: 0.001,
            warmup_episodes: 100,
            moving_average_period: 2,
            update_rounds: 5,
            lr: 1e-3,
            grad_clip: 10.0,
            anneal_span: 20_000,
            hidden: 524,
            normalize: true,
        }
    }

    pub fn utt() -> Self {
        Self {
            mode: InputMode::Utt,
            eta0: 1.0,
            warmup_episodes: 200,
            moving_average_period: 10,
            update_rounds: 1,
            anneal_span: 50_000,
            ..Self::das()
        }
    }

    pub fn for_mode(mode: InputMode) -> Self {
        match mode {
            InputMode::Das => Self::das(),
            InputMode::Utt => Self::utt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta0 <= 0.0 || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("RND needs eta0 > 0 and alpha in (0, 1)".into()));
        }
        if self.moving_average_period == 0 || self.update_rounds == 0 || self.hidden == 0 {
            return Err(Error::Config("RND counts must be at least 1".into()));
        }
        if self.lr <= 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Config("RND lr and gradient clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RndModel {
    pub config: RndConfig,
    pub target: Mlp,
    pub predictor: Mlp,
    pub optimizer: AdamW,
    pub eta: f64,
    /// Annealing steps applied so far.
    pub anneal_steps: u64,
    pub episodes_seen: u64,
    /// Raw errors of the most recent batches.
    window: VecDeque<Vec<f64>>,
    target_checksum: String,
}

impl RndModel {
    /// Target and predictor are drawn independently from `rng`.
    pub fn new<R: Rng + ?Sized>(config: RndConfig, input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let sizes = [input_dim, config.hidden, output_dim];
        let target = Mlp::new(&sizes, rng)?;
        let predictor = Mlp::new(&sizes, rng)?;
        let optimizer = AdamW::new(&predictor, AdamWConfig::with_lr(config.lr));
        let target_checksum = target.checksum();
        Ok(Self {
            eta: config.eta0,
            config,
            target,
            predictor,
            optimizer,
            anneal_steps: 0,
            episodes_seen: 0,
            window: VecDeque::new(),
            target_checksum,
        })
    }

    pub fn warmed_up(&self) -> bool {
        self.episodes_seen >= self.config.warmup_episodes
    }

    /// Checksum of the target parameters taken at construction.
    pub fn initial_target_checksum(&self) -> &str {
        &self.target_checksum
    }

    pub fn target_intact(&self) -> bool {
        self.target.checksum() == self.target_checksum
    }

    /// `‖f′(x) − f(x)‖²` per row of `inputs`.
    pub fn raw_errors(&self, inputs: &Array2<f64>) -> Result<Vec<f64>> {
        let t = self.target.predict(inputs.view())?;
        let p = self.predictor.predict(inputs.view())?;
        Ok((t - p).mapv(|d| d * d).sum_axis(Axis(1)).to_vec())
    }

    pub fn raw_error(&self, input: &Array1<f64>) -> Result<f64> {
        Ok(self.raw_errors(&input.clone().insert_axis(Axis(0)))?[0])
    }

    /// Standard deviation of the errors in the window, floored.
    pub fn error_std(&self) -> f64 {
        let all: Vec<f64> = self.window.iter().flatten().copied().collect();
        if all.len() < 2 {
            return 1.0;
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        (all.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt().max(STD_FLOOR)
    }

    /// Adds one batch of raw errors to the normalisation window.
    pub fn observe_errors(&mut self, errors: &[f64]) {
        self.window.push_back(errors.to_vec());
        while self.window.len() > self.config.moving_average_period {
            self.window.pop_front();
        }
    }

    /// `η · e / σ` (or `η · e` without normalisation). Zero during warm-up.
    pub fn intrinsic_reward(&self, raw_error: f64) -> f64 {
        if !self.warmed_up() {
            return 0.0;
        }
        let scale = if self.config.normalize { self.error_std() } else { 1.0 };
        self.eta * raw_error / scale
    }

    /// One annealing step, `η ← (1 − α)η`, while inside the span.
    pub fn anneal_eta(&mut self) -> f64 {
        if self.anneal_steps < self.config.anneal_span {
            self.eta *= 1.0 - self.config.alpha;
            self.anneal_steps += 1;
        }
        self.eta
    }

    /// Rewards for one collected batch, in step order: records the batch
    /// errors, then pays each step at the current η and anneals once per
    /// step after warm-up. `episodes` is the number of dialogues in the batch.
    pub fn batch_rewards(&mut self, inputs: &Array2<f64>, episodes: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let errors = self.raw_errors(inputs)?;
        self.observe_errors(&errors);
        let rewards = errors
            .iter()
            .map(|&e| {
                let r = self.intrinsic_reward(e);
                if self.warmed_up() {
                    self.anneal_eta();
                }
                r
            })
            .collect();
        self.episodes_seen += episodes;
        Ok((rewards, errors))
    }

    /// `update_rounds` full-batch predictor steps; returns the mean loss of
    /// the final round, measured before its step.
    pub fn update(&mut self, inputs: &Array2<f64>) -> Result<f64> {
        if inputs.nrows() == 0 {
            return Err(Error::Argument("empty RND batch".into()));
        }
        let n = inputs.nrows() as f64;
        let target = self.target.predict(inputs.view())?;
        let mut loss = 0.0;
        for _ in 0..self.config.update_rounds {
            let (pred, tape) = self.predictor.forward(inputs.view())?;
            let diff = &pred - &target;
            loss = diff.mapv(|d| d * d).sum() / n;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("RND loss {loss} with eta {}", self.eta)));
            }
            let (mut g, _) = self.predictor.backward(&tape, (diff * (2.0 / n)).view())?;
            clip_grad_norm(&mut g, self.config.grad_clip);
            self.optimizer.step(&mut self.predictor, &g)?;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn model(config: RndConfig) -> RndModel {
        RndModel::new(config, 6, 4, &mut rng_for(1, "rnd-test", 0)).unwrap()
    }

    fn inputs(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_for(seed, "rnd-test-input", 0);
        Array2::from_shape_fn((n, 6), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn cloned_predictor_has_zero_error() {
        let mut m = model(RndConfig { warmup_episodes: 0, ..RndConfig::das() });
        m.predictor = m.target.clone();
        let e = m.raw_error(&inputs(1, 0).row(0).to_owned()).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(m.intrinsic_reward(e), 0.0);
    }

    #[test]
    fn unnormalized_reward_is_eta_times_error() {
        let mut m = model(RndConfig { warmup_episodes: 0, normalize: false, ..RndConfig::utt() });
        m.eta = 1.0;
        assert_eq!(m.intrinsic_reward(0.25), 0.25);
    }

    #[test]
    fn warm_up_pays_nothing_and_does_not_anneal() {
        let mut m = model(RndConfig { warmup_episodes: 3, ..RndConfig::das() });
        let (r, e) = m.batch_rewards(&inputs(5, 1), 2).unwrap();
        assert!(r.iter().all(|&x| x == 0.0) && e.iter().all(|&x| x > 0.0));
        assert_eq!(m.eta, 5.0);
        m.batch_rewards(&inputs(5, 2), 2).unwrap();
        let (r, _) = m.batch_rewards(&inputs(5, 3), 2).unwrap();
        assert!(r.iter().all(|&x| x > 0.0));
        assert_eq!(m.anneal_steps, 5);
    }

    #[test]
    fn annealing_follows_recurrence_and_stops() {
        let mut m = model(RndConfig { anneal_span: 3, ..RndConfig::utt() });
        assert_eq!(m.anneal_eta(), 0.999);
        m.anneal_eta();
        m.anneal_eta();
        let frozen = m.eta;
        assert_eq!(m.anneal_eta(), frozen);
        m.eta = 0.0;
        m.anneal_steps = 0;
        assert_eq!(m.anneal_eta(), 0.0);
    }

    #[test]
    fn repeated_input_error_collapses() {
        let mut m = model(RndConfig::das());
        let x = inputs(1, 4);
        let before = m.raw_errors(&x).unwrap()[0];
        for _ in 0..100 {
            m.update(&x).unwrap();
        }
        assert!(m.raw_errors(&x).unwrap()[0] < 0.1 * before);
        assert!(m.target_intact());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut m = model(RndConfig::das());
        assert!(matches!(m.update(&Array2::zeros((0, 6))), Err(Error::Argument(_))));
    }

    #[test]
    fn window_keeps_recent_batches() {
        let mut m = model(RndConfig { moving_average_period: 2, ..RndConfig::das() });
        m.observe_errors(&[100.0, 300.0]);
        m.observe_errors(&[1.0, 3.0]);
        m.observe_errors(&[1.0, 3.0]);
        assert_eq!(m.error_std(), 1.0);
        assert_eq!(model(RndConfig::das()).error_std(), 1.0);
    }
}
