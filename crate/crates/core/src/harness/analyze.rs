use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{compute_metrics, DialogueEnv, EpisodeLog, Metrics, World};
use crate::error::{Error, Result};
use crate::harness::policies::DialoguePolicy;
use crate::rng::derive_seed;

/// Goal seed of evaluation dialogue `index`.
pub fn eval_goal_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, "eval-goal", index)
}

/// Runs one dialogue to the end.
pub fn run_dialogue(env: &mut DialogueEnv, policy: &mut dyn DialoguePolicy, goal_seed: u64) -> Result<EpisodeLog> {
    let world = env.world().clone();
    let mut belief = env.reset(goal_seed)?;
    loop {
        let acts = policy.act(&belief, &world)?;
        let r = env.step(&acts)?;
        if r.done {
            return Ok(env.log().expect("dialogue in progress").clone());
        }
        belief = r.next_state;
    }
}

/// `n_eval` dialogues on fresh goals seeded from `seed`.
pub fn analyze_with_logs(
    policy: &mut dyn DialoguePolicy,
    world: &Arc<World>,
    n_eval: usize,
    seed: u64,
) -> Result<(Metrics, Vec<EpisodeLog>)> {
    if n_eval == 0 {
        return Err(Error::Argument("n_eval must be at least 1".into()));
    }
    let mut env = DialogueEnv::new(world.clone());
    let mut logs = Vec::with_capacity(n_eval);
    for i in 0..n_eval as u64 {
        policy.begin_dialogue(i);
        logs.push(run_dialogue(&mut env, policy, eval_goal_seed(seed, i))?);
    }
    Ok((compute_metrics(&logs)?, logs))
}

pub fn analyze(policy: &mut dyn DialoguePolicy, world: &Arc<World>, n_eval: usize, seed: u64) -> Result<Metrics> {
    Ok(analyze_with_logs(policy, world, n_eval, seed)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n_eval: usize,
    pub repeats: usize,
    pub mean_success: f64,
    /// Sample standard deviation over the repeats.
    pub std_success: f64,
    /// `√(p(1−p)/n_eval)` at the mean success rate.
    pub binomial_std: f64,
}

/// For each size, `repeats` evaluations on disjoint goal seeds.
pub fn eval_variance_study(
    policy: &mut dyn DialoguePolicy,
    world: &Arc<World>,
    n_evals: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if repeats < 2 {
        return Err(Error::Argument("variance study needs at least 2 repeats".into()));
    }
    n_evals
        .iter()
        .map(|&n| {
            let rates = (0..repeats as u64)
                .map(|r| {
                    let s = derive_seed(seed, &format!("variance-{n}"), r);
                    analyze(policy, world, n, s).map(|m| m.success_rate)
                })
                .collect::<Result<Vec<f64>>>()?;
            let k = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / k;
            let var = rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            Ok(VarianceRow {
                n_eval: n,
                repeats,
                mean_success: mean,
                std_success: var.sqrt(),
                binomial_std: (mean * (1.0 - mean) / n as f64).sqrt(),
            })
        })
        .collect()
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut out = String::from("n_eval,repeats,mean_success,std_success,binomial_std\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.n_eval, r.repeats, r.mean_success, r.std_success, r.binomial_std)
            .expect("writing to a string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::policies::{EmptyPolicy, OraclePolicy};

    #[test]
    fn oracle_and_empty_bounds() {
        let world = World::standard().unwrap();
        let m = analyze(&mut OraclePolicy, &world, 100, 1).unwrap();
        assert_eq!((m.success_rate, m.complete_rate), (1.0, 1.0));
        let m = analyze(&mut EmptyPolicy, &world, 50, 1).unwrap();
        assert_eq!((m.success_rate, m.complete_rate), (0.0, 0.0));
    }

    #[test]
    fn single_dialogue_rates_are_binary() {
        let world = World::standard().unwrap();
        let m = analyze(&mut OraclePolicy, &world, 1, 9).unwrap();
        assert!([0.0, 1.0].contains(&m.success_rate));
        assert!(analyze(&mut OraclePolicy, &world, 0, 9).is_err());
    }

    #[test]
    fn deterministic_policy_has_zero_spread_on_a_perfect_score() {
        let world = World::standard().unwrap();
        let rows = eval_variance_study(&mut OraclePolicy, &world, &[10, 20], 3, 0).unwrap();
        assert!(rows.iter().all(|r| r.std_success == 0.0 && r.mean_success == 1.0));
        assert!(variance_csv(&rows).starts_with("n_eval,repeats,mean_success,std_success,binomial_std\n10,3,1,0,0\n"));
    }
}
