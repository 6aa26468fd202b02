use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::agent::{PolicyCheckpoint, RainbowAgent, SeedRange, Transition};
use crate::error::{Error, Result};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    /// Environment steps taken so far.
    pub steps: u64,
    /// Episodes finished during this iteration.
    pub episodes: usize,
    pub mean_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    /// Mean learn-step loss over this iteration.
    pub loss: Option<f64>,
}

pub struct TrainOutcome {
    pub agent: RainbowAgent,
    pub log: Vec<IterationLog>,
    pub train_seeds: SeedRange,
    pub checkpoint: PolicyCheckpoint,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Runs `iterations * steps_per_iteration` environment steps with one learn call per
/// step once the replay buffer is warm. `on_iteration` sees each log row as it is made.
pub fn train(
    cfg: &ExperimentConfig,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = cfg.build_env()?;
    let mut agent = RainbowAgent::new(cfg.agent.clone(), env.state_dim(), env.num_actions())?;
    agent.sync_target();

    let mut seed = cfg.train.seed_start;
    let mut state = env.reset(seed)?;
    let mut total_steps = 0u64;
    let mut log = Vec::with_capacity(cfg.train.iterations);

    for iter in 1..=cfg.train.iterations {
        let mut rewards = Vec::new();
        let mut lengths = Vec::new();
        let mut losses = Vec::new();
        for _ in 0..cfg.train.steps_per_iteration {
            if !agent.is_warm() {
                agent.resample_noise();
            }
            let action = agent.act(state.as_slice())?;
            let step = env.step(action)?;
            agent.observe(Transition {
                state: state.0,
                action,
                reward: step.reward,
                next_state: step.next_state.0.clone(),
                done: step.task_done,
                n_used: 1,
            });
            total_steps += 1;
            if step.episode_done {
                rewards.push(env.episode_reward());
                lengths.push(env.steps() as f64);
                agent.end_episode();
                seed += 1;
                state = env.reset(seed)?;
            } else {
                state = step.next_state;
            }
            if agent.is_warm() {
                let loss = agent.learn().map_err(|e| match e {
                    Error::Training(msg) => {
                        Error::Training(format!("iteration {iter}, step {total_steps}: {msg}"))
                    }
                    other => other,
                })?;
                losses.push(loss);
            }
        }
        let row = IterationLog {
            iter,
            steps: total_steps,
            episodes: rewards.len(),
            mean_episode_reward: mean(&rewards),
            mean_episode_length: mean(&lengths),
            loss: mean(&losses),
        };
        on_iteration(&row);
        log.push(row);
    }

    let train_seeds = SeedRange {
        start: cfg.train.seed_start,
        end: seed + 1,
    };
    let checkpoint = agent.checkpoint(&cfg.env, env.normalization(), train_seeds);
    Ok(TrainOutcome {
        agent,
        log,
        train_seeds,
        checkpoint,
    })
}

pub fn write_train_log<W: Write>(mut w: W, log: &[IterationLog]) -> Result<()> {
    for row in log {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<train log>", e))?;
    }
    Ok(())
}

/// Mean episode reward over the final quarter of iterations (at least one iteration).
pub fn final_quarter_reward(log: &[IterationLog]) -> Option<f64> {
    let k = log.len().div_ceil(4).max(1);
    let tail: Vec<f64> = log
        .iter()
        .rev()
        .take(k)
        .filter_map(|r| r.mean_episode_reward)
        .collect();
    mean(&tail)
}
