use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::agent::{PolicyCheckpoint, SeedRange};
use crate::baselines::{make_baseline, BaselineKind, PlacementPolicy};
use crate::env::QCloudEnv;
use crate::error::{Error, Result};
use crate::sim::{episode_total_completion, TaskRecord};
use crate::workload::EpisodeWorkload;

/// A policy as named on the command line.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Baseline(BaselineKind),
    Trained(Box<PolicyCheckpoint>),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Baseline(k) => k.name(),
            PolicySpec::Trained(_) => "drlq",
        }
    }

    /// A fresh policy instance for one episode.
    pub fn instantiate(
        &self,
        policy_seed: u64,
        episode_seed: u64,
    ) -> Result<Box<dyn PlacementPolicy + Send>> {
        Ok(match self {
            PolicySpec::Baseline(k) => {
                // Distinct, reproducible stream per (policy seed, episode).
                let seed = policy_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ episode_seed;
                make_baseline(*k, seed)
            }
            PolicySpec::Trained(ck) => Box::new(ck.policy()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub seed: u64,
    pub total_completion_time: f64,
    pub reschedule_count: u64,
    pub failed_count: usize,
    pub steps: usize,
    pub tasks: Vec<TaskRecord>,
}

/// Plays one episode of `workload` with `policy`.
pub fn run_episode(
    env: &mut QCloudEnv,
    policy: &mut dyn PlacementPolicy,
    workload: EpisodeWorkload,
    episode: usize,
) -> Result<EpisodeReport> {
    let seed = workload.seed;
    env.reset_with_workload(workload)?;
    while !env.is_done() {
        let action = policy.select(env);
        env.step(action)?;
    }
    let tasks = env.task_records();
    let totals = episode_total_completion(&tasks)?;
    Ok(EpisodeReport {
        episode,
        seed,
        total_completion_time: totals.total_completion_time,
        reschedule_count: env.reschedule_count(),
        failed_count: totals.failed,
        steps: env.steps(),
        tasks,
    })
}

/// Refuses evaluation seeds a trained policy has already seen, unless allowed.
pub fn check_seed_disjointness(
    spec: &PolicySpec,
    seeds: &[u64],
    allow_overlap: bool,
) -> Result<()> {
    let PolicySpec::Trained(ck) = spec else {
        return Ok(());
    };
    let (Some(&lo), Some(&hi)) = (seeds.iter().min(), seeds.iter().max()) else {
        return Ok(());
    };
    let eval = SeedRange {
        start: lo,
        end: hi + 1,
    };
    let clash = seeds.iter().any(|&s| ck.train_seeds.contains(s));
    if clash && !allow_overlap {
        return Err(Error::usage(format!(
            "evaluation seeds {eval:?} overlap training seeds {:?}; pass --allow-overlap to force",
            ck.train_seeds
        )));
    }
    Ok(())
}

fn check_normalization(spec: &PolicySpec, env: &QCloudEnv) -> Result<()> {
    if let PolicySpec::Trained(ck) = spec {
        if ck.normalization != env.normalization() {
            return Err(Error::usage(
                "checkpoint normalization does not match this registry/dataset/window",
            ));
        }
        if ck.network.config.input_dim != env.state_dim()
            || ck.network.config.num_actions != env.num_actions()
        {
            return Err(Error::usage(
                "checkpoint network shape does not match the environment",
            ));
        }
    }
    Ok(())
}

/// Evaluates a policy on explicit workloads. Episodes run in parallel, each with its own
/// environment and a fresh policy instance; results come back in episode order.
pub fn evaluate_workloads(
    cfg: &ExperimentConfig,
    spec: &PolicySpec,
    workloads: &[EpisodeWorkload],
) -> Result<Vec<EpisodeReport>> {
    let template = cfg.build_env()?;
    check_normalization(spec, &template)?;
    let mut reports = workloads
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut env = template.clone();
            let mut policy = spec.instantiate(cfg.eval.policy_seed, w.seed)?;
            run_episode(&mut env, policy.as_mut(), w.clone(), i)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by_key(|r| r.episode);
    Ok(reports)
}

/// Evaluates on the configured evaluation seeds.
pub fn evaluate(
    cfg: &ExperimentConfig,
    spec: &PolicySpec,
    allow_overlap: bool,
) -> Result<Vec<EpisodeReport>> {
    let seeds = cfg.eval_seeds();
    check_seed_disjointness(spec, &seeds, allow_overlap)?;
    let env = cfg.build_env()?;
    let workloads = seeds
        .iter()
        .map(|&s| env.workload(s))
        .collect::<Result<Vec<_>>>()?;
    evaluate_workloads(cfg, spec, &workloads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub mean_total_completion_time: f64,
    pub sd_total_completion_time: f64,
    pub mean_reschedules: f64,
    pub sd_reschedules: f64,
    pub mean_failed: f64,
    pub mean_steps: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(reports: &[EpisodeReport]) -> Summary {
    let totals: Vec<f64> = reports.iter().map(|r| r.total_completion_time).collect();
    let resched: Vec<f64> = reports.iter().map(|r| r.reschedule_count as f64).collect();
    let failed: Vec<f64> = reports.iter().map(|r| r.failed_count as f64).collect();
    let steps: Vec<f64> = reports.iter().map(|r| r.steps as f64).collect();
    let (mt, st) = mean_sd(&totals);
    let (mr, sr) = mean_sd(&resched);
    Summary {
        episodes: reports.len(),
        mean_total_completion_time: mt,
        sd_total_completion_time: st,
        mean_reschedules: mr,
        sd_reschedules: sr,
        mean_failed: mean_sd(&failed).0,
        mean_steps: mean_sd(&steps).0,
    }
}

#[derive(Debug, Serialize)]
struct EpisodeRow<'a> {
    row: &'a str,
    episode: String,
    seed: String,
    total_completion_time: f64,
    total_completion_time_sd: Option<f64>,
    reschedule_count: f64,
    reschedule_count_sd: Option<f64>,
    failed_count: f64,
    steps: f64,
}

/// Per-episode CSV: one `episode` row per report followed by one `summary` row holding
/// means, with standard deviations in the `_sd` columns.
pub fn write_episode_csv<W: Write>(w: W, reports: &[EpisodeReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(EpisodeRow {
            row: "episode",
            episode: r.episode.to_string(),
            seed: r.seed.to_string(),
            total_completion_time: r.total_completion_time,
            total_completion_time_sd: None,
            reschedule_count: r.reschedule_count as f64,
            reschedule_count_sd: None,
            failed_count: r.failed_count as f64,
            steps: r.steps as f64,
        })?;
    }
    let s = summarize(reports);
    out.serialize(EpisodeRow {
        row: "summary",
        episode: String::new(),
        seed: String::new(),
        total_completion_time: s.mean_total_completion_time,
        total_completion_time_sd: Some(s.sd_total_completion_time),
        reschedule_count: s.mean_reschedules,
        reschedule_count_sd: Some(s.sd_reschedules),
        failed_count: s.mean_failed,
        steps: s.mean_steps,
    })?;
    out.flush().map_err(|e| Error::io("<episode csv>", e))
}

/// One row per task per episode.
pub fn write_task_csv<W: Write>(w: W, reports: &[EpisodeReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "episode",
        "task_id",
        "app",
        "qubits",
        "arrival",
        "status",
        "replacement_count",
        "node_id",
        "start_time",
        "exec_time",
        "completion_time",
        "total_time",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        for t in &r.tasks {
            let status = serde_json::to_value(t.status)?;
            out.write_record([
                r.episode.to_string(),
                t.task_id.to_string(),
                t.app.clone(),
                t.qubits.to_string(),
                t.arrival.to_string(),
                status.as_str().unwrap_or_default().to_owned(),
                t.replacement_count.to_string(),
                t.node_id.map(|n| n.to_string()).unwrap_or_default(),
                opt(t.start_time),
                opt(t.exec_time),
                opt(t.completion_time),
                opt(t.total_time),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<task csv>", e))
}
