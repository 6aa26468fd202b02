//! Browser bindings: run a baseline episode for a Gantt view, compare the baselines over
//! many seeds, and explore the categorical target projection.

use ndarray::Array2;
use qcloud::agent::project_distribution;
use qcloud::baselines::{make_baseline, BaselineKind};
use qcloud::env::{EnvConfig, QCloudEnv};
use qcloud::nn::Support;
use qcloud::sim::episode_total_completion;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Bar {
    pub task: usize,
    pub app: String,
    pub qubits: u32,
    pub node: usize,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub reschedules: u32,
}

#[derive(Debug, Serialize)]
pub struct EpisodeView {
    pub policy: String,
    pub nodes: Vec<String>,
    pub bars: Vec<Bar>,
    pub total_completion_time: f64,
    pub reschedules: u64,
}

fn parse_policy(name: &str) -> Result<BaselineKind, String> {
    BaselineKind::parse(name).ok_or_else(|| format!("unknown policy {name:?}"))
}

fn env_for(n_tasks: usize) -> Result<QCloudEnv, String> {
    QCloudEnv::bundled(EnvConfig {
        n_tasks,
        ..EnvConfig::default()
    })
    .map_err(|e| e.to_string())
}

pub fn simulate(policy: &str, seed: u64, n_tasks: usize) -> Result<EpisodeView, String> {
    let kind = parse_policy(policy)?;
    let mut env = env_for(n_tasks)?;
    let mut p = make_baseline(kind, seed);
    env.reset(seed).map_err(|e| e.to_string())?;
    while !env.is_done() {
        let a = p.select(&env);
        env.step(a).map_err(|e| e.to_string())?;
    }
    let records = env.task_records();
    let totals = episode_total_completion(&records).map_err(|e| e.to_string())?;
    let bars = records
        .iter()
        .filter_map(|r| {
            Some(Bar {
                task: r.task_id,
                app: r.app.clone(),
                qubits: r.qubits,
                node: r.node_id?,
                arrival: r.arrival,
                start: r.start_time?,
                end: r.completion_time?,
                reschedules: r.replacement_count,
            })
        })
        .collect();
    Ok(EpisodeView {
        policy: kind.name().to_owned(),
        nodes: env
            .registry()
            .nodes
            .iter()
            .map(|n| n.name.clone())
            .collect(),
        bars,
        total_completion_time: totals.total_completion_time,
        reschedules: env.reschedule_count(),
    })
}

#[derive(Debug, Serialize)]
pub struct BaselineSummary {
    pub policy: String,
    pub mean_total_completion_time: f64,
    pub mean_reschedules: f64,
}

/// Mean totals of the three baselines on the same `episodes` seeds starting at `seed`.
pub fn compare(episodes: u32, seed: u64) -> Result<Vec<BaselineSummary>, String> {
    if episodes == 0 {
        return Err("episodes must be positive".into());
    }
    let mut env = env_for(EnvConfig::default().n_tasks)?;
    let mut out = Vec::new();
    for kind in [
        BaselineKind::Greedy,
        BaselineKind::RoundRobin,
        BaselineKind::Random,
    ] {
        let (mut total, mut resched) = (0.0, 0.0);
        for s in seed..seed + u64::from(episodes) {
            let mut p = make_baseline(kind, s);
            env.reset(s).map_err(|e| e.to_string())?;
            while !env.is_done() {
                let a = p.select(&env);
                env.step(a).map_err(|e| e.to_string())?;
            }
            let t = episode_total_completion(&env.task_records()).map_err(|e| e.to_string())?;
            total += t.total_completion_time;
            resched += env.reschedule_count() as f64;
        }
        out.push(BaselineSummary {
            policy: kind.name().to_owned(),
            mean_total_completion_time: total / f64::from(episodes),
            mean_reschedules: resched / f64::from(episodes),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ProjectionView {
    pub support: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Projects a distribution over the default 10-atom support shifted by `reward` and
/// scaled by `discount`. `peak` in `[0, 1)` tilts the input towards the top atom.
pub fn projection(
    reward: f64,
    discount: f64,
    done: bool,
    peak: f64,
) -> Result<ProjectionView, String> {
    if !(reward.is_finite() && (0.0..=1.0).contains(&discount) && (0.0..1.0).contains(&peak)) {
        return Err("reward must be finite, discount in [0, 1], peak in [0, 1)".into());
    }
    let support = Support::new(-10.0, 10.0, 10).map_err(|e| e.to_string())?;
    let raw: Vec<f64> = (0..10).map(|k| (1.0 - peak).powi(9 - k)).collect();
    let sum: f64 = raw.iter().sum();
    let before: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    let probs = Array2::from_shape_vec((1, 10), before.clone()).expect("one row");
    let m = project_distribution(probs.view(), &[reward], &[done], &[discount], &support);
    Ok(ProjectionView {
        support: support.values(),
        before,
        after: m.row(0).to_vec(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulateEpisode)]
pub fn simulate_episode(policy: &str, seed: u32, n_tasks: u32) -> Result<String, JsValue> {
    to_js(simulate(policy, u64::from(seed), n_tasks as usize))
}

#[wasm_bindgen(js_name = compareBaselines)]
pub fn compare_baselines(episodes: u32, seed: u32) -> Result<String, JsValue> {
    to_js(compare(episodes, u64::from(seed)))
}

#[wasm_bindgen(js_name = projectTarget)]
pub fn project_target(
    reward: f64,
    discount: f64,
    done: bool,
    peak: f64,
) -> Result<String, JsValue> {
    to_js(projection(reward, discount, done, peak))
}
