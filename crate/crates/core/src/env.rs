//! Placement MDP on top of the simulator.
//!
//! One step places the current task. Tasks are presented in arrival order; a rejected
//! task is presented again at the same clock until it is placed or exceeds
//! `max_reschedules`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{DataCenter, PlacementOutcome, QTask, TaskRecord, TaskStatus};
use crate::workload::{
    generate_episode_workload, max_base_depth, BackendRegistry, CircuitRecord, EpisodeWorkload,
};

pub const NODE_FEATURES: usize = 4;
pub const TASK_FEATURES: usize = 3;
pub const QUBIT_SCALE: f64 = 128.0;
pub const SHOT_SCALE: f64 = 8192.0;
pub const LOG2_QV_SCALE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Base reward of a failed placement; must be negative.
    pub failure_penalty: f64,
    /// Scales the replacement count in both reward branches.
    pub penalty_factor: f64,
    pub gamma: f64,
    pub n_tasks: usize,
    /// Arrival window in seconds.
    pub window: f64,
    pub max_reschedules: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            failure_penalty: -10.0,
            penalty_factor: 0.1,
            gamma: 0.99,
            n_tasks: 60,
            window: 60.0,
            max_reschedules: 10,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.failure_penalty < 0.0) {
            return Err(Error::usage("failure_penalty must be negative"));
        }
        if !(self.penalty_factor >= 0.0) {
            return Err(Error::usage("penalty_factor must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::usage("gamma must lie in [0, 1]"));
        }
        if self.n_tasks == 0 || !(self.window > 0.0) || self.max_reschedules == 0 {
            return Err(Error::usage(
                "n_tasks, window and max_reschedules must be positive",
            ));
        }
        Ok(())
    }
}

/// Reward for a task placed successfully after `kappa` earlier rejections.
pub fn success_reward(total_time: f64, kappa: u32, alpha: f64) -> f64 {
    (1.0 / total_time) * (1.0 - alpha * f64::from(kappa))
}

/// Reward for a rejected placement; `kappa` already counts this rejection.
pub fn failure_reward(kappa: u32, penalty: f64, alpha: f64) -> f64 {
    penalty * (1.0 + alpha * f64::from(kappa))
}

/// Normalization constants, frozen when the environment is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub max_d1cps: f64,
    pub max_depth: f64,
    pub window: f64,
}

impl Normalization {
    pub fn new(registry: &BackendRegistry, records: &[CircuitRecord], window: f64) -> Self {
        Normalization {
            max_d1cps: registry.max_d1cps(),
            max_depth: f64::from(max_base_depth(records)),
            window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// FNV-1a over the bit patterns of the entries.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

pub fn state_dim(num_nodes: usize) -> usize {
    num_nodes * NODE_FEATURES + TASK_FEATURES
}

/// Encodes node features followed by the current task's features. With no current task
/// (terminal state) the task slots are zero.
pub fn encode_state(dc: &DataCenter, task: Option<&QTask>, norm: &Normalization) -> StateVector {
    let reg = dc.registry();
    let mut v = Vec::with_capacity(state_dim(reg.len()));
    for (i, node) in reg.nodes.iter().enumerate() {
        v.push(f64::from(node.qubits) / QUBIT_SCALE);
        v.push(f64::from(node.quantum_volume).log2() / LOG2_QV_SCALE);
        v.push(node.d1cps / norm.max_d1cps);
        v.push(dc.backlog(i) / norm.window);
    }
    match task {
        Some(t) => {
            v.push(f64::from(t.qubits) / QUBIT_SCALE);
            v.push(f64::from(t.base_depth) / norm.max_depth);
            v.push(f64::from(t.shots) / SHOT_SCALE);
        }
        None => v.extend([0.0; TASK_FEATURES]),
    }
    StateVector(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub task_id: usize,
    /// The node the action pointed at, whether or not the placement succeeded.
    pub attempted_node: usize,
    pub placed_node: Option<usize>,
    pub kappa: u32,
    pub total_time: Option<f64>,
    pub failed_permanently: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: StateVector,
    pub reward: f64,
    /// The task reached a terminal status (placed, or given up on).
    pub task_done: bool,
    pub episode_done: bool,
    pub info: StepInfo,
}

/// One line of the episode trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub state_hash: String,
    pub action: usize,
    pub reward: f64,
    pub kappa: u32,
    pub task_id: usize,
    pub node_id: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct QCloudEnv {
    registry: Arc<BackendRegistry>,
    records: Arc<Vec<CircuitRecord>>,
    config: EnvConfig,
    norm: Normalization,
    dc: Option<DataCenter>,
    seed: u64,
    current: usize,
    steps: usize,
    episode_reward: f64,
    done: bool,
    trace: Vec<TraceRecord>,
}

impl QCloudEnv {
    pub fn new(
        registry: Arc<BackendRegistry>,
        records: Arc<Vec<CircuitRecord>>,
        config: EnvConfig,
    ) -> Result<Self> {
        config.validate()?;
        if records.is_empty() {
            return Err(Error::usage(
                "environment needs at least one circuit record",
            ));
        }
        let norm = Normalization::new(&registry, &records, config.window);
        Ok(QCloudEnv {
            registry,
            records,
            config,
            norm,
            dc: None,
            seed: 0,
            current: 0,
            steps: 0,
            episode_reward: 0.0,
            done: true,
            trace: Vec::new(),
        })
    }

    /// Environment over the bundled registry and circuit dataset.
    pub fn bundled(config: EnvConfig) -> Result<Self> {
        Self::new(
            Arc::new(BackendRegistry::bundled()),
            Arc::new(crate::workload::bundled_circuits()),
            config,
        )
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    pub fn records(&self) -> &[CircuitRecord] {
        &self.records
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn num_actions(&self) -> usize {
        self.registry.len()
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.registry.len())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn data_center(&self) -> Option<&DataCenter> {
        self.dc.as_ref()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// The task awaiting a placement decision.
    pub fn current_task(&self) -> Option<&QTask> {
        if self.done {
            return None;
        }
        self.dc.as_ref().and_then(|dc| dc.tasks().get(self.current))
    }

    pub fn workload(&self, seed: u64) -> Result<EpisodeWorkload> {
        generate_episode_workload(&self.records, seed, self.config.n_tasks, self.config.window)
    }

    pub fn reset(&mut self, seed: u64) -> Result<StateVector> {
        let w = self.workload(seed)?;
        self.reset_with_workload(w)
    }

    /// Starts an episode from an explicit workload (e.g. a replayed dump).
    pub fn reset_with_workload(&mut self, workload: EpisodeWorkload) -> Result<StateVector> {
        if workload.tasks.is_empty() {
            return Err(Error::usage("workload has no tasks"));
        }
        let mut dc = DataCenter::new(self.registry.clone(), workload.tasks)?;
        dc.advance_to(dc.tasks()[0].arrival);
        self.dc = Some(dc);
        self.seed = workload.seed;
        self.current = 0;
        self.steps = 0;
        self.episode_reward = 0.0;
        self.done = false;
        self.trace.clear();
        Ok(self.state())
    }

    pub fn state(&self) -> StateVector {
        match &self.dc {
            Some(dc) => encode_state(dc, self.current_task(), &self.norm),
            None => StateVector(vec![0.0; self.state_dim()]),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::usage(
                "step called on a finished episode; call reset",
            ));
        }
        if action >= self.registry.len() {
            return Err(Error::usage(format!(
                "action {action} out of range for {} nodes",
                self.registry.len()
            )));
        }
        let state_hash = format!("{:016x}", self.state().hash());
        let alpha = self.config.penalty_factor;
        let dc = self.dc.as_mut().expect("episode active");
        let task_id = self.current;
        let now = dc.clock();

        let outcome = dc.try_place(task_id, action, now)?;
        let (reward, task_done, info) = match outcome {
            PlacementOutcome::Accepted(p) => {
                let kappa = dc.task(task_id)?.replacement_count;
                let info = StepInfo {
                    task_id,
                    attempted_node: action,
                    placed_node: Some(action),
                    kappa,
                    total_time: Some(p.total_time),
                    failed_permanently: false,
                };
                (success_reward(p.total_time, kappa, alpha), true, info)
            }
            PlacementOutcome::Rejected(_) => {
                let kappa = dc.bump_replacement(task_id)?;
                let give_up = kappa > self.config.max_reschedules;
                if give_up {
                    dc.fail_permanently(task_id)?;
                }
                let info = StepInfo {
                    task_id,
                    attempted_node: action,
                    placed_node: None,
                    kappa,
                    total_time: None,
                    failed_permanently: give_up,
                };
                (
                    failure_reward(kappa, self.config.failure_penalty, alpha),
                    give_up,
                    info,
                )
            }
        };

        if task_done {
            self.current += 1;
            if let Some(next) = dc.tasks().get(self.current) {
                let t = next.arrival.max(dc.clock());
                dc.advance_to(t);
            } else {
                dc.drain();
                self.done = true;
            }
        }
        self.steps += 1;
        self.episode_reward += reward;
        self.trace.push(TraceRecord {
            state_hash,
            action,
            reward,
            kappa: info.kappa,
            task_id,
            node_id: info.placed_node,
        });
        Ok(StepResult {
            next_state: self.state(),
            reward,
            task_done,
            episode_done: self.done,
            info,
        })
    }

    /// Per-task records of the current (or last) episode.
    pub fn task_records(&self) -> Vec<TaskRecord> {
        self.dc
            .as_ref()
            .map(DataCenter::task_records)
            .unwrap_or_default()
    }

    /// Total rejected placements in the current episode.
    pub fn reschedule_count(&self) -> u64 {
        self.dc
            .as_ref()
            .map(|dc| {
                dc.tasks()
                    .iter()
                    .map(|t| u64::from(t.replacement_count))
                    .sum()
            })
            .unwrap_or(0)
    }

    pub fn failed_count(&self) -> usize {
        self.dc
            .as_ref()
            .map(|dc| {
                dc.tasks()
                    .iter()
                    .filter(|t| t.status == TaskStatus::FailedPermanent)
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}
