//! Rainbow-style placement agent: categorical value distributions, double-Q target
//! selection, n-step returns, prioritized replay and noisy-layer exploration.

mod nstep;
mod projection;
mod replay;

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use nstep::NStepBuffer;
pub use projection::project_distribution;
pub use replay::{PrioritizedReplay, SampledBatch, SumTree};

use crate::baselines::PlacementPolicy;
use crate::env::{EnvConfig, Normalization, QCloudEnv};
use crate::error::{Error, Result};
use crate::nn::{
    gather_actions, Adam, AdamConfig, CategoricalQNet, ParamFile, QNetConfig, Support,
};

/// One (possibly n-step aggregated) experience.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Task terminality as reported by the environment.
    pub done: bool,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub batch_size: usize,
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub noisy: bool,
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    /// Learn steps over which the importance-sampling exponent is annealed.
    pub per_beta_steps: u64,
    pub priority_floor: f64,
    /// Transitions collected before the first learn call.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            n_step: 3,
            batch_size: 180,
            atoms: 10,
            v_min: -10.0,
            v_max: 10.0,
            lr: 0.01,
            hidden: vec![128, 128],
            noisy: true,
            target_sync_period: 500,
            replay_capacity: 50_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_beta_steps: 100_000,
            priority_floor: 1e-6,
            warmup: 1_000,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::usage("v_min must be below v_max"));
        }
        if self.n_step == 0 || self.batch_size == 0 || self.atoms < 2 {
            return Err(Error::usage(
                "n_step and batch_size must be >= 1 and atoms >= 2",
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::usage("gamma must lie in [0, 1]"));
        }
        if self.target_sync_period == 0 || self.replay_capacity == 0 {
            return Err(Error::usage(
                "target_sync_period and replay_capacity must be positive",
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::usage("lr must be positive"));
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        Support {
            v_min: self.v_min,
            v_max: self.v_max,
            atoms: self.atoms,
        }
    }

    pub fn net_config(&self, input_dim: usize, num_actions: usize) -> QNetConfig {
        QNetConfig {
            input_dim,
            hidden: self.hidden.clone(),
            num_actions,
            support: self.support(),
            noisy: self.noisy,
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn rows(states: &[&[f64]]) -> Array2<f64> {
    let d = states.first().map_or(0, |s| s.len());
    Array2::from_shape_fn((states.len(), d), |(i, j)| states[i][j])
}

/// Learner state: online and target networks, optimizer, replay and n-step staging.
#[derive(Debug, Clone)]
pub struct RainbowAgent {
    config: AgentConfig,
    online: CategoricalQNet,
    target: CategoricalQNet,
    target_synced: bool,
    optimizer: Adam,
    replay: PrioritizedReplay,
    nstep: NStepBuffer,
    rng: ChaCha8Rng,
    learn_steps: u64,
    periodic_syncs: u64,
}

impl RainbowAgent {
    /// A fresh agent. The target network is not synced until [`sync_target`](Self::sync_target).
    pub fn new(config: AgentConfig, state_dim: usize, num_actions: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = CategoricalQNet::new(config.net_config(state_dim, num_actions), &mut rng)?;
        let mut target = online.clone();
        target.zero_noise();
        Ok(RainbowAgent {
            optimizer: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            replay: PrioritizedReplay::new(
                config.replay_capacity,
                config.per_alpha,
                config.priority_floor,
            ),
            nstep: NStepBuffer::new(config.n_step, config.gamma),
            config,
            online,
            target,
            target_synced: false,
            rng,
            learn_steps: 0,
            periodic_syncs: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &CategoricalQNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut CategoricalQNet {
        &mut self.online
    }

    pub fn target(&self) -> &CategoricalQNet {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut CategoricalQNet {
        &mut self.target
    }

    pub fn replay(&self) -> &PrioritizedReplay {
        &self.replay
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    /// Target syncs triggered by the learn-step period (excludes manual syncs).
    pub fn periodic_syncs(&self) -> u64 {
        self.periodic_syncs
    }

    pub fn is_warm(&self) -> bool {
        self.replay.len() >= self.config.warmup.max(self.config.batch_size)
    }

    /// Expected action values `[actions]` under the online net's current noise.
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = rows(&[state]);
        let probs = self.online.infer(x.view())?;
        Ok(self.online.expected_q(&probs).row(0).to_vec())
    }

    pub fn act(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(self.q_values(state)?))
    }

    pub fn resample_noise(&mut self) {
        self.online.resample_noise(&mut self.rng);
    }

    /// Feeds one environment step through n-step staging into replay.
    pub fn observe(&mut self, step: Transition) {
        for t in self.nstep.push(step) {
            self.replay.push(t);
        }
    }

    /// Flushes partially filled n-step windows (call at episode end).
    pub fn end_episode(&mut self) {
        for t in self.nstep.flush() {
            self.replay.push(t);
        }
    }

    /// Inserts an already aggregated transition directly into replay.
    pub fn push_transition(&mut self, t: Transition) {
        self.replay.push(t);
    }

    pub fn beta(&self) -> f64 {
        let c = &self.config;
        let frac = if c.per_beta_steps == 0 {
            1.0
        } else {
            (self.learn_steps as f64 / c.per_beta_steps as f64).min(1.0)
        };
        c.per_beta_start + (c.per_beta_end - c.per_beta_start) * frac
    }

    pub fn sample_batch(&mut self) -> Result<SampledBatch> {
        let beta = self.beta();
        self.replay
            .sample(self.config.batch_size, beta, &mut self.rng)
    }

    /// Projected target distributions `[batch, atoms]` for the given replay indices,
    /// choosing `a*` with the online net and evaluating it with the target net.
    pub fn project_target(&self, indices: &[usize]) -> Result<Array2<f64>> {
        if !self.target_synced {
            return Err(Error::usage("target network has never been synced"));
        }
        let batch: Vec<&Transition> = indices.iter().map(|&i| self.replay.get(i)).collect();
        let next = rows(
            &batch
                .iter()
                .map(|t| t.next_state.as_slice())
                .collect::<Vec<_>>(),
        );
        let online_q = self.online.expected_q(&self.online.infer(next.view())?);
        let best: Vec<usize> = online_q
            .axis_iter(Axis(0))
            .map(|row| argmax(row.iter().copied()))
            .collect();
        let target_probs = gather_actions(&self.target.infer(next.view())?, &best);
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let discounts: Vec<f64> = batch
            .iter()
            .map(|t| self.config.gamma.powi(t.n_used as i32))
            .collect();
        Ok(project_distribution(
            target_probs.view(),
            &rewards,
            &dones,
            &discounts,
            &self.config.support(),
        ))
    }

    /// One gradient step on a prioritized batch. Returns the importance-weighted mean
    /// cross-entropy between projected targets and online distributions.
    pub fn learn(&mut self) -> Result<f64> {
        if !self.target_synced {
            return Err(Error::usage("learn called before the first target sync"));
        }
        self.online.resample_noise(&mut self.rng);
        let sample = self.sample_batch()?;
        let loss = self.learn_on(&sample.indices, &sample.weights)?;
        self.learn_steps += 1;
        if self
            .learn_steps
            .is_multiple_of(self.config.target_sync_period)
        {
            self.sync_target();
            self.periodic_syncs += 1;
        }
        Ok(loss)
    }

    /// Gradient step on explicit replay indices and importance weights.
    pub fn learn_on(&mut self, indices: &[usize], weights: &[f64]) -> Result<f64> {
        let targets = self.project_target(indices)?;
        let (b, atoms, actions) = (
            indices.len(),
            self.config.atoms,
            self.online.config().num_actions,
        );
        let states = rows(
            &indices
                .iter()
                .map(|&i| self.replay.get(i).state.as_slice())
                .collect::<Vec<_>>(),
        );
        let chosen: Vec<usize> = indices.iter().map(|&i| self.replay.get(i).action).collect();
        let probs = self.online.forward(states.view())?;

        let mut grad = Array2::zeros((b, actions * atoms));
        let mut per_sample = Vec::with_capacity(b);
        let mut loss = 0.0;
        for i in 0..b {
            let a = chosen[i];
            let mut ce = 0.0;
            for k in 0..atoms {
                let p = probs[[i, a, k]];
                let m = targets[[i, k]];
                if m > 0.0 {
                    ce -= m * p.max(f64::MIN_POSITIVE).ln();
                }
                grad[[i, a * atoms + k]] = weights[i] * (p - m) / b as f64;
            }
            per_sample.push(ce);
            loss += weights[i] * ce;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss}")));
        }
        self.online.zero_grad();
        self.online.backward(grad.view())?;
        self.optimizer.step(&mut self.online)?;
        let priorities: Vec<f64> = per_sample
            .iter()
            .map(|l| l + self.config.priority_floor)
            .collect();
        self.replay.update_priorities(indices, &priorities);
        Ok(loss)
    }

    /// Hard copy online -> target; the target runs without noise.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
        self.target.zero_noise();
        self.target_synced = true;
    }

    pub fn checkpoint(
        &self,
        env_config: &EnvConfig,
        norm: Normalization,
        train_seeds: SeedRange,
    ) -> PolicyCheckpoint {
        let mut net = self.online.clone();
        net.zero_noise();
        PolicyCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            agent: self.config.clone(),
            env: env_config.clone(),
            normalization: norm,
            train_seeds,
            network: net.param_file(),
        }
    }
}

/// Half-open range of workload seeds `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, seed: u64) -> bool {
        (self.start..self.end).contains(&seed)
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Trained policy on disk: network parameters plus everything needed to rebuild inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub normalization: Normalization,
    pub train_seeds: SeedRange,
    pub network: ParamFile,
}

impl PolicyCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: PolicyCheckpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn policy(&self) -> Result<QPolicy> {
        Ok(QPolicy {
            net: CategoricalQNet::from_param_file(&self.network)?,
        })
    }
}

/// Deterministic (noise-free) greedy policy over a trained network's expected values.
#[derive(Debug, Clone)]
pub struct QPolicy {
    net: CategoricalQNet,
}

impl QPolicy {
    pub fn new(mut net: CategoricalQNet) -> Self {
        net.zero_noise();
        QPolicy { net }
    }

    pub fn choose(&self, state: &[f64]) -> Result<usize> {
        let x = rows(&[state]);
        let probs = self.net.infer(x.view())?;
        Ok(argmax(self.net.expected_q(&probs).row(0).iter().copied()))
    }
}

impl PlacementPolicy for QPolicy {
    fn name(&self) -> &str {
        "drlq"
    }

    fn select(&mut self, env: &QCloudEnv) -> usize {
        self.choose(env.state().as_slice())
            .expect("checkpoint input width matches the environment")
    }
}
