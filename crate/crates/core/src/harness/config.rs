use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::{EnvConfig, QCloudEnv};
use crate::error::{Error, Result};
use crate::workload::{bundled_circuits, load_circuits, BackendRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub steps_per_iteration: usize,
    /// Training episodes use workload seeds `seed_start, seed_start + 1, ...`.
    pub seed_start: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            steps_per_iteration: 1_000,
            seed_start: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Evaluation episodes use workload seeds `seed_start .. seed_start + episodes`.
    pub seed_start: u64,
    /// Mixed into the per-episode seed of the Random baseline.
    pub policy_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 100,
            seed_start: 1_000_000,
            policy_seed: 7,
        }
    }
}

/// Everything one experiment needs. Serialized as TOML with `[env]`, `[agent]`,
/// `[train]` and `[eval]` sections; omitted keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Backends CSV; the bundled registry when absent.
    pub registry: Option<PathBuf>,
    /// Circuits CSV; the bundled dataset when absent.
    pub circuits: Option<PathBuf>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.registry, &mut cfg.circuits].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&cfg.registry, &cfg.circuits].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::usage(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.train.iterations == 0
            || self.train.steps_per_iteration == 0
            || self.eval.episodes == 0
        {
            return Err(Error::usage(
                "iteration, step and episode counts must be positive",
            ));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<BackendRegistry> {
        match &self.registry {
            Some(p) => BackendRegistry::load(p),
            None => Ok(BackendRegistry::bundled()),
        }
    }

    pub fn build_env(&self) -> Result<QCloudEnv> {
        let records = match &self.circuits {
            Some(p) => load_circuits(p)?,
            None => bundled_circuits(),
        };
        QCloudEnv::new(
            Arc::new(self.registry()?),
            Arc::new(records),
            self.env.clone(),
        )
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.episodes as u64)
            .map(|i| self.eval.seed_start + i)
            .collect()
    }
}
