use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::train::{final_quarter_reward, train};
use super::ExperimentConfig;
use crate::error::{Error, Result};

/// A hyperparameter grid. `params` maps dotted config keys such as `agent.lr` to the
/// values to try; `iterations` and `steps_per_iteration` override the training budget
/// of every trial.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TuneGrid {
    pub params: BTreeMap<String, Vec<toml::Value>>,
    pub iterations: Option<usize>,
    pub steps_per_iteration: Option<usize>,
}

impl TuneGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let grid: TuneGrid = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if grid.params.is_empty() || grid.params.values().any(Vec::is_empty) {
            return Err(Error::usage(
                "grid needs at least one parameter with at least one value",
            ));
        }
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Cartesian product of the grid, keys in sorted order, last key varying fastest.
    pub fn assignments(&self) -> Vec<Vec<(String, toml::Value)>> {
        let mut out: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (key, values) in &self.params {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut a = prefix.clone();
                        a.push((key.clone(), v.clone()));
                        a
                    })
                })
                .collect();
        }
        out
    }
}

/// Returns a copy of `base` with the dotted keys overridden.
pub fn apply_overrides(
    base: &ExperimentConfig,
    overrides: &[(String, toml::Value)],
) -> Result<ExperimentConfig> {
    let mut root = toml::Value::try_from(base).map_err(|e| Error::Format(e.to_string()))?;
    for (key, value) in overrides {
        let mut parts = key.split('.').peekable();
        let mut node = &mut root;
        while let Some(part) = parts.next() {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::usage(format!("grid key {key}: {part} is not inside a table"))
            })?;
            if parts.peek().is_none() {
                if !table.contains_key(part) {
                    return Err(Error::usage(format!(
                        "grid key {key} is not a config field"
                    )));
                }
                table.insert(part.to_owned(), value.clone());
                break;
            }
            node = table
                .get_mut(part)
                .ok_or_else(|| Error::usage(format!("grid key {key} is not a config field")))?;
        }
    }
    let cfg: ExperimentConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub overrides: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
    pub final_quarter_reward: Option<f64>,
}

/// Trains one agent per grid point under the reduced budget. Trials come back best first;
/// trials without a finished episode rank last.
pub fn tune(
    base: &ExperimentConfig,
    grid: &TuneGrid,
    mut progress: impl FnMut(&Trial),
) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (index, overrides) in grid.assignments().into_iter().enumerate() {
        let mut config = apply_overrides(base, &overrides)?;
        if let Some(n) = grid.iterations {
            config.train.iterations = n;
        }
        if let Some(n) = grid.steps_per_iteration {
            config.train.steps_per_iteration = n;
        }
        let outcome = train(&config, |_| {})?;
        let trial = Trial {
            index,
            overrides,
            config,
            final_quarter_reward: final_quarter_reward(&outcome.log),
        };
        progress(&trial);
        trials.push(trial);
    }
    trials.sort_by(|a, b| {
        let key = |t: &Trial| t.final_quarter_reward.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.index.cmp(&b.index))
    });
    Ok(trials)
}

pub fn write_trial_csv<W: Write>(w: W, trials: &[Trial]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let keys: Vec<&str> = trials
        .first()
        .map(|t| t.overrides.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["rank", "trial"];
    header.extend(&keys);
    header.push("final_quarter_reward");
    out.write_record(&header)?;
    for (rank, t) in trials.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string(), t.index.to_string()];
        row.extend(t.overrides.iter().map(|(_, v)| v.to_string()));
        row.push(
            t.final_quarter_reward
                .map(|r| r.to_string())
                .unwrap_or_default(),
        );
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<trial csv>", e))
}
