//! Heuristic placement policies used as comparison baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::QCloudEnv;
use crate::sim::DataCenter;

/// Anything that can choose a node for the environment's current task.
pub trait PlacementPolicy {
    fn name(&self) -> &str;

    /// Picks a node index in `[0, env.num_actions())`. Only called while an episode is active.
    fn select(&mut self, env: &QCloudEnv) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Greedy,
    RoundRobin,
    Random,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Some(BaselineKind::Greedy),
            "roundrobin" | "round_robin" | "round-robin" | "rr" => Some(BaselineKind::RoundRobin),
            "random" => Some(BaselineKind::Random),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Greedy => "greedy",
            BaselineKind::RoundRobin => "roundrobin",
            BaselineKind::Random => "random",
        }
    }
}

/// Lowest-backlog node on a first attempt; the largest node on any retry.
/// Ties go to the lowest index in both cases.
pub fn greedy_select(dc: &DataCenter, retry: bool) -> usize {
    if retry {
        let nodes = &dc.registry().nodes;
        let mut best = 0;
        for (i, n) in nodes.iter().enumerate() {
            if n.qubits > nodes[best].qubits {
                best = i;
            }
        }
        best
    } else {
        let mut best = 0;
        let mut best_wait = f64::INFINITY;
        for i in 0..dc.registry().len() {
            let wait = dc.backlog(i);
            if wait < best_wait {
                best = i;
                best_wait = wait;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Default)]
pub struct Greedy;

impl PlacementPolicy for Greedy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn select(&mut self, env: &QCloudEnv) -> usize {
        let dc = env.data_center().expect("active episode");
        let retry = env.current_task().is_some_and(|t| t.replacement_count > 0);
        greedy_select(dc, retry)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Returns the cursor and advances it modulo `m`. Retries advance it too.
    pub fn next(&mut self, m: usize) -> usize {
        let pick = self.cursor % m;
        self.cursor = (pick + 1) % m;
        pick
    }
}

impl PlacementPolicy for RoundRobin {
    fn name(&self) -> &str {
        "roundrobin"
    }

    fn select(&mut self, env: &QCloudEnv) -> usize {
        self.next(env.num_actions())
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next(&mut self, m: usize) -> usize {
        self.rng.random_range(0..m)
    }
}

impl PlacementPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&mut self, env: &QCloudEnv) -> usize {
        self.next(env.num_actions())
    }
}

/// A fresh baseline policy. `seed` only matters for `Random`.
pub fn make_baseline(kind: BaselineKind, seed: u64) -> Box<dyn PlacementPolicy + Send> {
    match kind {
        BaselineKind::Greedy => Box::new(Greedy),
        BaselineKind::RoundRobin => Box::new(RoundRobin::new()),
        BaselineKind::Random => Box::new(RandomPolicy::new(seed)),
    }
}
