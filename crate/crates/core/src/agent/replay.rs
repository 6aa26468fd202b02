use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};

/// Binary tree of priority sums over a power-of-two number of leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut pos = self.leaves + i;
        self.nodes[pos] = value;
        // Parents are recomputed from their children so sums never drift.
        while pos > 1 {
            pos /= 2;
            self.nodes[pos] = self.nodes[2 * pos] + self.nodes[2 * pos + 1];
        }
    }

    /// Leaf index whose cumulative range contains `mass` (in `[0, total)`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut pos = 1;
        while pos < self.leaves {
            let left = self.nodes[2 * pos];
            if mass < left || self.nodes[2 * pos + 1] <= 0.0 {
                pos *= 2;
            } else {
                mass -= left;
                pos = 2 * pos + 1;
            }
        }
        pos - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance-sampling weights, normalized so the largest in the batch is 1.
    pub weights: Vec<f64>,
}

/// Proportional prioritized replay: item `i` is drawn with probability
/// `p_i^alpha / sum_j p_j^alpha`.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    capacity: usize,
    alpha: f64,
    floor: f64,
    data: Vec<Transition>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, alpha: f64, floor: f64) -> Self {
        PrioritizedReplay {
            capacity: capacity.max(1),
            alpha,
            floor,
            data: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Stores a transition at the current maximum priority, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition) -> usize {
        let idx = self.next;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[idx] = t;
        }
        self.tree.set(idx, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
        idx
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch> {
        if batch == 0 || self.data.len() < batch {
            return Err(Error::usage(format!(
                "replay holds {} transitions, batch needs {batch}",
                self.data.len()
            )));
        }
        let total = self.tree.total();
        let n = self.data.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = self
                .tree
                .find(rng.random::<f64>() * total)
                .min(self.data.len() - 1);
            indices.push(idx);
            weights.push((n * self.probability(idx)).powf(-beta));
        }
        let max_w = weights.iter().copied().fold(0.0, f64::max);
        weights.iter_mut().for_each(|w| *w /= max_w);
        Ok(SampledBatch { indices, weights })
    }

    /// Sets new raw priorities (before the `alpha` exponent), clamped below by the floor.
    pub fn update_priorities(&mut self, indices: &[usize], priorities: &[f64]) {
        for (&i, &p) in indices.iter().zip(priorities) {
            let p = if p.is_finite() {
                p.max(self.floor)
            } else {
                self.max_priority
            };
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }
}
