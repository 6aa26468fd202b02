use std::collections::VecDeque;

use super::Transition;

/// Stages raw one-step transitions and emits n-step aggregated ones.
///
/// An aggregated transition starting at step `i` covers steps `i..i+k` where `k <= n`
/// and the window never extends past a terminal step. Its reward is
/// `sum_{j<k} gamma^j r_{i+j}` and it bootstraps from the last covered step's next state.
#[derive(Debug, Clone)]
pub struct NStepBuffer {
    n: usize,
    gamma: f64,
    staged: VecDeque<Transition>,
}

impl NStepBuffer {
    pub fn new(n: usize, gamma: f64) -> Self {
        NStepBuffer {
            n: n.max(1),
            gamma,
            staged: VecDeque::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.staged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.staged.is_empty()
    }

    fn aggregate_front(&self) -> Transition {
        let k = self.staged.len().min(self.n);
        let mut reward = 0.0;
        let mut discount = 1.0;
        for t in self.staged.iter().take(k) {
            reward += discount * t.reward;
            discount *= self.gamma;
        }
        let first = &self.staged[0];
        let last = &self.staged[k - 1];
        Transition {
            state: first.state.clone(),
            action: first.action,
            reward,
            next_state: last.next_state.clone(),
            done: last.done,
            n_used: k,
        }
    }

    /// Stages a one-step transition and returns whatever became ready.
    pub fn push(&mut self, step: Transition) -> Vec<Transition> {
        let terminal = step.done;
        self.staged.push_back(step);
        if terminal {
            return self.flush();
        }
        let mut out = Vec::new();
        if self.staged.len() >= self.n {
            out.push(self.aggregate_front());
            self.staged.pop_front();
        }
        out
    }

    /// Emits every staged transition with a truncated window (episode end).
    pub fn flush(&mut self) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.staged.len());
        while !self.staged.is_empty() {
            out.push(self.aggregate_front());
            self.staged.pop_front();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(r: f64, done: bool, tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: 0,
            reward: r,
            next_state: vec![tag + 1.0],
            done,
            n_used: 1,
        }
    }

    #[test]
    fn three_step_discounted_sum() {
        let mut b = NStepBuffer::new(3, 0.9);
        assert!(b.push(step(1.0, false, 0.0)).is_empty());
        assert!(b.push(step(2.0, false, 1.0)).is_empty());
        let out = b.push(step(3.0, false, 2.0));
        assert_eq!(out.len(), 1);
        assert!((out[0].reward - 5.23).abs() < 1e-12);
        assert_eq!(out[0].state, vec![0.0]);
        assert_eq!(out[0].next_state, vec![3.0]);
        assert_eq!(out[0].n_used, 3);
    }

    #[test]
    fn one_step_is_identity() {
        let mut b = NStepBuffer::new(1, 0.5);
        let out = b.push(step(-7.5, false, 0.0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reward, -7.5);
        assert_eq!(out[0].n_used, 1);
    }

    #[test]
    fn terminal_flushes_truncated_windows() {
        let mut b = NStepBuffer::new(3, 0.5);
        b.push(step(1.0, false, 0.0));
        let out = b.push(step(2.0, true, 1.0));
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].reward, out[0].n_used, out[0].done), (2.0, 2, true));
        assert_eq!((out[1].reward, out[1].n_used, out[1].done), (2.0, 1, true));
        assert!(b.is_empty());
    }
}
