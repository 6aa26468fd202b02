//! Independent reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use qcloud::agent::Transition;
use qcloud::nn::Support;

/// Hat-function form of the categorical projection: target atom k receives
/// `sum_j p_j * max(0, 1 - |clip(Tz_j) - z_k| / dz)`.
pub fn projection_oracle(
    p: &[f64],
    reward: f64,
    done: bool,
    discount: f64,
    s: &Support,
) -> Vec<f64> {
    let z = s.values();
    let dz = (s.v_max - s.v_min) / (s.atoms - 1) as f64;
    let mut m = vec![0.0; s.atoms];
    for (k, zk) in z.iter().enumerate() {
        for (j, zj) in z.iter().enumerate() {
            let tz = if done { reward } else { reward + discount * zj };
            let tz = tz.max(s.v_min).min(s.v_max);
            let w = 1.0 - (tz - zk).abs() / dz;
            if w > 0.0 {
                m[k] += p[j] * w;
            }
        }
    }
    m
}

/// A one-step transition whose states encode the step index.
pub fn indexed_step(i: usize, reward: f64, done: bool) -> Transition {
    Transition {
        state: vec![i as f64],
        action: i % 4,
        reward,
        next_state: vec![i as f64 + 1.0],
        done,
        n_used: 1,
    }
}

/// Replays a `(reward, done)` log directly: the window starting at `i` covers steps up
/// to the first terminal one, at most `n` of them.
pub fn nstep_oracle(log: &[(f64, bool)], n: usize, gamma: f64) -> Vec<Transition> {
    let mut out = Vec::new();
    for i in 0..log.len() {
        let mut k = 0;
        let mut g = 0.0;
        let mut pow = 1.0;
        while k < n && i + k < log.len() {
            g += pow * log[i + k].0;
            pow *= gamma;
            k += 1;
            if log[i + k - 1].1 {
                break;
            }
        }
        let last = i + k - 1;
        out.push(Transition {
            state: vec![i as f64],
            action: i % 4,
            reward: g,
            next_state: vec![last as f64 + 1.0],
            done: log[last].1,
            n_used: k,
        });
    }
    out
}
