use ndarray::{Array2, ArrayView2};

use crate::nn::Support;

/// Projects the shifted target distribution `R + discount * z` (or just `R` on terminal
/// rows) back onto the fixed support, splitting each atom's mass linearly between its
/// two neighbouring support points.
///
/// `next_probs` is `[batch, atoms]`; `discounts[i]` is `gamma^n_used` for row `i`.
pub fn project_distribution(
    next_probs: ArrayView2<f64>,
    rewards: &[f64],
    dones: &[bool],
    discounts: &[f64],
    support: &Support,
) -> Array2<f64> {
    let (batch, atoms) = next_probs.dim();
    debug_assert_eq!(atoms, support.atoms);
    let z = support.values();
    let dz = support.delta_z();
    let last = (atoms - 1) as f64;
    let mut out = Array2::zeros((batch, atoms));
    for i in 0..batch {
        let carry = if dones[i] { 0.0 } else { discounts[i] };
        for (j, &zj) in z.iter().enumerate() {
            let p = next_probs[[i, j]];
            if p == 0.0 {
                continue;
            }
            let tz = (rewards[i] + carry * zj).clamp(support.v_min, support.v_max);
            let b = ((tz - support.v_min) / dz).clamp(0.0, last);
            let lo = b.floor();
            let hi = b.ceil();
            if lo == hi {
                out[[i, lo as usize]] += p;
            } else {
                out[[i, lo as usize]] += p * (hi - b);
                out[[i, hi as usize]] += p * (b - lo);
            }
        }
    }
    out
}
