//! Generalized advantage estimation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaeResult {
    /// Raw (unnormalized) advantage estimates.
    pub advantages: Vec<f64>,
    /// Regression targets for the value function: advantage + value.
    pub value_targets: Vec<f64>,
}

/// Computes GAE over one trajectory fragment.
///
/// `dones[t]` marks that the episode ended at step t; the value beyond an
/// episode boundary is treated as zero and the advantage recursion restarts.
/// `bootstrap_value` is V(s_T) for the state following the last step, used
/// only when the fragment ends mid-episode.
///
///   delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
///   A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<GaeResult> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae inputs disagree: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_advantage = delta + gamma * lambda * not_done * next_advantage;
        advantages[t] = next_advantage;
    }
    let value_targets = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok(GaeResult {
        advantages,
        value_targets,
    })
}

/// In-place shift-and-scale to zero mean and unit standard deviation.
/// Near-constant advantages are only centered (no division by ~0).
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
        / advantages.len() as f64;
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a -= mean;
        if std > 1e-8 {
            *a /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: the advantage written as the explicit double sum
    ///   A_t = sum_{l >= 0} (gamma * lambda)^l * delta_{t+l}
    /// truncated at the first episode boundary at or after t, with
    /// delta_k = r_k + gamma * V_{k+1} * (1 - done_k) - V_k.
    #[allow(clippy::needless_range_loop)] // indexed form mirrors the sum
    fn brute_force(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let delta = |k: usize| -> f64 {
            let next = if dones[k] {
                0.0
            } else if k + 1 < n {
                values[k + 1]
            } else {
                bootstrap
            };
            rewards[k] + gamma * next - values[k]
        };
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut weight = 1.0;
                for k in t..n {
                    acc += weight * delta(k);
                    if dones[k] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for case in 0..100 {
            let n = 20;
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.15)).collect();
            let bootstrap = rng.gen_range(-2.0..2.0);
            let gamma = rng.gen_range(0.8..1.0);
            let lambda = rng.gen_range(0.5..1.0);

            let got = gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
            let want = brute_force(&rewards, &values, &dones, bootstrap, gamma, lambda);
            for (t, (g, w)) in got.advantages.iter().zip(&want).enumerate() {
                assert!(
                    (g - w).abs() < 1e-10,
                    "case {case} step {t}: recursion {g} vs double sum {w}"
                );
            }
            for (t, v) in values.iter().enumerate() {
                assert!((got.value_targets[t] - (got.advantages[t] + v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_episode_reduces_to_td_error() {
        let got = gae(&[1.0], &[0.3], &[true], 99.0, 0.9, 0.8).unwrap();
        // done: bootstrap ignored, A = r - V.
        assert!((got.advantages[0] - (1.0 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_used_only_when_fragment_cut_mid_episode() {
        let open = gae(&[0.0], &[0.0], &[false], 2.0, 0.5, 1.0).unwrap();
        assert!((open.advantages[0] - 1.0).abs() < 1e-15);
        let closed = gae(&[0.0], &[0.0], &[true], 2.0, 0.5, 1.0).unwrap();
        assert!(closed.advantages[0].abs() < 1e-15);
    }

    #[test]
    fn episode_boundary_blocks_credit_flow() {
        // Large reward after the boundary must not leak backwards.
        let rewards = [0.0, 0.0, 100.0];
        let values = [0.0, 0.0, 0.0];
        let dones = [false, true, false];
        let got = gae(&rewards, &values, &dones, 0.0, 0.99, 0.95).unwrap();
        assert_eq!(got.advantages[0], 0.0);
        assert_eq!(got.advantages[1], 0.0);
        assert!((got.advantages[2] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(matches!(
            gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.9, 0.9),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn normalization_centers_and_scales() {
        let mut adv = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut adv);
        let mean: f64 = adv.iter().sum::<f64>() / 4.0;
        let var: f64 = adv.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);

        // Constant advantages: centered, not divided.
        let mut flat = vec![5.0, 5.0, 5.0];
        normalize_advantages(&mut flat);
        assert!(flat.iter().all(|a| a.abs() < 1e-12));
    }
}
