//! Clipped PPO surrogate with an adaptive KL penalty, and its exact
//! gradients.
//!
//! For one sample with importance ratio r = exp(logp_new - logp_behavior)
//! and advantage A:
//!
//!   J_clip = min(r * A, clamp(r, 1 - clip, 1 + clip) * A)
//!   loss   = mean[ -J_clip + kl_coeff * KL(behavior || new)
//!                  - entropy_coeff * H(new) ]
//!          + vf_coeff * mean[ (V(s) - value_target)^2 ]
//!
//! The value regression is unclipped. Policy and value networks are
//! separate but read the same input, so the per-sample input gradient is
//! the sum of both networks' input gradients (used when an encoder is
//! trained end-to-end through the policy input).

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::MlpGrad;
use crate::util::all_finite;

use super::policy::{entropy, kl_divergence, log_prob, GaussianHead, PolicyParams};

#[derive(Debug, Clone, Copy)]
pub struct SurrogateConfig {
    pub clip: f64,
    pub kl_coeff: f64,
    pub entropy_coeff: f64,
    pub vf_coeff: f64,
}

/// One transition prepared for the update.
#[derive(Debug, Clone)]
pub struct SurrogateSample {
    pub input: Vec<f64>,
    pub action: [f64; ACTION_DIM],
    pub behavior: GaussianHead,
    pub behavior_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub mean_ratio: f64,
    /// Fraction of samples where the clipped branch was strictly smaller.
    pub clip_fraction: f64,
    /// Flat gradient in `PolicyParams` order (policy net, then value net).
    pub grad: Vec<f64>,
    /// Per-sample dLoss/dInput, populated when requested.
    pub input_grads: Vec<Vec<f64>>,
}

pub fn ppo_surrogate(
    params: &PolicyParams,
    samples: &[SurrogateSample],
    cfg: &SurrogateConfig,
    want_input_grads: bool,
) -> Result<SurrogateOutcome> {
    if samples.is_empty() {
        return Err(Error::Usage("surrogate needs at least one sample".to_string()));
    }
    let batch = samples.len() as f64;
    let inv_batch = 1.0 / batch;

    let mut policy_grad = MlpGrad::zeros_like(&params.policy);
    let mut value_grad = MlpGrad::zeros_like(&params.value);
    let mut input_grads = Vec::with_capacity(if want_input_grads { samples.len() } else { 0 });

    let mut sum_obj = 0.0;
    let mut sum_kl = 0.0;
    let mut sum_entropy = 0.0;
    let mut sum_ratio = 0.0;
    let mut sum_vloss = 0.0;
    let mut clipped = 0usize;

    for sample in samples {
        let (head, policy_tape) = params.head_recorded(&sample.input)?;
        let (value_out, value_tape) = params.value.forward_recorded(&sample.input)?;
        let value = value_out[0];

        let lp = log_prob(&head, &sample.action);
        let ratio = (lp - sample.behavior_log_prob).exp();
        let adv = sample.advantage;
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        let unclipped_active = surr1 <= surr2;
        if !unclipped_active {
            clipped += 1;
        }
        let objective = surr1.min(surr2);

        let kl = kl_divergence(&sample.behavior, &head);
        let ent = entropy(&head);
        let verr = value - sample.value_target;

        sum_obj += objective;
        sum_kl += kl;
        sum_entropy += ent;
        sum_ratio += ratio;
        sum_vloss += verr * verr;

        // d(-J)/dlogp: the min selects the unclipped branch (ties included)
        // or a branch whose clamp is pinned, where the gradient vanishes.
        let d_neg_obj_d_lp = if unclipped_active { -ratio * adv } else { 0.0 };

        let mut upstream = [0.0; 2 * ACTION_DIM];
        for k in 0..ACTION_DIM {
            let sigma = head.log_std[k].exp();
            let zscore = (sample.action[k] - head.mean[k]) / sigma;
            // logp terms
            let dlp_dmean = zscore / sigma;
            let dlp_dls = zscore * zscore - 1.0;
            // KL(behavior || new) terms
            let var_old = (2.0 * sample.behavior.log_std[k]).exp();
            let mean_diff = sample.behavior.mean[k] - head.mean[k];
            let dkl_dmean = -(sample.behavior.mean[k] - head.mean[k]) / (sigma * sigma);
            let dkl_dls = 1.0 - (var_old + mean_diff * mean_diff) / (sigma * sigma);

            upstream[k] = (d_neg_obj_d_lp * dlp_dmean + cfg.kl_coeff * dkl_dmean) * inv_batch;
            let mut g_ls = d_neg_obj_d_lp * dlp_dls + cfg.kl_coeff * dkl_dls
                - cfg.entropy_coeff;
            if !head.active[k] {
                g_ls = 0.0;
            }
            upstream[ACTION_DIM + k] = g_ls * inv_batch;
        }

        let (pg, p_input) = params.policy.backward(&policy_tape, &upstream)?;
        policy_grad.accumulate(&pg);

        let v_upstream = [cfg.vf_coeff * 2.0 * verr * inv_batch];
        let (vg, v_input) = params.value.backward(&value_tape, &v_upstream)?;
        value_grad.accumulate(&vg);

        if want_input_grads {
            let combined: Vec<f64> = p_input.iter().zip(&v_input).map(|(a, b)| a + b).collect();
            input_grads.push(combined);
        }
    }

    let policy_loss = (-sum_obj + cfg.kl_coeff * sum_kl - cfg.entropy_coeff * sum_entropy) * inv_batch;
    let value_loss = sum_vloss * inv_batch;
    let loss = policy_loss + cfg.vf_coeff * value_loss;

    let mut grad = Vec::with_capacity(params.param_count());
    policy_grad.write_flat(&mut grad);
    value_grad.write_flat(&mut grad);

    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::Numerical(
            "non-finite PPO loss or gradient; aborting update".to_string(),
        ));
    }

    Ok(SurrogateOutcome {
        loss,
        policy_loss,
        value_loss,
        mean_kl: sum_kl * inv_batch,
        mean_entropy: sum_entropy * inv_batch,
        mean_ratio: sum_ratio * inv_batch,
        clip_fraction: clipped as f64 * inv_batch,
        grad,
        input_grads,
    })
}
