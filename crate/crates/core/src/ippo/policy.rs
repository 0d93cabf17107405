//! Shared actor/critic networks with a diagonal Gaussian action head.
//!
//! All agents run the same parameters (homogeneous agents, parameter
//! sharing). The policy network maps the policy input (latent state plus
//! own observation) to action means and log standard deviations; a separate
//! value network with the same input estimates the state value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{push_mlp, read_mlp, Checkpoint};
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::{standard_normal, Activation, FlatReader, Mlp, MlpTape};
use crate::util::derive_seed;

/// Log-std clamp bounds: sigma stays within [e^-5, e^2].
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 * ln(2 pi)

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub value: Mlp,
}

/// Diagonal Gaussian over actions. `active` records, per dimension, whether
/// the raw network output was strictly inside the log-std clamp (gradient
/// flows only there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub active: [bool; ACTION_DIM],
}

impl PolicyParams {
    /// Three-layer tanh networks; output layers start near zero so the
    /// initial policy is close to a unit Gaussian around zero actions.
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x90));
        let policy = Mlp::three_layer(input_dim, hidden, 2 * ACTION_DIM, Activation::Tanh, &mut rng);
        let value = Mlp::three_layer(input_dim, hidden, 1, Activation::Tanh, &mut rng);
        Self { policy, value }
    }

    pub fn input_dim(&self) -> usize {
        self.policy.in_dim()
    }

    pub fn head(&self, input: &[f64]) -> Result<GaussianHead> {
        Ok(head_from_output(&self.policy.forward(input)?))
    }

    pub fn head_recorded(&self, input: &[f64]) -> Result<(GaussianHead, MlpTape)> {
        let (out, tape) = self.policy.forward_recorded(input)?;
        Ok((head_from_output(&out), tape))
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.value.forward(input)?[0])
    }

    pub fn param_count(&self) -> usize {
        self.policy.param_count() + self.value.param_count()
    }

    /// Flat order: policy network, then value network.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.policy.write_flat(out);
        self.value.write_flat(out);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_flat(&mut out);
        out
    }

    pub fn read_flat(&mut self, reader: &mut FlatReader) -> Result<()> {
        self.policy.read_flat(reader)?;
        self.value.read_flat(reader)
    }

    pub fn checksum(&self) -> String {
        crate::util::param_checksum(&self.to_flat())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.push(
            "meta.shape",
            vec![2],
            vec![self.input_dim() as f64, ACTION_DIM as f64],
        )?;
        push_mlp(&mut ckpt, "policy", &self.policy)?;
        push_mlp(&mut ckpt, "value", &self.value)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt.require("meta.shape")?;
        let policy = read_mlp(ckpt, "policy")?;
        let value = read_mlp(ckpt, "value")?;
        if meta.data.len() != 2
            || policy.in_dim() != meta.data[0] as usize
            || value.in_dim() != meta.data[0] as usize
            || policy.out_dim() != 2 * meta.data[1] as usize
            || value.out_dim() != 1
        {
            return Err(Error::Format(
                "policy checkpoint shapes are inconsistent".to_string(),
            ));
        }
        Ok(Self { policy, value })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Splits the raw network output [mean | raw log-std] and clamps the
/// log-std into [LOG_STD_MIN, LOG_STD_MAX].
pub fn head_from_output(out: &[f64]) -> GaussianHead {
    debug_assert_eq!(out.len(), 2 * ACTION_DIM);
    let mut head = GaussianHead {
        mean: [0.0; ACTION_DIM],
        log_std: [0.0; ACTION_DIM],
        active: [true; ACTION_DIM],
    };
    for k in 0..ACTION_DIM {
        head.mean[k] = out[k];
        let raw = out[ACTION_DIM + k];
        head.log_std[k] = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        head.active[k] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
    }
    head
}

pub fn sample_action(head: &GaussianHead, rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
    let mut action = [0.0; ACTION_DIM];
    for (k, slot) in action.iter_mut().enumerate() {
        *slot = head.mean[k] + head.log_std[k].exp() * standard_normal(rng);
    }
    action
}

pub fn log_prob(head: &GaussianHead, action: &[f64; ACTION_DIM]) -> f64 {
    let mut lp = 0.0;
    for (k, a) in action.iter().enumerate() {
        let sigma = head.log_std[k].exp();
        let zscore = (a - head.mean[k]) / sigma;
        lp += -0.5 * zscore * zscore - head.log_std[k] - HALF_LN_TAU;
    }
    lp
}

pub fn entropy(head: &GaussianHead) -> f64 {
    head.log_std
        .iter()
        .map(|ls| ls + 0.5 + HALF_LN_TAU)
        .sum()
}

/// KL(old || new) between two diagonal Gaussians.
pub fn kl_divergence(old: &GaussianHead, new: &GaussianHead) -> f64 {
    let mut kl = 0.0;
    for k in 0..ACTION_DIM {
        let var_old = (2.0 * old.log_std[k]).exp();
        let var_new = (2.0 * new.log_std[k]).exp();
        let mean_diff = old.mean[k] - new.mean[k];
        kl += new.log_std[k] - old.log_std[k]
            + (var_old + mean_diff * mean_diff) / (2.0 * var_new)
            - 0.5;
    }
    kl
}
