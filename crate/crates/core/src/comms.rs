//! Communication protocol: who talks to whom, and how exchanged
//! observations become a fixed-size policy input.
//!
//! Each agent gathers the observations of every agent within radius
//! `epsilon` of itself (infinity means full broadcast), adds its own, and
//! encodes the resulting set with a shared set autoencoder. The latent is
//! concatenated with the agent's private observation to form the policy
//! input. Because the encoder is permutation invariant and operates on
//! sets, the same encoder serves any agent count up to its capacity and
//! any task over the same observation space.
//!
//! Every encode also computes the self-supervised reconstruction loss of
//! the encoded set. That signal is free (no labels, no rewards) and is the
//! quantity the out-of-distribution monitor watches at execution time.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::Result;
use crate::pisa::{LatentState, LossBreakdown, ObservationSet, SetAutoencoderParams};

/// Shared communication channel: a radius and the common encoder.
#[derive(Clone)]
pub struct CommConfig {
    /// Communication radius; `f64::INFINITY` is full broadcast.
    pub epsilon: f64,
    pub encoder: Arc<SetAutoencoderParams>,
}

impl CommConfig {
    pub fn broadcast(encoder: Arc<SetAutoencoderParams>) -> Self {
        Self {
            epsilon: f64::INFINITY,
            encoder,
        }
    }

    pub fn neighborhood(&self, positions: &[[f64; 2]], i: usize) -> Neighborhood {
        neighborhood(positions, self.epsilon, i)
    }

    pub fn assemble(
        &self,
        i: usize,
        joint_obs: &[Vec<f64>],
        nbhd: &Neighborhood,
    ) -> Result<ObservationSet> {
        assemble(i, joint_obs, nbhd)
    }

    pub fn encode_state(
        &self,
        set: &ObservationSet,
        recorder: &mut LossRecorder,
    ) -> Result<LatentState> {
        encode_state(&self.encoder, set, recorder)
    }

    pub fn encode_for_agent(
        &self,
        i: usize,
        joint_obs: &[Vec<f64>],
        positions: &[[f64; 2]],
        recorder: &mut LossRecorder,
    ) -> Result<(LatentState, ObservationSet)> {
        encode_for_agent(&self.encoder, self.epsilon, i, joint_obs, positions, recorder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub agent: usize,
    pub members: Vec<usize>,
}

/// Members of agent `i`'s neighborhood: every other agent within `epsilon`
/// (Euclidean). The agent itself is not listed; assembly always includes
/// its own observation.
pub fn neighborhood(positions: &[[f64; 2]], epsilon: f64, i: usize) -> Neighborhood {
    let mut members = Vec::new();
    for (j, p) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let dx = p[0] - positions[i][0];
        let dy = p[1] - positions[i][1];
        if (dx * dx + dy * dy).sqrt() <= epsilon {
            members.push(j);
        }
    }
    Neighborhood { agent: i, members }
}

/// Builds the observation set agent `i` encodes: its own observation plus
/// one element per neighborhood member.
pub fn assemble(
    i: usize,
    joint_obs: &[Vec<f64>],
    nbhd: &Neighborhood,
) -> Result<ObservationSet> {
    let mut set = ObservationSet::empty(joint_obs[i].len());
    set.push(joint_obs[i].clone())?;
    for &j in &nbhd.members {
        set.push(joint_obs[j].clone())?;
    }
    Ok(set)
}

/// Encodes a set and records its reconstruction loss for monitoring.
pub fn encode_state(
    encoder: &SetAutoencoderParams,
    set: &ObservationSet,
    recorder: &mut LossRecorder,
) -> Result<LatentState> {
    let (loss, z) = encoder.reconstruction_loss_with_latent(set)?;
    recorder.record(&loss);
    Ok(z)
}

/// Neighborhood gathering, assembly, and encoding for one agent.
/// Positions index-align with `joint_obs`.
pub fn encode_for_agent(
    encoder: &SetAutoencoderParams,
    epsilon: f64,
    i: usize,
    joint_obs: &[Vec<f64>],
    positions: &[[f64; 2]],
    recorder: &mut LossRecorder,
) -> Result<(LatentState, ObservationSet)> {
    let nbhd = neighborhood(positions, epsilon, i);
    let set = assemble(i, joint_obs, &nbhd)?;
    let z = encode_state(encoder, &set, recorder)?;
    Ok((z, set))
}

/// Policy input: latent state first, then the agent's own observation.
pub fn policy_input(latent: &LatentState, own_obs: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(latent.dim() + own_obs.len());
    input.extend_from_slice(&latent.values);
    input.extend_from_slice(own_obs);
    input
}

/// Running sums of reconstruction losses over some scope (an iteration,
/// an episode, an evaluation run).
#[derive(Debug, Clone, Default)]
pub struct LossRecorder {
    sum_total: f64,
    sum_rmse: f64,
    count: usize,
}

impl LossRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, loss: &LossBreakdown) {
        self.sum_total += loss.total;
        // The element term is a mean squared residual, so its square root
        // is the per-encode reconstruction RMSE.
        self.sum_rmse += loss.element.sqrt();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &LossRecorder) {
        self.sum_total += other.sum_total;
        self.sum_rmse += other.sum_rmse;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean_total(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_total / self.count as f64)
    }

    pub fn mean_rmse(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_rmse / self.count as f64)
    }
}

/// Fixed-capacity trailing window of per-iteration loss means.
#[derive(Debug, Clone)]
pub struct LossWindow {
    cap: usize,
    buf: VecDeque<f64>,
}

impl LossWindow {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "window capacity must be positive");
        Self {
            cap,
            buf: VecDeque::with_capacity(cap),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(value);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.cap
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.buf.is_empty()).then(|| self.buf.iter().sum::<f64>() / self.buf.len() as f64)
    }
}
