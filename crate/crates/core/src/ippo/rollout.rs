//! Experience collection: fixed-length fragments from a bank of
//! independently seeded environments.
//!
//! Workers own their environment and action-sampling stream and are always
//! processed in worker-index order, so a collection pass is a pure function
//! of (parameters, worker states) regardless of scheduling.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comms::{encode_for_agent, policy_input, LossRecorder};
use crate::env::{Action, MultiAgentEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::pisa::{ObservationSet, SetAutoencoderParams};
use crate::util::derive_seed;

use super::policy::{log_prob, sample_action, GaussianHead, PolicyParams};

/// Where the latent part of the policy input comes from.
// One value exists per training run, so the variant size gap is harmless.
#[allow(clippy::large_enum_variant)]
pub enum LatentMode {
    /// Shared pretrained encoder, parameters fixed.
    Frozen(Arc<SetAutoencoderParams>),
    /// Encoder trained end-to-end with the policy objective.
    Trainable(SetAutoencoderParams),
    /// No communication: the latent slots are zeros of the given width,
    /// keeping the policy architecture identical across arms.
    Zero(usize),
}

impl LatentMode {
    pub fn latent_dim(&self) -> usize {
        match self {
            LatentMode::Frozen(enc) => enc.latent_dim(),
            LatentMode::Trainable(enc) => enc.latent_dim(),
            LatentMode::Zero(dim) => *dim,
        }
    }

    pub fn encoder(&self) -> Option<&SetAutoencoderParams> {
        match self {
            LatentMode::Frozen(enc) => Some(enc),
            LatentMode::Trainable(enc) => Some(enc),
            LatentMode::Zero(_) => None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LatentMode::Trainable(_))
    }
}

/// One agent-step of experience.
#[derive(Debug, Clone)]
pub struct RolloutSample {
    /// Policy input as used at behavior time (latent, then own obs).
    pub input: Vec<f64>,
    /// The encoded observation set, kept only when the encoder is trainable
    /// so the latent can be recomputed under updated encoder parameters.
    pub set: Option<ObservationSet>,
    pub action: [f64; ACTION_DIM],
    pub behavior: GaussianHead,
    pub log_prob: f64,
    pub value: f64,
    /// Global reward, shared by every agent of the environment.
    pub reward: f64,
    pub done: bool,
}

/// Everything one collection pass produces.
pub struct RolloutBatch {
    /// streams[env][agent][t]
    pub streams: Vec<Vec<Vec<RolloutSample>>>,
    /// Value of the state following the fragment, per env and agent.
    pub bootstrap_values: Vec<Vec<f64>>,
    /// Returns of episodes that finished during this fragment, in env order.
    pub completed_returns: Vec<f64>,
    /// Reconstruction losses of every encode performed while acting.
    pub recorder: LossRecorder,
    pub env_steps: usize,
}

/// An environment plus the per-worker state that persists across fragments.
pub struct RolloutWorker {
    env: Box<dyn MultiAgentEnv>,
    obs: Vec<Vec<f64>>,
    action_rng: ChaCha8Rng,
    return_acc: f64,
}

impl RolloutWorker {
    /// `stream_seed` should be derived from (run seed, worker index).
    pub fn new(mut env: Box<dyn MultiAgentEnv>, stream_seed: u64) -> Self {
        let obs = env.reset();
        Self {
            env,
            obs,
            action_rng: ChaCha8Rng::seed_from_u64(derive_seed(stream_seed, 0xAC7)),
            return_acc: 0.0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.env.n_agents()
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }
}

/// Agent positions as carried in the observation layout (first two entries).
fn positions_from_obs(joint_obs: &[Vec<f64>]) -> Vec<[f64; 2]> {
    joint_obs.iter().map(|o| [o[0], o[1]]).collect()
}

/// Per-agent policy inputs plus, when an encoder is in play, the sets each
/// agent encoded.
pub type InputsAndSets = (Vec<Vec<f64>>, Vec<Option<ObservationSet>>);

/// Builds every agent's policy input for one joint observation.
pub fn build_inputs(
    joint_obs: &[Vec<f64>],
    mode: &LatentMode,
    epsilon: f64,
    recorder: &mut LossRecorder,
) -> Result<InputsAndSets> {
    let n = joint_obs.len();
    let mut inputs = Vec::with_capacity(n);
    let mut sets = Vec::with_capacity(n);
    match mode {
        LatentMode::Zero(dim) => {
            for obs in joint_obs {
                let mut input = vec![0.0; *dim];
                input.extend_from_slice(obs);
                inputs.push(input);
                sets.push(None);
            }
        }
        LatentMode::Frozen(_) | LatentMode::Trainable(_) => {
            let encoder = mode.encoder().expect("encoder present");
            let positions = positions_from_obs(joint_obs);
            for i in 0..n {
                let (z, set) =
                    encode_for_agent(encoder, epsilon, i, joint_obs, &positions, recorder)?;
                inputs.push(policy_input(&z, &joint_obs[i]));
                sets.push(Some(set));
            }
        }
    }
    Ok((inputs, sets))
}

/// Collects `fragment` steps from every worker. Workers are advanced in
/// index order; episodes ending mid-fragment reset immediately and the
/// fragment continues into the fresh episode.
pub fn collect_fragment(
    workers: &mut [RolloutWorker],
    params: &PolicyParams,
    mode: &LatentMode,
    epsilon: f64,
    fragment: usize,
) -> Result<RolloutBatch> {
    if workers.is_empty() || fragment == 0 {
        return Err(Error::Usage(
            "need at least one worker and a positive fragment".to_string(),
        ));
    }
    let keep_sets = mode.is_trainable();
    let mut recorder = LossRecorder::new();
    let mut streams: Vec<Vec<Vec<RolloutSample>>> = workers
        .iter()
        .map(|w| (0..w.n_agents()).map(|_| Vec::with_capacity(fragment)).collect())
        .collect();
    let mut completed_returns = Vec::new();
    let mut env_steps = 0usize;

    for _ in 0..fragment {
        for (wi, worker) in workers.iter_mut().enumerate() {
            let n = worker.n_agents();
            let (inputs, mut sets) = build_inputs(&worker.obs, mode, epsilon, &mut recorder)?;

            let mut actions: Vec<Action> = Vec::with_capacity(n);
            let mut heads = Vec::with_capacity(n);
            let mut values = Vec::with_capacity(n);
            for input in &inputs {
                let head = params.head(input)?;
                let action = sample_action(&head, &mut worker.action_rng);
                values.push(params.value(input)?);
                actions.push(action);
                heads.push(head);
            }

            let step = worker.env.step(&actions)?;
            worker.return_acc += step.reward;

            for (i, input) in inputs.iter().enumerate() {
                streams[wi][i].push(RolloutSample {
                    input: input.clone(),
                    set: if keep_sets { sets[i].take() } else { None },
                    action: actions[i],
                    behavior: heads[i],
                    log_prob: log_prob(&heads[i], &actions[i]),
                    value: values[i],
                    reward: step.reward,
                    done: step.done,
                });
            }
            env_steps += 1;

            if step.done {
                completed_returns.push(worker.return_acc);
                worker.return_acc = 0.0;
                worker.obs = worker.env.reset();
            } else {
                worker.obs = step.observations;
            }
        }
    }

    // Bootstrap values for the state after the fragment. Encodes here are
    // not part of the acting stream, so they use a throwaway recorder.
    let mut bootstrap_values = Vec::with_capacity(workers.len());
    let mut scratch = LossRecorder::new();
    for worker in workers.iter() {
        let (inputs, _) = build_inputs(&worker.obs, mode, epsilon, &mut scratch)?;
        let mut per_agent = Vec::with_capacity(worker.n_agents());
        for input in &inputs {
            per_agent.push(params.value(input)?);
        }
        bootstrap_values.push(per_agent);
    }

    Ok(RolloutBatch {
        streams,
        bootstrap_values,
        completed_returns,
        recorder,
        env_steps,
    })
}
