//! Independent PPO for parameter-shared multi-agent control.
//!
//! Pieces: generalized advantage estimation, a diagonal Gaussian
//! actor/critic, the clipped-plus-KL surrogate with exact gradients,
//! fragment-based experience collection, and the training loop that ties
//! them to the communication channel.

pub mod gae;
pub mod policy;
pub mod rollout;
pub mod surrogate;
pub mod train;

pub use gae::{gae, normalize_advantages, GaeResult};
pub use policy::{
    entropy, head_from_output, kl_divergence, log_prob, sample_action, GaussianHead, PolicyParams,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use rollout::{
    build_inputs, collect_fragment, LatentMode, RolloutBatch, RolloutSample, RolloutWorker,
};
pub use surrogate::{ppo_surrogate, SurrogateConfig, SurrogateOutcome, SurrogateSample};
pub use train::{evaluate, train, EvalReport, TrainConfig, TrainOutcome};
