//! Multi-agent cooperation with task-agnostic communication.
//!
//! Agents in a shared-reward environment exchange local observations,
//! compress the exchanged set into a fixed-size latent state with a
//! permutation-invariant set autoencoder, and condition independent PPO
//! policies on that latent. The autoencoder is trained once, without
//! rewards, and reused across tasks; its reconstruction loss doubles as
//! an out-of-distribution monitor at execution time.

pub mod checkpoint;
pub mod comms;
pub mod env;
pub mod error;
pub mod ippo;
pub mod metrics;
pub mod nn;
pub mod ood;
pub mod pisa;
pub mod pretrain;
pub mod util;

pub use error::{Error, Result};
