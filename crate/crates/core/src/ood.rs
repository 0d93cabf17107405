//! Distribution-shift monitor for the communication channel.
//!
//! The reconstruction loss of the set autoencoder doubles as a drift score:
//! it was driven to a known level during pretraining, so a trailing-window
//! mean that climbs well above that level means the encoder is seeing inputs
//! unlike anything it was trained on. The flag threshold is
//! `mean + 3 * std` of the late-pretraining loss, and the decision uses the
//! mean over a short trailing window rather than single batches so isolated
//! spikes do not trip it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::comms::{encode_for_agent, LossRecorder, LossWindow};
use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::metrics::OodRow;
use crate::pisa::SetAutoencoderParams;
use crate::pretrain::PretrainReport;
use crate::util::derive_seed;

/// Default trailing-window length, in monitor iterations.
pub const DEFAULT_WINDOW: usize = 10;
/// Flag when the window mean exceeds `mean + SIGMA_MULTIPLIER * std`.
pub const SIGMA_MULTIPLIER: f64 = 3.0;

/// Frozen calibration computed from late-pretraining loss statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodCalibration {
    pub loss_mean: f64,
    pub loss_std: f64,
    pub threshold: f64,
    pub window: usize,
}

impl OodCalibration {
    /// Derives the calibration from a pretraining report.
    pub fn from_report(report: &PretrainReport) -> Self {
        Self::from_stats(report.loss_mean, report.loss_std, DEFAULT_WINDOW)
    }

    pub fn from_stats(loss_mean: f64, loss_std: f64, window: usize) -> Self {
        Self {
            loss_mean,
            loss_std,
            threshold: loss_mean + SIGMA_MULTIPLIER * loss_std,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_mean.is_finite() && self.loss_std.is_finite() && self.threshold.is_finite())
        {
            return Err(Error::Config("calibration values must be finite".into()));
        }
        if self.loss_std < 0.0 {
            return Err(Error::Config("loss_std must be non-negative".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(())
    }

    /// Strictly above the threshold counts as out-of-distribution.
    pub fn flags(&self, window_mean: f64) -> bool {
        window_mean > self.threshold
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("calibration encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cal: Self =
            toml::from_str(&text).map_err(|e| Error::Format(format!("calibration decode: {e}")))?;
        cal.validate()?;
        Ok(cal)
    }
}

/// Overlays zero-mean Gaussian noise on one agent's observation, simulating
/// a faulty sensor feeding the shared channel.
pub fn inject_noise_observation(obs: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    for v in obs.iter_mut() {
        *v += sigma * crate::nn::standard_normal(rng);
    }
}

/// Settings for a monitoring run.
#[derive(Debug, Clone)]
pub struct MonitorSettings {
    /// Monitor iterations (one row each).
    pub iterations: usize,
    /// Environment steps folded into each iteration's loss statistic.
    pub steps_per_iteration: usize,
    /// Communication radius; non-finite means everyone hears everyone.
    pub epsilon: f64,
    /// Noise level applied to agent 0's observation, 0 to disable.
    pub noise_sigma: f64,
    /// Iteration at which the noise switches on (rows before it are clean).
    pub noise_onset: usize,
    pub seed: u64,
}

/// Runs the environment under random actions, encoding every agent's
/// broadcast each step, and emits one verdict row per iteration.
pub fn monitor_rollout(
    env: &mut dyn MultiAgentEnv,
    encoder: &SetAutoencoderParams,
    cal: &OodCalibration,
    settings: &MonitorSettings,
) -> Result<Vec<OodRow>> {
    cal.validate()?;
    let n = env.n_agents();
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0x0D0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0x0D1));
    let mut window = LossWindow::new(cal.window);
    let mut joint_obs = env.reset();
    let mut rows = Vec::with_capacity(settings.iterations);
    for iteration in 0..settings.iterations {
        let mut recorder = LossRecorder::new();
        for _ in 0..settings.steps_per_iteration {
            let mut obs = joint_obs.clone();
            if settings.noise_sigma > 0.0 && iteration >= settings.noise_onset {
                inject_noise_observation(&mut obs[0], settings.noise_sigma, &mut noise_rng);
            }
            let positions: Vec<[f64; 2]> = obs.iter().map(|o| [o[0], o[1]]).collect();
            for i in 0..n {
                encode_for_agent(encoder, settings.epsilon, i, &obs, &positions, &mut recorder)?;
            }
            let actions: Vec<[f64; 2]> = (0..n)
                .map(|_| [action_rng.gen_range(-1.0..=1.0), action_rng.gen_range(-1.0..=1.0)])
                .collect();
            let step = env.step(&actions)?;
            joint_obs = if step.done { env.reset() } else { step.observations };
        }
        window.push(recorder.mean_total().unwrap_or(0.0));
        let window_mean = window.mean().unwrap_or(0.0);
        rows.push(OodRow {
            iteration,
            window_recon_loss: window_mean,
            threshold: cal.threshold,
            ood_flag: cal.flags(window_mean),
        });
    }
    Ok(rows)
}
