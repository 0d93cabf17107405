//! The training loop: independent PPO over parameter-shared agents, with an
//! optional latent channel that is frozen, trained end-to-end, or absent.
//!
//! Every update treats each agent's stream as an independent single-agent
//! trajectory (the critic sees only that agent's input), so the algorithm is
//! identical across communication arms; only the policy input changes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comms::{LossRecorder, LossWindow};
use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::metrics::{IterationMetrics, OodRow, TrajectoryRow};
use crate::nn::{AdamConfig, AdamState, FlatReader};
use crate::ood::OodCalibration;
use crate::pisa::{ObservationSet, PisaGrad, SetAutoencoderParams};
use crate::util::{derive_seed, mean, percentile};

use super::gae::{gae, normalize_advantages};
use super::policy::PolicyParams;
use super::rollout::{build_inputs, collect_fragment, LatentMode, RolloutWorker};
use super::surrogate::{ppo_surrogate, SurrogateConfig, SurrogateSample};

/// Hyperparameters of the PPO loop.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub lr: f64,
    /// Initial KL penalty coefficient; adapted each iteration.
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub vf_coeff: f64,
    pub entropy_coeff: f64,
    pub iterations: usize,
    /// Steps collected per environment per iteration.
    pub fragment: usize,
    pub minibatch_size: usize,
    /// Passes over the batch per iteration.
    pub sgd_epochs: usize,
    pub policy_hidden: usize,
    /// Communication radius; non-finite means unlimited range.
    pub comm_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.9,
            clip: 0.2,
            lr: 5e-5,
            kl_coeff: 0.01,
            kl_target: 0.01,
            vf_coeff: 1.0,
            entropy_coeff: 0.0,
            iterations: 100,
            fragment: 125,
            minibatch_size: 128,
            sgd_epochs: 8,
            policy_hidden: 256,
            comm_epsilon: f64::INFINITY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gae_lambda must be in [0, 1]".into()));
        }
        if self.clip <= 0.0 || self.lr <= 0.0 || self.kl_target <= 0.0 {
            return Err(Error::Config(
                "clip, lr, and kl_target must be positive".into(),
            ));
        }
        if self.kl_coeff < 0.0 || self.vf_coeff < 0.0 {
            return Err(Error::Config(
                "kl_coeff and vf_coeff must be non-negative".into(),
            ));
        }
        if self.iterations == 0
            || self.fragment == 0
            || self.minibatch_size == 0
            || self.sgd_epochs == 0
            || self.policy_hidden == 0
        {
            return Err(Error::Config(
                "iterations, fragment, minibatch_size, sgd_epochs, and policy_hidden must be positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Everything a training run produces.
pub struct TrainOutcome {
    pub policy: PolicyParams,
    /// The encoder as of the end of training (unchanged unless trainable).
    pub encoder: Option<SetAutoencoderParams>,
    pub metrics: Vec<IterationMetrics>,
    /// One row per iteration when a drift monitor was attached and the run
    /// actually encoded anything.
    pub ood_rows: Vec<OodRow>,
    pub encoder_checksum_start: Option<String>,
    pub encoder_checksum_end: Option<String>,
}

struct FlatSample {
    surrogate: SurrogateSample,
    set: Option<ObservationSet>,
}

/// Runs PPO for `cfg.iterations` iterations over the given environments.
///
/// `envs` should be independently seeded; one rollout worker wraps each.
/// `seed` drives policy initialization, action sampling, and minibatch
/// shuffling, so two calls with identical inputs produce identical outputs.
pub fn train(
    envs: Vec<Box<dyn MultiAgentEnv>>,
    mut mode: LatentMode,
    cfg: &TrainConfig,
    seed: u64,
    monitor: Option<&OodCalibration>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if envs.is_empty() {
        return Err(Error::Usage("train needs at least one environment".into()));
    }
    let obs_dim = envs[0].obs_dim();
    if envs.iter().any(|e| e.obs_dim() != obs_dim) {
        return Err(Error::Config(
            "all environments must share an observation dimension".into(),
        ));
    }
    if let Some(enc) = mode.encoder() {
        if enc.config().d_obs != obs_dim {
            return Err(Error::Config(format!(
                "encoder expects observations of dimension {}, environment has {}",
                enc.config().d_obs,
                obs_dim
            )));
        }
        if envs.iter().any(|e| e.n_agents() > enc.config().n_max) {
            return Err(Error::Config(format!(
                "encoder capacity {} is below the agent count",
                enc.config().n_max
            )));
        }
    }
    let d_z = mode.latent_dim();
    let input_dim = d_z + obs_dim;
    let trainable = mode.is_trainable();
    let encoder_checksum_start = mode.encoder().map(|e| e.checksum());

    let mut policy = PolicyParams::new(input_dim, cfg.policy_hidden, seed);
    let mut workers: Vec<RolloutWorker> = envs
        .into_iter()
        .enumerate()
        .map(|(wi, env)| RolloutWorker::new(env, derive_seed(seed, wi as u64)))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7A17));

    let n_policy = policy.param_count();
    let n_encoder = if trainable {
        mode.encoder().map(|e| e.param_count()).unwrap_or(0)
    } else {
        0
    };
    let mut adam = AdamState::new(n_policy + n_encoder, AdamConfig::with_lr(cfg.lr));
    let mut kl_coeff = cfg.kl_coeff;

    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut ood_rows = Vec::new();
    let mut window = monitor.map(|cal| LossWindow::new(cal.window));
    let mut cumulative_steps = 0usize;
    let mut last_mean_return = 0.0;
    let mut last_p2_5 = 0.0;
    let mut last_p97_5 = 0.0;

    for iteration in 0..cfg.iterations {
        let batch = collect_fragment(&mut workers, &policy, &mode, cfg.comm_epsilon, cfg.fragment)?;
        cumulative_steps += batch.env_steps;

        // Advantages per (environment, agent) stream, normalized jointly.
        let mut samples: Vec<FlatSample> = Vec::new();
        let mut advantages: Vec<f64> = Vec::new();
        for (ei, env_streams) in batch.streams.into_iter().enumerate() {
            for (ai, stream) in env_streams.into_iter().enumerate() {
                let rewards: Vec<f64> = stream.iter().map(|s| s.reward).collect();
                let values: Vec<f64> = stream.iter().map(|s| s.value).collect();
                let dones: Vec<bool> = stream.iter().map(|s| s.done).collect();
                let g = gae(
                    &rewards,
                    &values,
                    &dones,
                    batch.bootstrap_values[ei][ai],
                    cfg.gamma,
                    cfg.gae_lambda,
                )?;
                for (t, s) in stream.into_iter().enumerate() {
                    advantages.push(g.advantages[t]);
                    samples.push(FlatSample {
                        surrogate: SurrogateSample {
                            input: s.input,
                            action: s.action,
                            behavior: s.behavior,
                            behavior_log_prob: s.log_prob,
                            advantage: 0.0,
                            value_target: g.value_targets[t],
                        },
                        set: s.set,
                    });
                }
            }
        }
        normalize_advantages(&mut advantages);
        for (s, a) in samples.iter_mut().zip(&advantages) {
            s.surrogate.advantage = *a;
        }

        let scfg = SurrogateConfig {
            clip: cfg.clip,
            kl_coeff,
            entropy_coeff: cfg.entropy_coeff,
            vf_coeff: cfg.vf_coeff,
        };
        let mut indices: Vec<usize> = (0..samples.len()).collect();
        let mut kl_weighted = 0.0;
        let mut entropy_weighted = 0.0;
        let mut seen = 0usize;

        for _ in 0..cfg.sgd_epochs {
            indices.shuffle(&mut shuffle_rng);
            for chunk in indices.chunks(cfg.minibatch_size) {
                // Latents are recomputed under the current encoder so its
                // gradient flows through this minibatch's inputs.
                let mut mb: Vec<SurrogateSample> = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let mut s = samples[i].surrogate.clone();
                    if trainable {
                        let set = samples[i]
                            .set
                            .as_ref()
                            .expect("trainable rollouts keep their sets");
                        let enc = mode.encoder().expect("trainable mode has an encoder");
                        let z = enc.encode(set)?;
                        s.input[..d_z].copy_from_slice(&z.values);
                    }
                    mb.push(s);
                }

                let out = ppo_surrogate(&policy, &mb, &scfg, trainable)?;
                kl_weighted += out.mean_kl * chunk.len() as f64;
                entropy_weighted += out.mean_entropy * chunk.len() as f64;
                seen += chunk.len();

                let mut grad = out.grad;
                if trainable {
                    let enc = mode.encoder().expect("trainable mode has an encoder");
                    let mut pg = PisaGrad::zeros_like(enc);
                    for (k, &i) in chunk.iter().enumerate() {
                        let set = samples[i].set.as_ref().expect("set kept");
                        pg.accumulate(&enc.encode_backward(set, &out.input_grads[k][..d_z])?);
                    }
                    pg.write_flat(&mut grad);
                }

                let mut flat = policy.to_flat();
                if let (true, Some(enc)) = (trainable, mode.encoder()) {
                    enc.write_flat(&mut flat);
                }
                adam.step(&mut flat, &grad)?;
                let mut reader = FlatReader::new(&flat);
                policy.read_flat(&mut reader)?;
                if trainable {
                    if let LatentMode::Trainable(enc) = &mut mode {
                        enc.read_flat(&mut reader)?;
                    }
                }
                reader.finish()?;
            }
        }

        let iter_kl = if seen > 0 { kl_weighted / seen as f64 } else { 0.0 };
        let iter_entropy = if seen > 0 {
            entropy_weighted / seen as f64
        } else {
            0.0
        };
        // Penalty coefficient adaptation: push the measured KL toward target.
        if iter_kl > 2.0 * cfg.kl_target {
            kl_coeff *= 1.5;
        } else if iter_kl < cfg.kl_target / 2.0 {
            kl_coeff *= 0.5;
        }

        if !batch.completed_returns.is_empty() {
            last_mean_return = mean(&batch.completed_returns);
            last_p2_5 = percentile(&batch.completed_returns, 2.5);
            last_p97_5 = percentile(&batch.completed_returns, 97.5);
        }
        metrics.push(IterationMetrics {
            iteration,
            env_steps: cumulative_steps,
            mean_return: last_mean_return,
            return_p2_5: last_p2_5,
            return_p97_5: last_p97_5,
            recon_rmse_mean: batch.recorder.mean_rmse().unwrap_or(0.0),
            kl: iter_kl,
            entropy: iter_entropy,
        });

        if let (Some(cal), Some(win)) = (monitor, window.as_mut()) {
            if let Some(m) = batch.recorder.mean_total() {
                win.push(m);
                let wm = win.mean().unwrap_or(0.0);
                ood_rows.push(OodRow {
                    iteration,
                    window_recon_loss: wm,
                    threshold: cal.threshold,
                    ood_flag: cal.flags(wm),
                });
            }
        }
    }

    let encoder_checksum_end = mode.encoder().map(|e| e.checksum());
    let encoder = match mode {
        LatentMode::Frozen(enc) => Some((*enc).clone()),
        LatentMode::Trainable(enc) => Some(enc),
        LatentMode::Zero(_) => None,
    };
    Ok(TrainOutcome {
        policy,
        encoder,
        metrics,
        ood_rows,
        encoder_checksum_start,
        encoder_checksum_end,
    })
}

/// Deterministic evaluation summary.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    /// Mean reconstruction RMSE over every encode (0 without a channel).
    pub recon_rmse_mean: f64,
    /// Pose trace of the first episode, one row per (step, agent).
    pub trajectory: Vec<TrajectoryRow>,
}

/// Rolls out `episodes` episodes acting on the policy mean (no sampling).
pub fn evaluate(
    env: &mut dyn MultiAgentEnv,
    params: &PolicyParams,
    mode: &LatentMode,
    epsilon: f64,
    episodes: usize,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Usage("evaluate needs at least one episode".into()));
    }
    let mut recorder = LossRecorder::new();
    let mut returns = Vec::with_capacity(episodes);
    let mut trajectory = Vec::new();
    for episode in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        let mut step_idx = 0usize;
        loop {
            let (inputs, _) = build_inputs(&obs, mode, epsilon, &mut recorder)?;
            let mut actions = Vec::with_capacity(inputs.len());
            for input in &inputs {
                actions.push(params.head(input)?.mean);
            }
            let step = env.step(&actions)?;
            ret += step.reward;
            if episode == 0 {
                for (i, o) in obs.iter().enumerate() {
                    trajectory.push(TrajectoryRow {
                        step: step_idx,
                        agent: i,
                        x: o[0],
                        y: o[1],
                        vx: *o.get(2).unwrap_or(&0.0),
                        vy: *o.get(3).unwrap_or(&0.0),
                        reward: step.reward,
                    });
                }
            }
            step_idx += 1;
            if step.done {
                break;
            }
            obs = step.observations;
        }
        returns.push(ret);
    }
    Ok(EvalReport {
        mean_return: mean(&returns),
        recon_rmse_mean: recorder.mean_rmse().unwrap_or(0.0),
        returns,
        trajectory,
    })
}
