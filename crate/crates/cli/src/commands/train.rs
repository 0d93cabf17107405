//! `train`: PPO over independent policies, one run per seed, under one of
//! three latent arms:
//!
//! - `task_agnostic`: frozen encoder from `pretrain`.
//! - `task_specific`: encoder first trained end-to-end on a source task,
//!   then frozen for the configured target task.
//! - `no_comms`: zero latent of the same width, identical architecture.

use std::sync::Arc;

use agnocomm_core::env::{EnvConfig, ForageWorld, MultiAgentEnv, TaskId};
use agnocomm_core::ippo::{train, LatentMode, TrainOutcome};
use agnocomm_core::metrics::{
    aggregate_metrics, write_aggregate_csv, write_metrics_csv, write_ood_csv, IterationMetrics,
};
use agnocomm_core::ood::OodCalibration;
use agnocomm_core::pisa::SetAutoencoderParams;
use agnocomm_core::util::derive_seed;
use agnocomm_core::{Error, Result};

use crate::commands::Outcome;
use crate::config::{Arm, RunConfig};
use crate::rundir::RunDir;

pub const AGGREGATE_FILE: &str = "metrics/aggregate.csv";
pub const SHARED_ENCODER_FILE: &str = "checkpoints/encoder.agno";

pub fn seed_metrics_file(seed: u64) -> String {
    format!("metrics/seed{seed}.csv")
}

pub fn policy_file(seed: u64) -> String {
    format!("checkpoints/policy_seed{seed}.agno")
}

/// Source-task encoder trained end-to-end for the task_specific arm.
pub fn seed_encoder_file(seed: u64) -> String {
    format!("checkpoints/encoder_seed{seed}.agno")
}

/// Fresh worker environments; `stream` separates source from target stages.
fn make_envs(
    env_cfg: &EnvConfig,
    task: TaskId,
    n_envs: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Box<dyn MultiAgentEnv>>> {
    let mut envs: Vec<Box<dyn MultiAgentEnv>> = Vec::with_capacity(n_envs);
    for i in 0..n_envs {
        let cfg = EnvConfig {
            seed: derive_seed(seed, stream + i as u64),
            ..*env_cfg
        };
        envs.push(Box::new(ForageWorld::new(cfg, task)?));
    }
    Ok(envs)
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let arm = cfg
        .run
        .arm
        .ok_or_else(|| Error::Config("run.arm is required for train".into()))?;
    let core_cfg = cfg.train.core_config(cfg.comm.epsilon);
    core_cfg.validate()?;
    let n_envs = cfg.train.n_envs()?;

    let shared_encoder: Option<Arc<SetAutoencoderParams>> = match arm {
        Arm::TaskAgnostic => {
            let path = cfg.train.encoder_checkpoint.as_deref().ok_or_else(|| {
                Error::Config("train.encoder_checkpoint is required for task_agnostic".into())
            })?;
            Some(Arc::new(SetAutoencoderParams::load(path)?))
        }
        Arm::TaskSpecific | Arm::NoComms => None,
    };
    let source_task: Option<TaskId> = match arm {
        Arm::TaskSpecific => Some(cfg.train.source_task.ok_or_else(|| {
            Error::Config("train.source_task is required for task_specific".into())
        })?),
        _ => None,
    };
    let calibration = match &cfg.train.calibration {
        Some(path) => Some(OodCalibration::load(path)?),
        None => None,
    };

    let mut dir = RunDir::create(cfg.out_dir()?, "train", &cfg.snapshot()?)?;
    if let Some(enc) = &shared_encoder {
        enc.save(&dir.path(SHARED_ENCODER_FILE)?)?;
        dir.note(SHARED_ENCODER_FILE);
    }

    let mut per_seed: Vec<Vec<IterationMetrics>> = Vec::new();
    let mut any_flag = false;
    for &seed in &cfg.run.seeds {
        let mode = match arm {
            Arm::TaskAgnostic => {
                LatentMode::Frozen(Arc::clone(shared_encoder.as_ref().unwrap()))
            }
            Arm::TaskSpecific => {
                // Stage 1: end-to-end on the source task with a fresh
                // encoder; only the encoder survives to stage 2.
                let task = source_task.unwrap();
                let pisa_cfg = cfg.autoencoder.pisa_config(cfg.env.obs_dim());
                let fresh = SetAutoencoderParams::new(pisa_cfg, derive_seed(seed, 0x5E))?;
                let envs = make_envs(&cfg.env, task, n_envs, seed, 0x5000)?;
                let source = train(
                    envs,
                    LatentMode::Trainable(fresh),
                    &core_cfg,
                    derive_seed(seed, 0x51),
                    None,
                )?;
                let encoder = source.encoder.expect("trainable run returns its encoder");
                let rel = seed_encoder_file(seed);
                encoder.save(&dir.path(&rel)?)?;
                dir.note(&rel);
                let rel = format!("metrics/source_seed{seed}.csv");
                write_metrics_csv(&dir.path(&rel)?, &source.metrics)?;
                dir.note(&rel);
                LatentMode::Frozen(Arc::new(encoder))
            }
            Arm::NoComms => LatentMode::Zero(cfg.autoencoder.d_z),
        };

        let envs = make_envs(&cfg.env, cfg.run.task, n_envs, seed, 0x2000)?;
        let outcome: TrainOutcome = train(envs, mode, &core_cfg, seed, calibration.as_ref())?;

        let rel = seed_metrics_file(seed);
        write_metrics_csv(&dir.path(&rel)?, &outcome.metrics)?;
        dir.note(&rel);
        let rel = policy_file(seed);
        outcome.policy.save(&dir.path(&rel)?)?;
        dir.note(&rel);
        if !outcome.ood_rows.is_empty() {
            let rel = format!("ood/seed{seed}.csv");
            write_ood_csv(&dir.path(&rel)?, &outcome.ood_rows)?;
            dir.note(&rel);
            let flags = outcome.ood_rows.iter().filter(|r| r.ood_flag).count();
            any_flag |= flags > 0;
            println!(
                "train[{arm}] seed {seed}: drift monitor flagged {flags}/{} windows",
                outcome.ood_rows.len()
            );
        }
        let last = outcome.metrics.last().expect("iterations > 0");
        println!(
            "train[{arm}] seed {seed}: {} iterations, mean return {:.4}",
            outcome.metrics.len(),
            last.mean_return
        );
        per_seed.push(outcome.metrics);
    }

    let aggregate = aggregate_metrics(&per_seed)?;
    write_aggregate_csv(&dir.path(AGGREGATE_FILE)?, &aggregate)?;
    dir.note(AGGREGATE_FILE);
    let last = aggregate.last().expect("iterations > 0");
    println!(
        "train[{arm}]: {} seeds, final mean return {:.4} [{:.4}, {:.4}]",
        cfg.run.seeds.len(),
        last.mean_return,
        last.return_p2_5,
        last.return_p97_5
    );
    dir.finish()?;
    if any_flag {
        return Ok(Outcome::OodDetected);
    }
    Ok(Outcome::Done)
}
