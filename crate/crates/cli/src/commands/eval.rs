//! `eval`: deterministic evaluation of a completed training run.
//!
//! Reads the run's config snapshot and checkpoints, rebuilds each seed's
//! policy and latent arm, and rolls out mean actions on fresh environments
//! seeded from `eval.seed` (independent of the training streams).

use std::path::Path;
use std::sync::Arc;

use agnocomm_core::env::{EnvConfig, ForageWorld};
use agnocomm_core::ippo::{evaluate, LatentMode, PolicyParams};
use agnocomm_core::metrics::write_trajectory_csv;
use agnocomm_core::pisa::SetAutoencoderParams;
use agnocomm_core::util::{derive_seed, mean};
use agnocomm_core::{Error, Result};

use crate::commands::train::{policy_file, seed_encoder_file, SHARED_ENCODER_FILE};
use crate::commands::Outcome;
use crate::config::{parse_config, Arm, RunConfig};
use crate::rundir::{RunDir, RunManifest, SNAPSHOT_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "seed,mean_return,recon_rmse_mean";

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let run_dir = cfg
        .eval
        .run_dir
        .as_deref()
        .ok_or_else(|| Error::Config("eval.run_dir is required".into()))?;
    let manifest = RunManifest::load(run_dir)?;
    if manifest.stage != "train" {
        return Err(Error::Config(format!(
            "eval.run_dir points at a '{}' run, expected 'train'",
            manifest.stage
        )));
    }
    let snapshot = std::fs::read_to_string(run_dir.join(SNAPSHOT_FILE))
        .map_err(|e| Error::Config(format!("cannot read run snapshot: {e}")))?;
    let train_cfg = parse_config(&snapshot, &[])?;
    let arm = train_cfg
        .run
        .arm
        .ok_or_else(|| Error::Config("run snapshot is missing run.arm".into()))?;
    if cfg.eval.episodes == 0 {
        return Err(Error::Config("eval.episodes must be > 0".into()));
    }

    // Default next to the checkpoints it came from; --out redirects.
    let out_root = match cfg.run.out_dir.as_deref() {
        Some(p) => p.to_path_buf(),
        None => run_dir.join("eval"),
    };
    let mut dir = RunDir::create(&out_root, "eval", &cfg.snapshot()?)?;

    let shared_encoder: Option<Arc<SetAutoencoderParams>> = match arm {
        Arm::TaskAgnostic => Some(Arc::new(SetAutoencoderParams::load(
            &run_dir.join(SHARED_ENCODER_FILE),
        )?)),
        _ => None,
    };

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut means = Vec::new();
    for &seed in &train_cfg.run.seeds {
        let policy = PolicyParams::load(&run_dir.join(policy_file(seed)))?;
        let mode = match arm {
            Arm::TaskAgnostic => LatentMode::Frozen(Arc::clone(shared_encoder.as_ref().unwrap())),
            Arm::TaskSpecific => LatentMode::Frozen(Arc::new(SetAutoencoderParams::load(
                &run_dir.join(seed_encoder_file(seed)),
            )?)),
            Arm::NoComms => LatentMode::Zero(train_cfg.autoencoder.d_z),
        };
        let env_cfg = EnvConfig {
            seed: derive_seed(cfg.eval.seed, seed),
            ..train_cfg.env
        };
        let mut env = ForageWorld::new(env_cfg, train_cfg.run.task)?;
        let report = evaluate(
            &mut env,
            &policy,
            &mode,
            train_cfg.comm.epsilon,
            cfg.eval.episodes,
        )?;

        write_returns(&dir.path(&format!("returns_seed{seed}.csv"))?, &report.returns)?;
        dir.note(&format!("returns_seed{seed}.csv"));
        write_trajectory_csv(
            &dir.path(&format!("trajectory_seed{seed}.csv"))?,
            &report.trajectory,
        )?;
        dir.note(&format!("trajectory_seed{seed}.csv"));

        summary.push_str(&format!(
            "{seed},{},{}\n",
            report.mean_return, report.recon_rmse_mean
        ));
        means.push(report.mean_return);
        println!(
            "eval[{arm}] seed {seed}: mean return {:.4} over {} episodes",
            report.mean_return, cfg.eval.episodes
        );
    }
    dir.write_text(SUMMARY_FILE, &summary)?;
    dir.note(SUMMARY_FILE);
    println!(
        "eval[{arm}]: {} policies, grand mean return {:.4} -> {}",
        means.len(),
        mean(&means),
        dir.root().display()
    );
    dir.finish()?;
    Ok(Outcome::Done)
}

fn write_returns(path: &Path, returns: &[f64]) -> Result<()> {
    let mut text = String::from("episode,return\n");
    for (i, r) in returns.iter().enumerate() {
        text.push_str(&format!("{i},{r}\n"));
    }
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}
