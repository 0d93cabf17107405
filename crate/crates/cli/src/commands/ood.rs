//! `ood`: run the reconstruction-loss drift monitor and report a verdict.
//!
//! The environment runs under random actions (matching the calibration's
//! provenance), optionally with Gaussian sensor noise switched on partway,
//! and each iteration's windowed loss is compared against the calibrated
//! threshold. Any flagged window makes the whole run report drift.

use agnocomm_core::env::ForageWorld;
use agnocomm_core::metrics::write_ood_csv;
use agnocomm_core::ood::{monitor_rollout, MonitorSettings, OodCalibration};
use agnocomm_core::pisa::SetAutoencoderParams;
use agnocomm_core::{Error, Result};

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::rundir::RunDir;

pub const MONITOR_FILE: &str = "monitor.csv";

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let encoder_path = cfg
        .ood
        .encoder_checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("ood.encoder_checkpoint is required".into()))?;
    let calibration_path = cfg
        .ood
        .calibration
        .as_deref()
        .ok_or_else(|| Error::Config("ood.calibration is required".into()))?;
    let encoder = SetAutoencoderParams::load(encoder_path)?;
    let calibration = OodCalibration::load(calibration_path)?;
    let seed = cfg.primary_seed();
    let settings = MonitorSettings {
        iterations: cfg.ood.iterations,
        steps_per_iteration: cfg.ood.steps_per_iteration,
        epsilon: cfg.comm.epsilon,
        noise_sigma: cfg.ood.noise_sigma,
        noise_onset: cfg.ood.noise_onset,
        seed,
    };
    let mut env = ForageWorld::new(cfg.env, cfg.run.task)?;
    let rows = monitor_rollout(&mut env, &encoder, &calibration, &settings)?;

    let mut dir = RunDir::create(cfg.out_dir()?, "ood", &cfg.snapshot()?)?;
    write_ood_csv(&dir.path(MONITOR_FILE)?, &rows)?;
    dir.note(MONITOR_FILE);

    let flagged = rows.iter().filter(|r| r.ood_flag).count();
    let verdict = if flagged > 0 { "DRIFT" } else { "in-distribution" };
    println!(
        "ood: {flagged}/{} windows above threshold {:.6} -> {verdict}",
        rows.len(),
        calibration.threshold
    );
    dir.finish()?;
    if flagged > 0 {
        return Ok(Outcome::OodDetected);
    }
    Ok(Outcome::Done)
}
