//! `pretrain`: train the set autoencoder on a collected dataset and
//! calibrate the drift threshold from its converged loss.

use agnocomm_core::metrics::write_loss_trace_csv;
use agnocomm_core::ood::OodCalibration;
use agnocomm_core::pisa::TrainSettings;
use agnocomm_core::pretrain::{pretrain, PretrainDataset};
use agnocomm_core::{Error, Result};

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::rundir::RunDir;

pub const ENCODER_FILE: &str = "encoder.agno";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const CALIBRATION_FILE: &str = "calibration.toml";

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let dataset_path = cfg
        .pretrain
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("pretrain.dataset is required".into()))?;
    let dataset = PretrainDataset::load(dataset_path)?;
    let seed = cfg.primary_seed();
    let settings = TrainSettings {
        batch_size: cfg.pretrain.batch_size,
        iterations: cfg.pretrain.iterations,
        lr: cfg.pretrain.lr,
        seed,
    };
    let pisa_cfg = cfg.autoencoder.pisa_config(dataset.d_obs);
    let outcome = pretrain(&dataset, pisa_cfg, &settings, seed)?;
    let calibration = OodCalibration::from_report(&outcome.report);

    let mut dir = RunDir::create(cfg.out_dir()?, "pretrain", &cfg.snapshot()?)?;
    outcome.params.save(&dir.path(ENCODER_FILE)?)?;
    dir.note(ENCODER_FILE);
    write_loss_trace_csv(&dir.path(TRACE_FILE)?, &outcome.trace)?;
    dir.note(TRACE_FILE);
    outcome.report.save(&dir.path(REPORT_FILE)?)?;
    dir.note(REPORT_FILE);
    calibration.save(&dir.path(CALIBRATION_FILE)?)?;
    dir.note(CALIBRATION_FILE);
    println!(
        "pretrain: {} iterations, final loss {:.6}, converged mean {:.6}, drift threshold {:.6}",
        outcome.report.iterations,
        outcome.trace.last().map(|r| r.total).unwrap_or(f64::NAN),
        outcome.report.loss_mean,
        calibration.threshold
    );
    dir.finish()?;
    Ok(Outcome::Done)
}
