//! Run configuration: a strict TOML schema with environment-variable
//! overrides.
//!
//! Every key lives under a section (`[run]`, `[env]`, `[train]`, ...), and
//! any key can be overridden by `AGNOCOMM_<SECTION>_<KEY>` before the
//! typed parse. Unknown sections and keys are rejected everywhere: a typo
//! in an experiment config must fail, not silently fall back to a default.

use std::path::{Path, PathBuf};

use agnocomm_core::env::{EnvConfig, TaskId};
use agnocomm_core::ippo::TrainConfig;
use agnocomm_core::pisa::PisaConfig;
use agnocomm_core::pretrain::Provenance;
use agnocomm_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "AGNOCOMM_";

/// Experimental arm: where the policy's latent input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Frozen encoder pretrained on reward-free data.
    TaskAgnostic,
    /// Encoder trained end-to-end through RL on a source task, then frozen
    /// for the target task.
    TaskSpecific,
    /// No communication; the latent slots stay zero.
    NoComms,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::TaskAgnostic => "task_agnostic",
            Arm::TaskSpecific => "task_specific",
            Arm::NoComms => "no_comms",
        })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_task() -> TaskId {
    TaskId::Discovery
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Required by train and eval.
    #[serde(default)]
    pub arm: Option<Arm>,
    #[serde(default = "default_task")]
    pub task: TaskId,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            arm: None,
            task: default_task(),
            seeds: default_seeds(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommSection {
    /// Communication radius; `inf` means everyone hears everyone.
    pub epsilon: f64,
}

impl Default for CommSection {
    fn default() -> Self {
        Self {
            epsilon: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub d_z: usize,
    pub d_key: usize,
    pub hidden: usize,
    pub n_max: usize,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            d_z: 72,
            d_key: 16,
            hidden: 256,
            n_max: 10,
        }
    }
}

impl AutoencoderSection {
    pub fn pisa_config(&self, d_obs: usize) -> PisaConfig {
        PisaConfig {
            d_obs,
            d_z: self.d_z,
            d_key: self.d_key,
            hidden: self.hidden,
            n_max: self.n_max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub provenance: Provenance,
    pub agent_counts: Vec<usize>,
    pub samples_per_count: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            provenance: Provenance::RandomObservations,
            agent_counts: vec![2, 3, 4],
            samples_per_count: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    /// Path to the dataset produced by `collect`.
    pub dataset: Option<PathBuf>,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            dataset: None,
            batch_size: 256,
            iterations: 15000,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub vf_coeff: f64,
    pub entropy_coeff: f64,
    pub iterations: usize,
    /// Environment steps per iteration; must divide into whole fragments.
    pub train_batch: usize,
    pub fragment: usize,
    pub minibatch: usize,
    pub sgd_epochs: usize,
    pub policy_hidden: usize,
    /// Pretrained encoder; required for the task_agnostic arm.
    pub encoder_checkpoint: Option<PathBuf>,
    /// Source task trained end-to-end first; required for task_specific.
    pub source_task: Option<TaskId>,
    /// Optional drift calibration; when set, training logs monitor verdicts.
    pub calibration: Option<PathBuf>,
}

impl Default for TrainSection {
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
            iterations: 60,
            train_batch: 6000,
            fragment: 125,
            minibatch: 512,
            sgd_epochs: 8,
            policy_hidden: 256,
            encoder_checkpoint: None,
            source_task: None,
            calibration: None,
        }
    }
}

impl TrainSection {
    pub fn core_config(&self, comm_epsilon: f64) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            lr: self.lr,
            kl_coeff: self.kl_coeff,
            kl_target: self.kl_target,
            vf_coeff: self.vf_coeff,
            entropy_coeff: self.entropy_coeff,
            iterations: self.iterations,
            fragment: self.fragment,
            minibatch_size: self.minibatch,
            sgd_epochs: self.sgd_epochs,
            policy_hidden: self.policy_hidden,
            comm_epsilon,
        }
    }

    pub fn n_envs(&self) -> Result<usize> {
        if self.fragment == 0 || !self.train_batch.is_multiple_of(self.fragment) {
            return Err(Error::Config(format!(
                "train_batch ({}) must be a positive multiple of fragment ({})",
                self.train_batch, self.fragment
            )));
        }
        Ok(self.train_batch / self.fragment)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Completed training run directory to evaluate.
    pub run_dir: Option<PathBuf>,
    pub episodes: usize,
    /// Base seed for evaluation environments (kept apart from training).
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            run_dir: None,
            episodes: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    pub encoder_checkpoint: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub iterations: usize,
    pub steps_per_iteration: usize,
    /// Gaussian sensor-noise level applied to agent 0; 0 disables.
    pub noise_sigma: f64,
    /// Monitor iteration at which the noise switches on.
    pub noise_onset: usize,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            encoder_checkpoint: None,
            calibration: None,
            iterations: 30,
            steps_per_iteration: 25,
            noise_sigma: 0.0,
            noise_onset: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvConfig,
    pub comm: CommSection,
    pub autoencoder: AutoencoderSection,
    pub collect: CollectSection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ood: OodSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        self.env.validate()?;
        if self.comm.epsilon.is_nan() || self.comm.epsilon < 0.0 {
            return Err(Error::Config(
                "comm.epsilon must be non-negative (inf for full broadcast)".into(),
            ));
        }
        Ok(())
    }

    /// First seed; used by the single-seed stages (collect, pretrain, ood).
    pub fn primary_seed(&self) -> u64 {
        self.run.seeds[0]
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.run
            .out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("run.out_dir is required (or pass --out)".into()))
    }

    /// The effective configuration, serialized for the run-dir snapshot.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config encode: {e}")))
    }
}

/// Loads a config file, applies `AGNOCOMM_*` environment overrides, then
/// the command-line overrides, and validates the result.
pub fn load_config(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let overrides: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    let mut cfg = parse_config(&text, &overrides)?;
    if let Some(seed) = seed_override {
        cfg.run.seeds = vec![seed];
    }
    if let Some(out) = out_override {
        cfg.run.out_dir = Some(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pure parsing core: TOML text plus override pairs -> typed config.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    for (key, raw) in overrides {
        apply_override(&mut table, key, raw)?;
    }
    let value = toml::Value::Table(table);
    RunConfig::deserialize(value).map_err(|e| Error::Config(format!("config: {e}")))
}

/// `AGNOCOMM_TRAIN_GAE_LAMBDA=0.95` sets `train.gae_lambda`. The first `_`
/// after the prefix splits section from key; the value is parsed as a TOML
/// literal, falling back to a plain string.
fn apply_override(table: &mut toml::Table, env_key: &str, raw: &str) -> Result<()> {
    let rest = &env_key[ENV_PREFIX.len()..];
    let (section, key) = rest.split_once('_').ok_or_else(|| {
        Error::Config(format!(
            "override {env_key} must look like {ENV_PREFIX}<SECTION>_<KEY>"
        ))
    })?;
    let section = section.to_ascii_lowercase();
    let key = key.to_ascii_lowercase();
    const SECTIONS: &[&str] = &[
        "run",
        "env",
        "comm",
        "autoencoder",
        "collect",
        "pretrain",
        "train",
        "eval",
        "ood",
    ];
    if !SECTIONS.contains(&section.as_str()) {
        return Err(Error::Config(format!(
            "override {env_key}: unknown section '{section}'"
        )));
    }
    let value = parse_scalar(raw);
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry.as_table_mut().ok_or_else(|| {
        Error::Config(format!("config section '{section}' is not a table"))
    })?;
    sub.insert(key, value);
    Ok(())
}

/// Parses an override value as a TOML literal (number, bool, array, ...);
/// anything that does not parse is taken as a string.
fn parse_scalar(raw: &str) -> toml::Value {
    let attempt: std::result::Result<toml::Table, _> = toml::from_str(&format!("v = {raw}"));
    match attempt {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
