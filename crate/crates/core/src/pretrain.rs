//! Task-agnostic pretraining of the communication encoder.
//!
//! The encoder is trained once, on observation sets collected without any
//! task signal, and then reused verbatim across tasks and agent counts.
//! Two collectors are provided:
//!
//! * random policy: roll environments forward under uniformly random
//!   actions and keep each step's joint observation set;
//! * random observations: sample synthetic world states (positions,
//!   velocities, entities all drawn uniformly over their valid ranges)
//!   and render observations from them, covering a superset of the states
//!   a behaving policy visits.
//!
//! Reward-freeness is structural: collectors only touch environments
//! through the `RewardFree` wrapper, which drops the reward scalar before
//! anything downstream can read it. An environment reporting arbitrary
//! garbage rewards yields a bit-identical dataset.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{observation_of, Action, EnvConfig, ForageWorld, MultiAgentEnv, TaskId};
use crate::error::{Error, Result};
use crate::pisa::{
    self, ObservationSet, PisaConfig, PisaTrainer, SetAutoencoderParams, TraceRow, TrainSettings,
};
use crate::util::{derive_seed, mean, population_std};

/// How a dataset was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RandomPolicy,
    RandomObservations,
}

impl Provenance {
    fn code(self) -> f64 {
        match self {
            Provenance::RandomPolicy => 0.0,
            Provenance::RandomObservations => 1.0,
        }
    }

    fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(Provenance::RandomPolicy),
            1 => Ok(Provenance::RandomObservations),
            other => Err(Error::Format(format!("unknown provenance code {other}"))),
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::RandomPolicy => "random_policy",
            Provenance::RandomObservations => "random_observations",
        })
    }
}

/// A collection of observation sets for encoder training.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDataset {
    pub d_obs: usize,
    pub provenance: Provenance,
    /// Agent counts the collector ran with; set cardinalities come from here.
    pub agent_counts: Vec<usize>,
    pub samples: Vec<ObservationSet>,
}

impl PretrainDataset {
    pub fn max_cardinality(&self) -> usize {
        self.samples.iter().map(ObservationSet::len).max().unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new();
        ckpt.push(
            "meta",
            vec![3],
            vec![
                self.d_obs as f64,
                self.provenance.code(),
                self.samples.len() as f64,
            ],
        )?;
        ckpt.push(
            "agent_counts",
            vec![self.agent_counts.len()],
            self.agent_counts.iter().map(|c| *c as f64).collect(),
        )?;
        let cardinalities: Vec<f64> = self.samples.iter().map(|s| s.len() as f64).collect();
        ckpt.push("cardinalities", vec![cardinalities.len()], cardinalities)?;
        let total: usize = self.samples.iter().map(ObservationSet::len).sum();
        let mut elements = Vec::with_capacity(total * self.d_obs);
        for set in &self.samples {
            for e in set.elements() {
                elements.extend_from_slice(e);
            }
        }
        ckpt.push("elements", vec![total, self.d_obs], elements)?;
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let meta = ckpt.require("meta")?;
        if meta.data.len() != 3 {
            return Err(Error::Format("meta must hold 3 values".to_string()));
        }
        let d_obs = meta.data[0] as usize;
        let provenance = Provenance::from_code(meta.data[1])?;
        let n_samples = meta.data[2] as usize;
        let agent_counts = ckpt
            .require("agent_counts")?
            .data
            .iter()
            .map(|c| *c as usize)
            .collect();
        let cardinalities = ckpt.require("cardinalities")?;
        if cardinalities.data.len() != n_samples {
            return Err(Error::Format(format!(
                "{} cardinalities for {} samples",
                cardinalities.data.len(),
                n_samples
            )));
        }
        let elements = ckpt.require("elements")?;
        if elements.dims.len() != 2 || elements.dims[1] != d_obs {
            return Err(Error::Format("elements tensor has wrong shape".to_string()));
        }
        let mut samples = Vec::with_capacity(n_samples);
        let mut cursor = 0usize;
        for card in &cardinalities.data {
            let n = *card as usize;
            let mut set = ObservationSet::empty(d_obs);
            for _ in 0..n {
                if (cursor + 1) * d_obs > elements.data.len() {
                    return Err(Error::Format(
                        "elements tensor shorter than cardinalities imply".to_string(),
                    ));
                }
                set.push(elements.data[cursor * d_obs..(cursor + 1) * d_obs].to_vec())?;
                cursor += 1;
            }
            samples.push(set);
        }
        if cursor * d_obs != elements.data.len() {
            return Err(Error::Format(
                "elements tensor longer than cardinalities imply".to_string(),
            ));
        }
        Ok(Self {
            d_obs,
            provenance,
            agent_counts,
            samples,
        })
    }
}

/// Wrapper that erases rewards from an environment. Pretraining code only
/// sees environments through this type, so no reward value can influence a
/// dataset or the encoder: the compiler enforces what the protocol claims.
pub struct RewardFree<E: MultiAgentEnv> {
    inner: E,
}

impl<E: MultiAgentEnv> RewardFree<E> {
    pub fn new(env: E) -> Self {
        Self { inner: env }
    }

    pub fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    pub fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    pub fn reset(&mut self) -> Vec<Vec<f64>> {
        self.inner.reset()
    }

    /// Steps the environment, returning observations and the episode flag.
    /// The reward never crosses this boundary.
    pub fn step(&mut self, actions: &[Action]) -> Result<(Vec<Vec<f64>>, bool)> {
        let step = self.inner.step(actions)?;
        Ok((step.observations, step.done))
    }
}

/// Rolls environments under uniformly random actions and keeps one joint
/// observation set per step. `make_env(agent_count, seed)` builds one
/// environment per requested count.
pub fn collect_random_policy_from<E, F>(
    make_env: F,
    agent_counts: &[usize],
    samples_per_count: usize,
    seed: u64,
) -> Result<PretrainDataset>
where
    E: MultiAgentEnv,
    F: Fn(usize, u64) -> Result<E>,
{
    if agent_counts.is_empty() || samples_per_count == 0 {
        return Err(Error::Config(
            "need at least one agent count and one sample".to_string(),
        ));
    }
    let mut samples = Vec::with_capacity(agent_counts.len() * samples_per_count);
    let mut d_obs = None;
    for (ci, &count) in agent_counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Config("agent counts must be > 0".to_string()));
        }
        let env = make_env(count, derive_seed(seed, ci as u64))?;
        let mut env = RewardFree::new(env);
        let dim = env.obs_dim();
        if *d_obs.get_or_insert(dim) != dim {
            return Err(Error::Shape(
                "environments disagree on observation dimension".to_string(),
            ));
        }
        let mut action_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + ci as u64));
        let mut obs = env.reset();
        for _ in 0..samples_per_count {
            samples.push(ObservationSet::from_elements(dim, obs.clone())?);
            let actions: Vec<Action> = (0..count)
                .map(|_| {
                    [
                        action_rng.gen_range(-1.0..=1.0),
                        action_rng.gen_range(-1.0..=1.0),
                    ]
                })
                .collect();
            let (next, done) = env.step(&actions)?;
            obs = if done { env.reset() } else { next };
        }
    }
    Ok(PretrainDataset {
        d_obs: d_obs.unwrap(),
        provenance: Provenance::RandomPolicy,
        agent_counts: agent_counts.to_vec(),
        samples,
    })
}

/// Random-policy collection over ForageWorld. Discovery dynamics are used
/// for rollouts; the dataset itself carries no task information.
pub fn collect_random_policy(
    cfg: &EnvConfig,
    agent_counts: &[usize],
    samples_per_count: usize,
    seed: u64,
) -> Result<PretrainDataset> {
    collect_random_policy_from(
        |count, env_seed| {
            ForageWorld::new(
                EnvConfig {
                    n_agents: count,
                    seed: env_seed,
                    ..*cfg
                },
                TaskId::Discovery,
            )
        },
        agent_counts,
        samples_per_count,
        seed,
    )
}

/// Samples synthetic world states uniformly and renders observations from
/// them. Positions and entities are uniform over the arena; velocities have
/// uniform direction and a magnitude uniform in [0, max_speed].
pub fn collect_random_observations(
    cfg: &EnvConfig,
    agent_counts: &[usize],
    samples_per_count: usize,
    seed: u64,
) -> Result<PretrainDataset> {
    cfg.validate()?;
    if agent_counts.is_empty() || samples_per_count == 0 {
        return Err(Error::Config(
            "need at least one agent count and one sample".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0B5));
    let hw = cfg.arena_half_width;
    let mut samples = Vec::with_capacity(agent_counts.len() * samples_per_count);
    for &count in agent_counts {
        if count == 0 {
            return Err(Error::Config("agent counts must be > 0".to_string()));
        }
        let world = EnvConfig {
            n_agents: count,
            ..*cfg
        };
        for _ in 0..samples_per_count {
            let positions: Vec<[f64; 2]> = (0..count)
                .map(|_| [rng.gen_range(-hw..=hw), rng.gen_range(-hw..=hw)])
                .collect();
            let velocities: Vec<[f64; 2]> = (0..count)
                .map(|_| {
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    let speed = rng.gen_range(0.0..=cfg.max_speed);
                    [speed * angle.cos(), speed * angle.sin()]
                })
                .collect();
            let targets: Vec<[f64; 2]> = (0..cfg.n_targets)
                .map(|_| [rng.gen_range(-hw..=hw), rng.gen_range(-hw..=hw)])
                .collect();
            let mut set = ObservationSet::empty(cfg.obs_dim());
            for i in 0..count {
                set.push(observation_of(&world, &positions, &velocities, &targets, i))?;
            }
            samples.push(set);
        }
    }
    Ok(PretrainDataset {
        d_obs: cfg.obs_dim(),
        provenance: Provenance::RandomObservations,
        agent_counts: agent_counts.to_vec(),
        samples,
    })
}

/// Summary statistics of a pretraining run, kept alongside the encoder
/// checkpoint. The loss statistics over the final iterations calibrate the
/// execution-time monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainReport {
    pub provenance: String,
    pub d_obs: usize,
    pub d_z: usize,
    pub iterations: usize,
    /// Number of final iterations the loss statistics cover.
    pub stats_window: usize,
    /// Mean of the per-iteration total loss over the stats window.
    pub loss_mean: f64,
    /// Population standard deviation over the same window.
    pub loss_std: f64,
}

impl PretrainReport {
    pub fn from_trace(
        provenance: Provenance,
        d_obs: usize,
        d_z: usize,
        trace: &[TraceRow],
    ) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::Usage("empty training trace".to_string()));
        }
        // Final tenth of the run (at least one iteration): late enough to
        // reflect the converged loss level, wide enough to estimate spread.
        let window = (trace.len() / 10).max(1);
        let tail: Vec<f64> = trace[trace.len() - window..]
            .iter()
            .map(|r| r.total)
            .collect();
        Ok(Self {
            provenance: provenance.to_string(),
            d_obs,
            d_z,
            iterations: trace.len(),
            stats_window: window,
            loss_mean: mean(&tail),
            loss_std: population_std(&tail),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("report parse: {e}")))
    }
}

pub struct PretrainOutcome {
    pub params: SetAutoencoderParams,
    pub trace: Vec<TraceRow>,
    pub report: PretrainReport,
}

/// Trains a fresh encoder on a dataset. `init_seed` controls parameter
/// initialization; the sampling stream comes from `train.seed`.
pub fn pretrain(
    dataset: &PretrainDataset,
    pisa_cfg: PisaConfig,
    train: &TrainSettings,
    init_seed: u64,
) -> Result<PretrainOutcome> {
    if pisa_cfg.d_obs != dataset.d_obs {
        return Err(Error::Config(format!(
            "encoder expects d_obs {}, dataset holds {}",
            pisa_cfg.d_obs, dataset.d_obs
        )));
    }
    if dataset.max_cardinality() > pisa_cfg.n_max {
        return Err(Error::Capacity {
            got: dataset.max_cardinality(),
            max: pisa_cfg.n_max,
        });
    }
    let mut params = SetAutoencoderParams::new(pisa_cfg, init_seed)?;
    let mut trainer = PisaTrainer::new(&params, train)?;
    let trace = trainer.run(&mut params, &dataset.samples, train.iterations)?;
    let report = PretrainReport::from_trace(
        dataset.provenance,
        dataset.d_obs,
        pisa_cfg.d_z,
        &trace,
    )?;
    Ok(PretrainOutcome {
        params,
        trace,
        report,
    })
}

/// Evaluates a trained encoder against a held-out dataset.
pub fn evaluate_on(
    params: &SetAutoencoderParams,
    dataset: &PretrainDataset,
) -> Result<pisa::EvalStats> {
    pisa::evaluate(params, &dataset.samples)
}
