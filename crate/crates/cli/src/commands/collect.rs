//! `collect`: build a reward-free pretraining dataset.

use agnocomm_core::pretrain::{collect_random_observations, collect_random_policy, Provenance};
use agnocomm_core::Result;

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::rundir::RunDir;

pub const DATASET_FILE: &str = "dataset.agno";

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg.primary_seed();
    let section = &cfg.collect;
    let dataset = match section.provenance {
        Provenance::RandomPolicy => collect_random_policy(
            &cfg.env,
            &section.agent_counts,
            section.samples_per_count,
            seed,
        )?,
        Provenance::RandomObservations => collect_random_observations(
            &cfg.env,
            &section.agent_counts,
            section.samples_per_count,
            seed,
        )?,
    };
    let mut dir = RunDir::create(cfg.out_dir()?, "collect", &cfg.snapshot()?)?;
    dataset.save(&dir.path(DATASET_FILE)?)?;
    dir.note(DATASET_FILE);
    println!(
        "collect: {} sets (d_obs {}, counts {:?}, seed {seed}) -> {}",
        dataset.samples.len(),
        dataset.d_obs,
        section.agent_counts,
        dir.root().join(DATASET_FILE).display()
    );
    dir.finish()?;
    Ok(Outcome::Done)
}
