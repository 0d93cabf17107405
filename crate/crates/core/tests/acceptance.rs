//! Acceptance suite: one test per release criterion, each printing a single
//! verdict line. Numeric tolerances are part of the contract and stated at
//! the assertion site. The heavy criteria (A05, A07–A10) run scaled-down
//! training budgets sized for a single core; the pass conditions are
//! orderings and thresholds, not absolute returns.

use std::sync::{Arc, OnceLock};

use agnocomm_core::env::{Action, EnvConfig, EnvStep, ForageWorld, MultiAgentEnv, TaskId};
use agnocomm_core::ippo::{
    gae, log_prob, ppo_surrogate, train, LatentMode, PolicyParams, SurrogateConfig,
    SurrogateSample, TrainConfig,
};
use agnocomm_core::metrics::{aggregate_metrics, read_metrics_csv, write_metrics_csv};
use agnocomm_core::nn::{relative_error, Activation, DenseParams, FlatReader, Mlp};
use agnocomm_core::ood::{monitor_rollout, MonitorSettings, OodCalibration};
use agnocomm_core::pisa::{
    self, ObservationSet, PisaConfig, SetAutoencoderParams, TrainSettings,
};
use agnocomm_core::pretrain::{
    collect_random_policy, collect_random_policy_from, pretrain, PretrainDataset, Provenance,
};
use agnocomm_core::util::derive_seed;
use agnocomm_core::Result;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Prints the one-line verdict for a criterion, then enforces it.
fn verdict(id: &str, name: &str, pass: bool, detail: &str) {
    let state = if pass { "PASS" } else { "FAIL" };
    println!("[{id}] {name}: {state} ({detail})");
    assert!(pass, "[{id}] {name}: {detail}");
}

fn random_set(d: usize, n: usize, rng: &mut ChaCha8Rng) -> ObservationSet {
    let elems: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    ObservationSet::from_elements(d, elems).unwrap()
}

// ---------------------------------------------------------------- A01, A02

#[test]
fn a01_latent_is_permutation_invariant() {
    let cfg = PisaConfig {
        d_obs: 6,
        d_z: 20,
        d_key: 8,
        hidden: 24,
        n_max: 8,
    };
    let params = SetAutoencoderParams::new(cfg, 41).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut max_diff = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=cfg.n_max);
        let set = random_set(cfg.d_obs, n, &mut rng);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let permuted = ObservationSet::from_elements(
            cfg.d_obs,
            idx.iter().map(|&i| set.elements()[i].clone()).collect(),
        )
        .unwrap();
        let za = params.encode(&set).unwrap();
        let zb = params.encode(&permuted).unwrap();
        for (a, b) in za.values.iter().zip(&zb.values) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    verdict(
        "A01",
        "latent permutation invariance",
        max_diff <= 1e-12,
        &format!("1000 sets, max abs latent diff {max_diff:e} <= 1e-12"),
    );
}

#[test]
fn a02_latent_size_is_fixed_across_cardinalities() {
    let cfg = PisaConfig {
        d_obs: 6,
        d_z: 24,
        d_key: 8,
        hidden: 24,
        n_max: 10,
    };
    let params = SetAutoencoderParams::new(cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut dims = Vec::new();
    for n in 0..=10 {
        let set = random_set(cfg.d_obs, n, &mut rng);
        dims.push(params.encode(&set).unwrap().dim());
    }
    let ok = dims.iter().all(|&d| d == cfg.d_z);
    verdict(
        "A02",
        "fixed-size latent over cardinalities 0..=10",
        ok,
        &format!("dims {dims:?}, expected all {}", cfg.d_z),
    );
}

// --------------------------------------------------------------------- A03

/// Fourth-order central differences: truncation falls as h^4, so a step
/// large enough to dodge cancellation still resolves tiny gradient entries.
fn fd_max_relative_error<F>(mut f: F, params: &[f64], analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let h = 1e-4;
    let mut worst = 0.0_f64;
    let mut p = params.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let x = params[i];
        let mut eval = |shift: f64| {
            p[i] = x + shift;
            let y = f(&p);
            p[i] = x;
            y
        };
        let fd = (-eval(2.0 * h) + 8.0 * eval(h) - 8.0 * eval(-h) + eval(-2.0 * h)) / (12.0 * h);
        // Parameters a sample never touches (e.g. other cardinalities'
        // embeddings) have analytic gradient exactly 0 while the stencil
        // returns ~1e-13 cancellation noise; absolute agreement below 1e-9
        // is agreement.
        if a.abs() < 1e-9 && fd.abs() < 1e-9 {
            continue;
        }
        worst = worst.max(relative_error(*a, fd));
    }
    worst
}

#[test]
fn a03_gradients_match_finite_differences() {
    let mut worst_mlp = 0.0_f64;
    for i in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let (d_in, d_h, d_out) = (
            rng.gen_range(2..=5),
            rng.gen_range(3..=6),
            rng.gen_range(1..=3),
        );
        let mlp = Mlp::new(
            vec![
                DenseParams::init_uniform(d_in, d_h, &mut rng),
                DenseParams::init_uniform(d_h, d_out, &mut rng),
            ],
            vec![Activation::Tanh, Activation::Identity],
        )
        .unwrap();
        let x: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, tape) = mlp.forward_recorded(&x).unwrap();
        let (grad, _) = mlp.backward(&tape, &u).unwrap();
        let mut analytic = Vec::new();
        grad.write_flat(&mut analytic);
        let mut flat = Vec::new();
        mlp.write_flat(&mut flat);
        let f = |p: &[f64]| {
            let mut m = mlp.clone();
            m.read_flat(&mut FlatReader::new(p)).unwrap();
            let y = m.forward(&x).unwrap();
            y.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
        };
        worst_mlp = worst_mlp.max(fd_max_relative_error(f, &flat, &analytic));
    }

    let mut worst_pisa = 0.0_f64;
    for i in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + i);
        let cfg = PisaConfig {
            d_obs: 3,
            d_z: 6,
            d_key: 4,
            hidden: 8,
            n_max: 4,
        };
        let params = SetAutoencoderParams::new(cfg, 300 + i).unwrap();
        let set = random_set(cfg.d_obs, rng.gen_range(1..=cfg.n_max), &mut rng);
        let (_, grad) = params.loss_backward(&set).unwrap();
        let mut analytic = Vec::new();
        grad.write_flat(&mut analytic);
        let flat = params.to_flat();
        let f = |p: &[f64]| {
            let mut q = params.clone();
            q.read_flat(&mut FlatReader::new(p)).unwrap();
            q.reconstruction_loss(&set).unwrap().total
        };
        worst_pisa = worst_pisa.max(fd_max_relative_error(f, &flat, &analytic));
    }

    let mut worst_ppo = 0.0_f64;
    for i in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + i);
        let input_dim = 5;
        let params = PolicyParams::new(input_dim, 6, 500 + i);
        // Behavior comes from slightly different parameters so the ratio
        // is non-trivial but stays inside the clip band (no kink nearby).
        let mut shifted = params.to_flat();
        for w in shifted.iter_mut() {
            *w += rng.gen_range(-0.01..0.01);
        }
        let mut behavior_params = params.clone();
        behavior_params
            .read_flat(&mut FlatReader::new(&shifted))
            .unwrap();
        let samples: Vec<SurrogateSample> = (0..5)
            .map(|_| {
                let input: Vec<f64> =
                    (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let behavior = behavior_params.head(&input).unwrap();
                let action: Action = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                SurrogateSample {
                    behavior_log_prob: log_prob(&behavior, &action),
                    behavior,
                    input,
                    action,
                    advantage: rng.gen_range(-1.0..1.0),
                    value_target: rng.gen_range(-1.0..1.0),
                }
            })
            .collect();
        let cfg = SurrogateConfig {
            clip: 0.2,
            kl_coeff: 0.013,
            entropy_coeff: 0.005,
            vf_coeff: 0.7,
        };
        let outcome = ppo_surrogate(&params, &samples, &cfg, false).unwrap();
        let flat = params.to_flat();
        let f = |p: &[f64]| {
            let mut q = params.clone();
            q.read_flat(&mut FlatReader::new(p)).unwrap();
            ppo_surrogate(&q, &samples, &cfg, false).unwrap().loss
        };
        worst_ppo = worst_ppo.max(fd_max_relative_error(f, &flat, &outcome.grad));
    }

    let worst = worst_mlp.max(worst_pisa).max(worst_ppo);
    verdict(
        "A03",
        "gradient suite vs central differences",
        worst < 1e-4,
        &format!(
            "20 instances each: mlp {worst_mlp:.2e}, autoencoder {worst_pisa:.2e}, \
             ppo {worst_ppo:.2e}, all < 1e-4"
        ),
    );
}

// --------------------------------------------------------------------- A04

#[test]
fn a04_gae_matches_brute_force_sum() {
    // A_t = sum_l (gamma*lambda)^l delta_{t+l}, truncated at episode ends.
    #[allow(clippy::needless_range_loop)] // explicit indices: the loop IS the double sum
    fn oracle(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let delta = |t: usize| -> f64 {
            let next = if dones[t] {
                0.0
            } else if t + 1 < n {
                values[t + 1]
            } else {
                bootstrap
            };
            rewards[t] + gamma * next - values[t]
        };
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut w = 1.0;
                for l in t..n {
                    acc += w * delta(l);
                    if dones[l] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                acc
            })
            .collect()
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut max_err = 0.0_f64;
    for _ in 0..100 {
        let n = 20;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        let bootstrap = rng.gen_range(-1.0..1.0);
        let gamma = rng.gen_range(0.9..1.0);
        let lambda = rng.gen_range(0.8..1.0);
        let got = gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
        let want = oracle(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for (g, w) in got.advantages.iter().zip(&want) {
            max_err = max_err.max((g - w).abs());
        }
        // Value targets are advantages plus values, by definition.
        for ((t, a), v) in got.value_targets.iter().zip(&got.advantages).zip(&values) {
            max_err = max_err.max((t - (a + v)).abs());
        }
    }
    verdict(
        "A04",
        "advantage recursion vs brute-force sum",
        max_err < 1e-10,
        &format!("100 x 20-step sequences, max abs err {max_err:e} < 1e-10"),
    );
}

// --------------------------------------------------------------------- A05

#[test]
fn a05_autoencoder_converges_on_synthetic_sets() {
    let d_obs = 8;
    let cfg = PisaConfig {
        d_obs,
        d_z: 48,
        d_key: 12,
        hidden: 96,
        n_max: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let make = |count: usize, rng: &mut ChaCha8Rng| -> Vec<ObservationSet> {
        (0..count)
            .map(|_| {
                let n = rng.gen_range(1..=5);
                random_set(d_obs, n, rng)
            })
            .collect()
    };
    let train_sets = make(3000, &mut rng);
    let held_out = make(500, &mut rng);
    let dataset = PretrainDataset {
        d_obs,
        provenance: Provenance::RandomObservations,
        agent_counts: vec![1, 2, 3, 4, 5],
        samples: train_sets,
    };
    let settings = TrainSettings {
        batch_size: 128,
        iterations: 6000,
        lr: 1e-3,
        seed: 78,
    };
    let outcome = pretrain(&dataset, cfg, &settings, 79).unwrap();
    let stats = pisa::evaluate(&outcome.params, &held_out).unwrap();
    let ok = stats.rmse < 0.05 && stats.cardinality_accuracy >= 0.99;
    verdict(
        "A05",
        "autoencoder convergence on synthetic sets",
        ok,
        &format!(
            "{} iterations: held-out rmse {:.4} < 0.05, cardinality accuracy {:.3} >= 0.99",
            settings.iterations, stats.rmse, stats.cardinality_accuracy
        ),
    );
}

// --------------------------------------------------------------------- A06

struct PoisonedRewards(ForageWorld);

impl MultiAgentEnv for PoisonedRewards {
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }
    fn obs_dim(&self) -> usize {
        self.0.obs_dim()
    }
    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.0.reset()
    }
    fn step(&mut self, actions: &[Action]) -> Result<EnvStep> {
        let mut step = self.0.step(actions)?;
        step.reward = f64::NAN; // any dependence on rewards would explode
        Ok(step)
    }
}

#[test]
fn a06_collection_and_pretraining_are_reward_free() {
    let env_cfg = EnvConfig {
        n_agents: 3,
        n_lidar_rays: 4,
        episode_length: 40,
        ..EnvConfig::default()
    };
    let clean_factory = |count: usize, seed: u64| {
        ForageWorld::new(
            EnvConfig {
                n_agents: count,
                seed,
                ..env_cfg
            },
            TaskId::Discovery,
        )
    };
    let poisoned_factory = |count: usize, seed: u64| clean_factory(count, seed).map(PoisonedRewards);

    let clean = collect_random_policy_from(clean_factory, &[1, 2, 3], 40, 5).unwrap();
    let poisoned = collect_random_policy_from(poisoned_factory, &[1, 2, 3], 40, 5).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let (pa, pb) = (tmp.path().join("clean.agno"), tmp.path().join("poisoned.agno"));
    clean.save(&pa).unwrap();
    poisoned.save(&pb).unwrap();
    let datasets_identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    let pisa_cfg = PisaConfig {
        d_obs: clean.d_obs,
        d_z: 10,
        d_key: 6,
        hidden: 16,
        n_max: 3,
    };
    let settings = TrainSettings {
        batch_size: 32,
        iterations: 150,
        lr: 1e-3,
        seed: 6,
    };
    let wa = pretrain(&clean, pisa_cfg, &settings, 7).unwrap().params;
    let wb = pretrain(&poisoned, pisa_cfg, &settings, 7).unwrap().params;
    let (fa, fb) = (tmp.path().join("a.agno"), tmp.path().join("b.agno"));
    wa.save(&fa).unwrap();
    wb.save(&fb).unwrap();
    let weights_identical = wa.checksum() == wb.checksum()
        && std::fs::read(&fa).unwrap() == std::fs::read(&fb).unwrap();

    verdict(
        "A06",
        "reward poisoning cannot reach pretraining",
        datasets_identical && weights_identical,
        &format!(
            "dataset bytes identical: {datasets_identical}, weight bytes + checksum identical: \
             {weights_identical}"
        ),
    );
}

// ------------------------------------------------- shared setup, A07--A10

/// Environment shared by the training-ordering and drift criteria.
fn ordering_env() -> EnvConfig {
    EnvConfig {
        n_agents: 3,
        n_lidar_rays: 6,
        n_targets: 3,
        episode_length: 100,
        ..EnvConfig::default()
    }
}

struct Pretrained {
    encoder: Arc<SetAutoencoderParams>,
    calibration: OodCalibration,
}

static PRETRAINED: OnceLock<Pretrained> = OnceLock::new();

/// Encoder pretrained once on random-policy data with 1, 2, and 3 agents;
/// shared by the criteria that need it (single pretraining, many uses).
fn pretrained() -> &'static Pretrained {
    PRETRAINED.get_or_init(|| {
        let env_cfg = ordering_env();
        // Three deliberate choices keep the drift threshold honest:
        // - enough data that each sample is reused only a handful of times,
        //   so the converged training loss (which calibrates the threshold)
        //   tracks fresh-trajectory loss instead of undercutting it;
        // - the deployed cardinality (3) is oversampled, so the pooled
        //   calibration mean reflects the sets the monitor will actually see
        //   rather than being dragged down by the easier 1- and 2-element sets;
        // - the latent has slack above the largest set (96 > 3 x 16 dims), as
        //   a sum-pooled latent at exactly n*d_obs reconstructs the largest
        //   cardinality measurably worse than the pooled mean.
        let dataset =
            collect_random_policy(&env_cfg, &[1, 2, 3, 3, 3, 3], 4000, 11).unwrap();
        let cfg = PisaConfig {
            d_obs: env_cfg.obs_dim(),
            d_z: 96,
            d_key: 24,
            hidden: 192,
            n_max: 6,
        };
        let settings = TrainSettings {
            batch_size: 128,
            iterations: 6000,
            lr: 1e-3,
            seed: 12,
        };
        let outcome = pretrain(&dataset, cfg, &settings, 13).unwrap();
        Pretrained {
            encoder: Arc::new(outcome.params),
            calibration: OodCalibration::from_report(&outcome.report),
        }
    })
}

const ORDERING_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn ordering_train_cfg() -> TrainConfig {
    TrainConfig {
        lr: 6e-4,
        iterations: 30,
        fragment: 100,
        minibatch_size: 512,
        sgd_epochs: 3,
        policy_hidden: 48,
        ..TrainConfig::default()
    }
}

fn make_ordering_envs(
    env_cfg: &EnvConfig,
    n_envs: usize,
    seed: u64,
) -> Vec<Box<dyn MultiAgentEnv>> {
    (0..n_envs)
        .map(|i| {
            let cfg = EnvConfig {
                seed: derive_seed(seed, 0x0E00 + i as u64),
                ..*env_cfg
            };
            Box::new(ForageWorld::new(cfg, TaskId::Discovery).unwrap()) as Box<dyn MultiAgentEnv>
        })
        .collect()
}

/// Mean return over the final decile of training iterations.
fn final_decile(metrics: &[agnocomm_core::metrics::IterationMetrics]) -> f64 {
    let tail = (metrics.len() / 10).max(1);
    let slice = &metrics[metrics.len() - tail..];
    slice.iter().map(|m| m.mean_return).sum::<f64>() / tail as f64
}

/// Trains the communicating and silent arms on paired seeds and counts how
/// often communication wins on final-decile return.
fn paired_ordering(env_cfg: &EnvConfig, n_envs: usize) -> (usize, Vec<f64>, Vec<f64>) {
    let cfg = ordering_train_cfg();
    let encoder = &pretrained().encoder;
    let mut comm_scores = Vec::new();
    let mut silent_scores = Vec::new();
    for &seed in &ORDERING_SEEDS {
        let comm = train(
            make_ordering_envs(env_cfg, n_envs, seed),
            LatentMode::Frozen(Arc::clone(encoder)),
            &cfg,
            seed,
            None,
        )
        .unwrap();
        let silent = train(
            make_ordering_envs(env_cfg, n_envs, seed),
            LatentMode::Zero(encoder.latent_dim()),
            &cfg,
            seed,
            None,
        )
        .unwrap();
        comm_scores.push(final_decile(&comm.metrics));
        silent_scores.push(final_decile(&silent.metrics));
    }
    let wins = comm_scores
        .iter()
        .zip(&silent_scores)
        .filter(|(c, s)| c > s)
        .count();
    (wins, comm_scores, silent_scores)
}

#[test]
fn a07_communication_beats_silence_on_novel_task() {
    let env_cfg = ordering_env();
    let n_envs = 20; // 30 iters x 100-step fragments x 20 envs = 60k steps/seed
    let (wins, comm, silent) = paired_ordering(&env_cfg, n_envs);
    verdict(
        "A07",
        "frozen-encoder arm outscores no-comms arm (3 agents)",
        wins >= 4,
        &format!(
            "5 paired seeds at 60k env steps each (300k total per arm), wins {wins}/5 \
             (need >= 4); comm {comm:?} vs silent {silent:?}"
        ),
    );
}

#[test]
fn a10_policies_stay_viable_beyond_pretraining_cardinality() {
    let env_cfg = EnvConfig {
        n_agents: 4, // encoder never saw 4-agent sets during pretraining
        ..ordering_env()
    };
    let n_envs = 20;
    let (wins, comm, silent) = paired_ordering(&env_cfg, n_envs);
    verdict(
        "A10",
        "out-of-cardinality encoder still outscores no-comms (4 agents)",
        wins >= 4,
        &format!(
            "5 paired seeds at 60k env steps each, wins {wins}/5 (need >= 4); \
             comm {comm:?} vs silent {silent:?}"
        ),
    );
}

// --------------------------------------------------------------- A08, A09

/// Final trailing-window loss of a monitoring run on a fresh trajectory.
/// 15 iterations x 150 steps with the default 10-iteration window means the
/// verdict averages 1500 sets; per-set loss is heavy-tailed enough that
/// short windows would be dominated by a handful of hard sets.
fn monitor_last_window(env_cfg: &EnvConfig, noise_sigma: f64, seed: u64) -> f64 {
    let pre = pretrained();
    let settings = MonitorSettings {
        iterations: 15,
        steps_per_iteration: 150,
        epsilon: f64::INFINITY,
        noise_sigma,
        noise_onset: 0,
        seed,
    };
    let cfg = EnvConfig {
        seed: derive_seed(seed, 0x0DD),
        ..*env_cfg
    };
    let mut env = ForageWorld::new(cfg, TaskId::Discovery).unwrap();
    let rows = monitor_rollout(&mut env, &pre.encoder, &pre.calibration, &settings).unwrap();
    rows.last().unwrap().window_recon_loss
}

#[test]
fn a08_monitor_flags_unseen_agent_counts() {
    let threshold = pretrained().calibration.threshold;
    let in_dist = monitor_last_window(&ordering_env(), 0.0, 21);
    let five_agents = EnvConfig {
        n_agents: 5, // beyond the {1,2,3} pretraining counts
        ..ordering_env()
    };
    let out_dist = monitor_last_window(&five_agents, 0.0, 21);
    let ok = in_dist < threshold && out_dist > threshold;
    verdict(
        "A08",
        "drift monitor separates agent counts",
        ok,
        &format!(
            "window loss: 3 agents {in_dist:.4} < threshold {threshold:.4} < 5 agents \
             {out_dist:.4}"
        ),
    );
}

#[test]
fn a09_monitor_flags_noise_corrupted_observations() {
    let threshold = pretrained().calibration.threshold;
    let control = monitor_last_window(&ordering_env(), 0.0, 22);
    let corrupted = monitor_last_window(&ordering_env(), 4.0, 22);
    let ok = control < threshold && corrupted > threshold;
    verdict(
        "A09",
        "drift monitor separates noise-corrupted observations",
        ok,
        &format!(
            "window loss: control {control:.4} < threshold {threshold:.4} < noisy \
             {corrupted:.4}"
        ),
    );
}

// --------------------------------------------------------------------- A11

#[test]
fn a11_every_stage_is_deterministic_under_fixed_seed() {
    let env_cfg = EnvConfig {
        n_agents: 2,
        n_lidar_rays: 4,
        episode_length: 25,
        ..EnvConfig::default()
    };
    let tmp = tempfile::tempdir().unwrap();

    // Collection: bit-identical datasets and saved bytes.
    let da = collect_random_policy(&env_cfg, &[1, 2], 30, 3).unwrap();
    let db = collect_random_policy(&env_cfg, &[1, 2], 30, 3).unwrap();
    let (fa, fb) = (tmp.path().join("da.agno"), tmp.path().join("db.agno"));
    da.save(&fa).unwrap();
    db.save(&fb).unwrap();
    let collect_ok = da == db && std::fs::read(&fa).unwrap() == std::fs::read(&fb).unwrap();

    // Pretraining: identical traces and weight checksums.
    let pisa_cfg = PisaConfig {
        d_obs: da.d_obs,
        d_z: 8,
        d_key: 6,
        hidden: 16,
        n_max: 2,
    };
    let settings = TrainSettings {
        batch_size: 16,
        iterations: 120,
        lr: 1e-3,
        seed: 4,
    };
    let pa = pretrain(&da, pisa_cfg, &settings, 5).unwrap();
    let pb = pretrain(&db, pisa_cfg, &settings, 5).unwrap();
    let pretrain_ok = pa.trace == pb.trace && pa.params.checksum() == pb.params.checksum();

    // Policy training: identical metrics and policy checksums.
    let train_cfg = TrainConfig {
        lr: 1e-3,
        iterations: 4,
        fragment: 25,
        minibatch_size: 64,
        sgd_epochs: 2,
        policy_hidden: 16,
        ..TrainConfig::default()
    };
    let make_envs = |seed: u64| -> Vec<Box<dyn MultiAgentEnv>> {
        (0..4)
            .map(|i| {
                let cfg = EnvConfig {
                    seed: derive_seed(seed, i),
                    ..env_cfg
                };
                Box::new(ForageWorld::new(cfg, TaskId::Discovery).unwrap())
                    as Box<dyn MultiAgentEnv>
            })
            .collect()
    };
    let ta = train(
        make_envs(9),
        LatentMode::Frozen(Arc::new(pa.params.clone())),
        &train_cfg,
        9,
        None,
    )
    .unwrap();
    let tb = train(
        make_envs(9),
        LatentMode::Frozen(Arc::new(pa.params.clone())),
        &train_cfg,
        9,
        None,
    )
    .unwrap();
    let train_ok = ta.metrics == tb.metrics && ta.policy.checksum() == tb.policy.checksum();

    // Aggregation: recomputable from per-seed CSV files to 1e-12.
    let other = train(
        make_envs(10),
        LatentMode::Frozen(Arc::new(pa.params)),
        &train_cfg,
        10,
        None,
    )
    .unwrap();
    let direct = aggregate_metrics(&[ta.metrics.clone(), other.metrics.clone()]).unwrap();
    let (ma, mb) = (tmp.path().join("s0.csv"), tmp.path().join("s1.csv"));
    write_metrics_csv(&ma, &ta.metrics).unwrap();
    write_metrics_csv(&mb, &other.metrics).unwrap();
    let reread = aggregate_metrics(&[
        read_metrics_csv(&ma).unwrap(),
        read_metrics_csv(&mb).unwrap(),
    ])
    .unwrap();
    let mut agg_err = 0.0_f64;
    for (d, r) in direct.iter().zip(&reread) {
        agg_err = agg_err.max((d.mean_return - r.mean_return).abs());
        agg_err = agg_err.max((d.return_p2_5 - r.return_p2_5).abs());
        agg_err = agg_err.max((d.return_p97_5 - r.return_p97_5).abs());
    }
    let aggregate_ok = agg_err <= 1e-12;

    verdict(
        "A11",
        "stage determinism and aggregate recomputability",
        collect_ok && pretrain_ok && train_ok && aggregate_ok,
        &format!(
            "collect {collect_ok}, pretrain {pretrain_ok}, train {train_ok}, \
             aggregate max err {agg_err:e} <= 1e-12"
        ),
    );
}
