//! ForageWorld: a 2D cooperative multi-agent environment with three tasks
//! over one shared observation space.
//!
//! Agents are discs driven by bounded 2D acceleration (double integrator).
//! Every task emits a single global reward shared by all agents, and every
//! task produces observations with the same layout:
//!
//!   [own position (2), own velocity (2),
//!    lidar over task entities (n_lidar_rays), lidar over other agents (n_lidar_rays)]
//!
//! so one observation vector has dimension 4 + 2 * n_lidar_rays regardless
//! of task or agent count. Tasks:
//!
//! * discovery: +1 whenever two or more agents are within `discovery_radius`
//!   of the same target; the target respawns uniformly at random.
//! * flocking: negative mean distance to a drifting lead target, minus a
//!   penalty per agent pair in contact.
//! * pursuit_evasion: agents chase a scripted evader that flees its nearest
//!   pursuer; capture pays +10 and ends the episode, each step costs 0.01.
//!
//! All stochasticity flows from `EnvConfig::seed` through one ChaCha8
//! stream, so (seed, action sequence) replays bit-identically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-agent action: 2D acceleration, each component clipped to [-1, 1].
pub type Action = [f64; 2];
pub const ACTION_DIM: usize = 2;

/// Disc radius of a task entity (target, lead, or evader) as seen by lidar.
pub const TARGET_RADIUS: f64 = 0.05;
/// Disc radius of an agent as seen by other agents' lidar.
pub const AGENT_RADIUS: f64 = 0.05;
/// Agent pairs closer than this are "in contact" for the flocking penalty.
pub const CONTACT_DISTANCE: f64 = 2.0 * AGENT_RADIUS;
/// Penalty per contact pair per step in the flocking task.
pub const COLLISION_PENALTY: f64 = 0.25;
/// Lead target speed as a fraction of the agents' max speed.
pub const LEAD_SPEED_FRACTION: f64 = 0.3;
/// Lead target heading drift in radians per unit time.
pub const LEAD_TURN_RATE: f64 = 0.4;
/// Evader speed as a fraction of the agents' max speed.
pub const EVADER_SPEED_FRACTION: f64 = 0.7;
/// One-time payoff for capturing the evader.
pub const CAPTURE_REWARD: f64 = 10.0;
/// Per-step cost while the evader is free.
pub const PURSUIT_STEP_COST: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Discovery,
    Flocking,
    PursuitEvasion,
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TaskId::Discovery => "discovery",
            TaskId::Flocking => "flocking",
            TaskId::PursuitEvasion => "pursuit_evasion",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discovery" => Ok(TaskId::Discovery),
            "flocking" => Ok(TaskId::Flocking),
            "pursuit_evasion" => Ok(TaskId::PursuitEvasion),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected discovery, flocking, or pursuit_evasion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    /// Arena spans [-arena_half_width, arena_half_width] in both axes.
    pub arena_half_width: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub n_lidar_rays: usize,
    pub lidar_range: f64,
    /// Number of discovery targets; flocking and pursuit use one entity.
    pub n_targets: usize,
    /// Interaction radius: discovery pickup and pursuit capture distance.
    pub discovery_radius: f64,
    pub episode_length: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            arena_half_width: 1.0,
            dt: 0.1,
            max_speed: 1.0,
            n_lidar_rays: 12,
            lidar_range: 1.0,
            n_targets: 3,
            discovery_radius: 0.35,
            episode_length: 125,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be > 0".to_string()));
        }
        if self.n_lidar_rays == 0 {
            return Err(Error::Config("n_lidar_rays must be > 0".to_string()));
        }
        if self.n_targets == 0 {
            return Err(Error::Config("n_targets must be > 0".to_string()));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be > 0".to_string()));
        }
        for (name, v) in [
            ("arena_half_width", self.arena_half_width),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
            ("lidar_range", self.lidar_range),
            ("discovery_radius", self.discovery_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Observation dimension shared by every task and agent count.
    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.n_lidar_rays
    }
}

/// Full simulator state. The RNG is part of the state so that respawns and
/// resets replay deterministically.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// Task entities: discovery targets, or a single lead/evader.
    pub targets: Vec<[f64; 2]>,
    /// Lead target heading (flocking only).
    pub lead_heading: f64,
    pub step: usize,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observations: Vec<Vec<f64>>,
    /// Global reward, identical for every agent.
    pub reward: f64,
    pub done: bool,
}

/// Common interface over multi-agent environments with a global reward.
pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn reset(&mut self) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Action]) -> Result<EnvStep>;
}

#[derive(Debug, Clone)]
pub struct ForageWorld {
    cfg: EnvConfig,
    task: TaskId,
    state: WorldState,
}

impl ForageWorld {
    /// Builds the environment and places agents and entities for the first
    /// episode. Construction with equal configs yields identical states.
    pub fn new(cfg: EnvConfig, task: TaskId) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = draw_initial_state(&cfg, task, &mut rng);
        Ok(Self { cfg, task, state })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        observation_of(
            &self.cfg,
            &self.state.positions,
            &self.state.velocities,
            &self.state.targets,
            agent,
        )
    }

    pub fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents).map(|i| self.observe(i)).collect()
    }
}

impl MultiAgentEnv for ForageWorld {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    /// Starts a new episode. The placement stream continues from the same
    /// RNG, so consecutive episodes differ but the whole sequence is a
    /// deterministic function of the seed.
    fn reset(&mut self) -> Vec<Vec<f64>> {
        let mut rng = self.state.rng.clone();
        self.state = draw_initial_state(&self.cfg, self.task, &mut rng);
        self.state.rng = rng;
        self.observe_all()
    }

    fn step(&mut self, actions: &[Action]) -> Result<EnvStep> {
        if actions.len() != self.cfg.n_agents {
            return Err(Error::Shape(format!(
                "{} actions for {} agents",
                actions.len(),
                self.cfg.n_agents
            )));
        }
        for a in actions {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(Error::Numerical("non-finite action".to_string()));
            }
        }
        let cfg = &self.cfg;
        for (i, action) in actions.iter().enumerate() {
            let (p, v) = integrate(
                self.state.positions[i],
                self.state.velocities[i],
                *action,
                cfg.dt,
                cfg.max_speed,
                cfg.arena_half_width,
            );
            self.state.positions[i] = p;
            self.state.velocities[i] = v;
        }

        let mut captured = false;
        let reward = match self.task {
            TaskId::Discovery => {
                let (reward, hit) =
                    discovery_reward(&self.state.positions, &self.state.targets, cfg.discovery_radius);
                for idx in hit {
                    self.state.targets[idx] = uniform_point(cfg.arena_half_width, &mut self.state.rng);
                }
                reward
            }
            TaskId::Flocking => {
                advance_lead(cfg, &mut self.state);
                flocking_reward(&self.state.positions, self.state.targets[0])
            }
            TaskId::PursuitEvasion => {
                advance_evader(cfg, &mut self.state);
                let (reward, caught) =
                    pursuit_reward(&self.state.positions, self.state.targets[0], cfg.discovery_radius);
                captured = caught;
                reward
            }
        };

        self.state.step += 1;
        let done = captured || self.state.step >= cfg.episode_length;
        Ok(EnvStep {
            observations: self.observe_all(),
            reward,
            done,
        })
    }
}

fn uniform_point(half_width: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    [
        rng.gen_range(-half_width..=half_width),
        rng.gen_range(-half_width..=half_width),
    ]
}

fn draw_initial_state(cfg: &EnvConfig, task: TaskId, rng: &mut ChaCha8Rng) -> WorldState {
    let positions = (0..cfg.n_agents)
        .map(|_| uniform_point(cfg.arena_half_width, rng))
        .collect();
    let n_entities = match task {
        TaskId::Discovery => cfg.n_targets,
        TaskId::Flocking | TaskId::PursuitEvasion => 1,
    };
    let targets = (0..n_entities)
        .map(|_| uniform_point(cfg.arena_half_width, rng))
        .collect();
    let lead_heading = rng.gen_range(0.0..std::f64::consts::TAU);
    WorldState {
        positions,
        velocities: vec![[0.0, 0.0]; cfg.n_agents],
        targets,
        lead_heading,
        step: 0,
        rng: rng.clone(),
    }
}

/// Double-integrator update for one agent: accelerations are clipped to the
/// unit box, velocity norm is capped at `max_speed`, and the position is
/// clamped to the arena.
pub fn integrate(
    p: [f64; 2],
    v: [f64; 2],
    a: Action,
    dt: f64,
    max_speed: f64,
    half_width: f64,
) -> ([f64; 2], [f64; 2]) {
    let ax = a[0].clamp(-1.0, 1.0);
    let ay = a[1].clamp(-1.0, 1.0);
    let mut vx = v[0] + ax * dt;
    let mut vy = v[1] + ay * dt;
    let speed = (vx * vx + vy * vy).sqrt();
    if speed > max_speed {
        let scale = max_speed / speed;
        vx *= scale;
        vy *= scale;
    }
    let px = (p[0] + vx * dt).clamp(-half_width, half_width);
    let py = (p[1] + vy * dt).clamp(-half_width, half_width);
    ([px, py], [vx, vy])
}

/// Distance along a unit-direction ray to a disc, if the ray hits it.
/// An origin inside the disc reads 0.
fn ray_disc_distance(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let ox = center[0] - origin[0];
    let oy = center[1] - origin[1];
    let along = ox * dir[0] + oy * dir[1];
    let perp_sq = ox * ox + oy * oy - along * along;
    let r_sq = radius * radius;
    if perp_sq > r_sq {
        return None;
    }
    let half_chord = (r_sq - perp_sq).sqrt();
    let far = along + half_chord;
    if far < 0.0 {
        return None;
    }
    Some((along - half_chord).max(0.0))
}

/// One full lidar sweep from `origin`: ray k points at angle 2 pi k / n_rays
/// (ray 0 due east, counter-clockwise). Each reading is the distance to the
/// nearest disc, capped at `range`; rays that hit nothing read `range`.
/// `skip` excludes one disc index (the scanning agent itself).
pub fn lidar_scan(
    origin: [f64; 2],
    centers: &[[f64; 2]],
    disc_radius: f64,
    n_rays: usize,
    range: f64,
    skip: Option<usize>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_rays);
    for k in 0..n_rays {
        let angle = std::f64::consts::TAU * k as f64 / n_rays as f64;
        let dir = [angle.cos(), angle.sin()];
        let mut reading = range;
        for (j, c) in centers.iter().enumerate() {
            if skip == Some(j) {
                continue;
            }
            if let Some(d) = ray_disc_distance(origin, dir, *c, disc_radius) {
                reading = reading.min(d);
            }
        }
        out.push(reading);
    }
    out
}

/// Renders agent `i`'s observation from raw state arrays. Layout:
/// [p, v, lidar(task entities), lidar(other agents)].
pub fn observation_of(
    cfg: &EnvConfig,
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    targets: &[[f64; 2]],
    i: usize,
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    obs.extend_from_slice(&positions[i]);
    obs.extend_from_slice(&velocities[i]);
    obs.extend(lidar_scan(
        positions[i],
        targets,
        TARGET_RADIUS,
        cfg.n_lidar_rays,
        cfg.lidar_range,
        None,
    ));
    obs.extend(lidar_scan(
        positions[i],
        positions,
        AGENT_RADIUS,
        cfg.n_lidar_rays,
        cfg.lidar_range,
        Some(i),
    ));
    obs
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// +1 per target that has at least two agents within `radius` — discovery
/// takes a rendezvous, a lone agent scores nothing. Returns the indices of
/// hit targets so the caller can respawn them.
pub fn discovery_reward(
    positions: &[[f64; 2]],
    targets: &[[f64; 2]],
    radius: f64,
) -> (f64, Vec<usize>) {
    let mut hit = Vec::new();
    for (t_idx, t) in targets.iter().enumerate() {
        let near = positions.iter().filter(|p| distance(**p, *t) <= radius).count();
        if near >= 2 {
            hit.push(t_idx);
        }
    }
    (hit.len() as f64, hit)
}

/// Negative mean distance to the lead target, minus COLLISION_PENALTY per
/// agent pair closer than CONTACT_DISTANCE.
pub fn flocking_reward(positions: &[[f64; 2]], lead: [f64; 2]) -> f64 {
    let mean_dist =
        positions.iter().map(|p| distance(*p, lead)).sum::<f64>() / positions.len() as f64;
    let mut contacts = 0usize;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if distance(positions[i], positions[j]) < CONTACT_DISTANCE {
                contacts += 1;
            }
        }
    }
    -mean_dist - COLLISION_PENALTY * contacts as f64
}

/// CAPTURE_REWARD when any pursuer is within `capture_radius` of the
/// evader (second return flags the capture), otherwise -PURSUIT_STEP_COST.
pub fn pursuit_reward(
    positions: &[[f64; 2]],
    evader: [f64; 2],
    capture_radius: f64,
) -> (f64, bool) {
    let caught = positions.iter().any(|p| distance(*p, evader) <= capture_radius);
    if caught {
        (CAPTURE_REWARD, true)
    } else {
        (-PURSUIT_STEP_COST, false)
    }
}

/// Lead target drift: constant speed, heading rotating at a fixed rate, so
/// the path is a deterministic function of the reset draw and step count.
fn advance_lead(cfg: &EnvConfig, state: &mut WorldState) {
    let heading = state.lead_heading + LEAD_TURN_RATE * state.step as f64 * cfg.dt;
    let speed = LEAD_SPEED_FRACTION * cfg.max_speed;
    let lead = &mut state.targets[0];
    lead[0] = (lead[0] + speed * heading.cos() * cfg.dt)
        .clamp(-cfg.arena_half_width, cfg.arena_half_width);
    lead[1] = (lead[1] + speed * heading.sin() * cfg.dt)
        .clamp(-cfg.arena_half_width, cfg.arena_half_width);
}

/// Evader flight: moves directly away from the nearest pursuer at a fixed
/// fraction of the agents' max speed.
fn advance_evader(cfg: &EnvConfig, state: &mut WorldState) {
    let evader = state.targets[0];
    let nearest = state
        .positions
        .iter()
        .min_by(|a, b| distance(**a, evader).total_cmp(&distance(**b, evader)))
        .copied()
        .expect("at least one agent");
    let dx = evader[0] - nearest[0];
    let dy = evader[1] - nearest[1];
    let norm = (dx * dx + dy * dy).sqrt();
    if norm < 1e-12 {
        return;
    }
    let speed = EVADER_SPEED_FRACTION * cfg.max_speed;
    let e = &mut state.targets[0];
    e[0] = (e[0] + speed * dx / norm * cfg.dt).clamp(-cfg.arena_half_width, cfg.arena_half_width);
    e[1] = (e[1] + speed * dy / norm * cfg.dt).clamp(-cfg.arena_half_width, cfg.arena_half_width);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn integrate_hand_case() {
        let (p, v) = integrate([0.0, 0.0], [0.0, 0.0], [1.0, 0.0], 0.1, 1.0, 1.0);
        assert_eq!(v, [0.1, 0.0]);
        assert!((p[0] - 0.01).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn integrate_clips_action_speed_and_position() {
        // Action components beyond the unit box are clipped.
        let (_, v) = integrate([0.0, 0.0], [0.0, 0.0], [5.0, 0.0], 0.1, 1.0, 1.0);
        assert_eq!(v, [0.1, 0.0]);
        // Velocity norm capped at max_speed.
        let (_, v) = integrate([0.0, 0.0], [0.95, 0.0], [1.0, 0.0], 0.1, 1.0, 1.0);
        assert!((v[0] - 1.0).abs() < 1e-15);
        // Position clamped at the wall.
        let (p, _) = integrate([0.999, 0.0], [1.0, 0.0], [1.0, 0.0], 0.1, 1.0, 1.0);
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn lidar_ray_zero_reads_east_target_edge() {
        // Target disc centered 0.5 east with radius 0.05: ray 0 hits the
        // near edge at 0.45, no other of the 12 rays intersects.
        let scan = lidar_scan([0.0, 0.0], &[[0.5, 0.0]], 0.05, 12, 1.0, None);
        assert_eq!(scan.len(), 12);
        assert!((scan[0] - 0.45).abs() < 1e-12, "ray 0 read {}", scan[0]);
        for (k, r) in scan.iter().enumerate().skip(1) {
            assert_eq!(*r, 1.0, "ray {k} should miss");
        }
    }

    #[test]
    fn lidar_orientation_is_counter_clockwise() {
        // Ray 3 of 12 points north (+y).
        let scan = lidar_scan([0.0, 0.0], &[[0.0, 0.3]], 0.05, 12, 1.0, None);
        assert!((scan[3] - 0.25).abs() < 1e-12);
        assert_eq!(scan[0], 1.0);
    }

    #[test]
    fn lidar_caps_at_range_and_handles_inside() {
        // Hit beyond range reads range.
        let scan = lidar_scan([0.0, 0.0], &[[2.0, 0.0]], 0.05, 4, 1.0, None);
        assert_eq!(scan[0], 1.0);
        // Origin inside the disc reads 0 on every ray.
        let scan = lidar_scan([0.0, 0.0], &[[0.01, 0.0]], 0.05, 4, 1.0, None);
        assert!(scan.iter().all(|r| *r == 0.0));
        // Disc strictly behind the ray is not hit.
        let scan = lidar_scan([0.0, 0.0], &[[-0.5, 0.0]], 0.05, 1, 1.0, None);
        assert_eq!(scan[0], 1.0);
    }

    #[test]
    fn lidar_skips_the_scanning_agent() {
        let centers = [[0.0, 0.0], [0.5, 0.0]];
        let scan = lidar_scan([0.0, 0.0], &centers, 0.05, 12, 1.0, Some(0));
        assert!((scan[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn observation_layout_and_dim() {
        let c = cfg();
        let env = ForageWorld::new(c, TaskId::Discovery).unwrap();
        let obs = env.observe(0);
        assert_eq!(obs.len(), c.obs_dim());
        assert_eq!(c.obs_dim(), 4 + 2 * c.n_lidar_rays);
        let s = env.state();
        assert_eq!(&obs[0..2], &s.positions[0]);
        assert_eq!(&obs[2..4], &s.velocities[0]);
    }

    #[test]
    fn obs_dim_is_shared_across_tasks_and_agent_counts() {
        let base = cfg().obs_dim();
        for task in [TaskId::Discovery, TaskId::Flocking, TaskId::PursuitEvasion] {
            for n in [1, 2, 5] {
                let c = EnvConfig {
                    n_agents: n,
                    ..cfg()
                };
                let env = ForageWorld::new(c, task).unwrap();
                assert_eq!(env.obs_dim(), base);
                assert_eq!(env.observe(0).len(), base);
            }
        }
    }

    #[test]
    fn same_seed_same_initial_state() {
        let a = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        let b = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        assert_eq!(a.state().positions, b.state().positions);
        assert_eq!(a.state().targets, b.state().targets);

        let c = ForageWorld::new(
            EnvConfig {
                seed: 1,
                ..cfg()
            },
            TaskId::Discovery,
        )
        .unwrap();
        assert_ne!(a.state().positions, c.state().positions);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut a = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        let mut b = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        let actions: Vec<Vec<Action>> = (0..40)
            .map(|t| {
                (0..3)
                    .map(|i| {
                        [
                            ((t * 3 + i) as f64 * 0.37).sin(),
                            ((t * 5 + i) as f64 * 0.21).cos(),
                        ]
                    })
                    .collect()
            })
            .collect();
        for acts in &actions {
            let sa = a.step(acts).unwrap();
            let sb = b.step(acts).unwrap();
            assert_eq!(sa.reward.to_bits(), sb.reward.to_bits());
            assert_eq!(sa.observations, sb.observations);
            assert_eq!(sa.done, sb.done);
        }
    }

    #[test]
    fn consecutive_episodes_differ_but_replay_together() {
        let mut env = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        let first = env.state().positions.clone();
        env.reset();
        assert_ne!(env.state().positions, first);

        // The two-episode placement sequence is still seed-deterministic.
        let mut env2 = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        env2.reset();
        assert_eq!(env.state().positions, env2.state().positions);
    }

    #[test]
    fn discovery_needs_a_rendezvous_of_two_agents() {
        let targets = [[0.1, 0.0], [0.9, 0.8], [-0.9, -0.9]];
        // One agent per target: no reward at all.
        let lone = [[0.0, 0.0], [0.9, 0.9]];
        assert_eq!(discovery_reward(&lone, &targets, 0.35), (0.0, vec![]));
        // Pair up at target 0: exactly that target pays.
        let pair = [[0.0, 0.0], [0.2, 0.0], [0.9, 0.9]];
        assert_eq!(discovery_reward(&pair, &targets, 0.35), (1.0, vec![0]));
        // Two targets covered by two agents each.
        let pairs = [[0.0, 0.0], [0.2, 0.0], [0.9, 0.9], [0.8, 0.7]];
        let (r, hit) = discovery_reward(&pairs, &targets, 0.35);
        assert_eq!((r, hit), (2.0, vec![0, 1]));
    }

    #[test]
    fn discovered_target_respawns() {
        let c = EnvConfig {
            n_agents: 2,
            n_targets: 1,
            ..cfg()
        };
        let mut env = ForageWorld::new(c, TaskId::Discovery).unwrap();
        // Drive both agents toward the target until it is hit once.
        let mut total = 0.0;
        for _ in 0..c.episode_length {
            let t = env.state().targets[0];
            let before = t;
            let actions: Vec<Action> = env
                .state()
                .positions
                .iter()
                .map(|p| {
                    let d = [t[0] - p[0], t[1] - p[1]];
                    let n = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
                    [d[0] / n, d[1] / n]
                })
                .collect();
            let step = env.step(&actions).unwrap();
            total += step.reward;
            if step.reward > 0.0 {
                assert_ne!(env.state().targets[0], before, "hit target must respawn");
                break;
            }
        }
        assert!(total >= 1.0, "agents never rendezvoused at the target");
    }

    #[test]
    fn flocking_reward_hand_case() {
        // Two agents at distance 0.6 and 1.0 from the lead, not in contact.
        let positions = [[0.6, 0.0], [-1.0, 0.0]];
        let r = flocking_reward(&positions, [0.0, 0.0]);
        assert!((r - (-0.8)).abs() < 1e-12);

        // Same but in contact: one penalty.
        let positions = [[0.05, 0.0], [0.0, 0.0]];
        let r = flocking_reward(&positions, [0.0, 0.0]);
        assert!((r - (-0.025 - COLLISION_PENALTY)).abs() < 1e-12);
    }

    #[test]
    fn pursuit_capture_ends_episode_with_bonus() {
        let (r, caught) = pursuit_reward(&[[0.0, 0.0]], [0.2, 0.0], 0.35);
        assert_eq!((r, caught), (CAPTURE_REWARD, true));
        let (r, caught) = pursuit_reward(&[[0.0, 0.0]], [0.9, 0.0], 0.35);
        assert_eq!((r, caught), (-PURSUIT_STEP_COST, false));
    }

    #[test]
    fn evader_flees_nearest_pursuer() {
        let c = EnvConfig {
            n_agents: 2,
            ..cfg()
        };
        let mut env = ForageWorld::new(c, TaskId::PursuitEvasion).unwrap();
        // Place a deterministic geometry by stepping from the seeded state:
        // whatever the layout, after one zero-action step the evader must be
        // farther from (or equal to, at walls) its previously nearest agent.
        let evader = env.state().targets[0];
        let nearest = *env
            .state()
            .positions
            .iter()
            .min_by(|a, b| {
                let da = (a[0] - evader[0]).hypot(a[1] - evader[1]);
                let db = (b[0] - evader[0]).hypot(b[1] - evader[1]);
                da.total_cmp(&db)
            })
            .unwrap();
        let before = (nearest[0] - evader[0]).hypot(nearest[1] - evader[1]);
        let step = env.step(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        if !step.done {
            let after_ev = env.state().targets[0];
            let after = (nearest[0] - after_ev[0]).hypot(nearest[1] - after_ev[1]);
            assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn episode_terminates_at_length() {
        let c = EnvConfig {
            episode_length: 5,
            ..cfg()
        };
        let mut env = ForageWorld::new(c, TaskId::Flocking).unwrap();
        let zero = vec![[0.0, 0.0]; 3];
        for t in 0..4 {
            assert!(!env.step(&zero).unwrap().done, "done too early at {t}");
        }
        assert!(env.step(&zero).unwrap().done);
    }

    #[test]
    fn step_rejects_bad_actions() {
        let mut env = ForageWorld::new(cfg(), TaskId::Discovery).unwrap();
        assert!(matches!(
            env.step(&[[0.0, 0.0]]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            env.step(&[[0.0, 0.0], [f64::NAN, 0.0], [0.0, 0.0]]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn reward_is_global_not_per_agent() {
        // EnvStep carries one scalar; verify it does not depend on agent
        // indexing by permuting agents and comparing.
        let positions = [[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]];
        let swapped = [[0.5, -0.6], [0.1, 0.2], [-0.3, 0.4]];
        let targets = [[0.0, 0.0], [0.4, 0.4]];
        let (ra, _) = discovery_reward(&positions, &targets, 0.35);
        let (rb, _) = discovery_reward(&swapped, &targets, 0.35);
        assert_eq!(ra, rb);
        assert_eq!(
            flocking_reward(&positions, [0.0, 0.0]),
            flocking_reward(&swapped, [0.0, 0.0])
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn state_stays_in_bounds(
                seed in 0u64..1000,
                actions in proptest::collection::vec(
                    proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3),
                    1..30,
                ),
            ) {
                let c = EnvConfig { seed, ..EnvConfig::default() };
                let mut env = ForageWorld::new(c, TaskId::Discovery).unwrap();
                for acts in &actions {
                    let arr: Vec<Action> = acts.iter().map(|(x, y)| [*x, *y]).collect();
                    let step = env.step(&arr).unwrap();
                    prop_assert!(step.reward.is_finite());
                    for obs in &step.observations {
                        prop_assert_eq!(obs.len(), c.obs_dim());
                        prop_assert!(obs.iter().all(|v| v.is_finite()));
                    }
                    for p in &env.state().positions {
                        prop_assert!(p[0].abs() <= c.arena_half_width + 1e-12);
                        prop_assert!(p[1].abs() <= c.arena_half_width + 1e-12);
                    }
                    for v in &env.state().velocities {
                        let speed = (v[0]*v[0] + v[1]*v[1]).sqrt();
                        prop_assert!(speed <= c.max_speed + 1e-12);
                    }
                    if step.done { break; }
                }
            }

            #[test]
            fn lidar_readings_bounded(
                ox in -1.0f64..1.0, oy in -1.0f64..1.0,
                cx in -1.0f64..1.0, cy in -1.0f64..1.0,
            ) {
                let scan = lidar_scan([ox, oy], &[[cx, cy]], 0.05, 12, 1.0, None);
                for r in scan {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }
}
