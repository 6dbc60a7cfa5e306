//! Deterministic, seedable simulators for the two team-competitive board
//! games behind a common contract.
//!
//! Both games run on a square board of half-width `board_half_width` with
//! point agents under damped unit-force dynamics:
//!
//! ```text
//! v' = clamp_norm(v * (1 - damping) + F * dt, max_speed)
//! p' = clamp_box(p + v' * dt, board_half_width)
//! ```
//!
//! Movement actions are `{no-op, +x, -x, +y, -y}`; Market adds `{pick, drop}`.

mod market;
mod touchmark;

pub use market::MarketEnv;
pub use touchmark::TouchMarkEnv;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Observation = Vec<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Game {
    TouchMark,
    Market,
}

/// Movement action ids shared by both games.
pub const ACT_NOOP: usize = 0;
pub const ACT_POS_X: usize = 1;
pub const ACT_NEG_X: usize = 2;
pub const ACT_POS_Y: usize = 3;
pub const ACT_NEG_Y: usize = 4;
/// Market-only actions.
pub const ACT_PICK: usize = 5;
pub const ACT_DROP: usize = 6;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid game spec: {0}")]
    InvalidSpec(String),
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),
    #[error("expected {expected} actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
    #[error("agent {agent}: action id {action} out of range {limit}")]
    InvalidAction {
        agent: usize,
        action: usize,
        limit: usize,
    },
}

/// Static description of one game instance. Every constant of the dynamics
/// and reward scheme lives here; all fields are config-overridable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameSpec {
    pub game: Game,
    /// Number of teams. The games are defined for exactly two.
    pub teams: usize,
    pub agents_per_team: usize,
    pub board_half_width: f32,
    pub dt: f32,
    pub damping: f32,
    pub max_speed: f32,
    pub episode_limit: usize,
    /// Touch-Mark: reward to each member of the touching team, mirrored as a
    /// penalty to each opponent.
    pub landmark_reward: f32,
    pub distance_penalty_coeff: f32,
    pub collision_penalty: f32,
    pub collision_freeze_steps: usize,
    /// Contact radius, used both for landmark touches and Market pick/drop.
    #[serde(alias = "pick_radius")]
    pub touch_radius: f32,
    /// Market: team reward added on each successful pick and each drop.
    pub pick_drop_reward: f32,
    pub seed: u64,
}

impl Default for GameSpec {
    fn default() -> Self {
        GameSpec {
            game: Game::TouchMark,
            teams: 2,
            agents_per_team: 2,
            board_half_width: 1.0,
            dt: 0.1,
            damping: 0.25,
            max_speed: 0.5,
            episode_limit: 50,
            landmark_reward: 10.0,
            distance_penalty_coeff: 0.1,
            collision_penalty: -1.0,
            collision_freeze_steps: 3,
            touch_radius: 0.1,
            pick_drop_reward: 5.0,
            seed: 0,
        }
    }
}

impl GameSpec {
    pub fn touchmark() -> Self {
        GameSpec::default()
    }

    pub fn market() -> Self {
        GameSpec {
            game: Game::Market,
            ..GameSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |msg: String| Err(EnvError::InvalidSpec(msg));
        if self.teams != 2 {
            return fail(format!("teams must be 2, got {}", self.teams));
        }
        if self.agents_per_team < 1 {
            return fail("agents_per_team must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return fail(format!("damping must lie in [0,1), got {}", self.damping));
        }
        if self.episode_limit < 1 {
            return fail("episode_limit must be at least 1".into());
        }
        if !(self.landmark_reward > 0.0) {
            return fail(format!(
                "landmark_reward must be positive, got {}",
                self.landmark_reward
            ));
        }
        if !(self.touch_radius > 0.0) {
            return fail(format!(
                "touch_radius must be positive, got {}",
                self.touch_radius
            ));
        }
        if self.collision_penalty > 0.0 {
            return fail(format!(
                "collision_penalty must be non-positive, got {}",
                self.collision_penalty
            ));
        }
        if !(self.board_half_width > 0.0) || !(self.max_speed > 0.0) {
            return fail("board_half_width and max_speed must be positive".into());
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.teams * self.agents_per_team
    }

    pub fn n_actions(&self) -> usize {
        match self.game {
            Game::TouchMark => 5,
            Game::Market => 7,
        }
    }

    pub fn n_landmarks(&self) -> usize {
        match self.game {
            Game::TouchMark => 2,
            Game::Market => 0,
        }
    }

    pub fn n_resources(&self) -> usize {
        match self.game {
            Game::TouchMark => 0,
            Game::Market => 4,
        }
    }

    pub fn n_consumers(&self) -> usize {
        match self.game {
            Game::TouchMark => 0,
            Game::Market => 2,
        }
    }

    /// Observation length. Layout, in order: own position and velocity (4),
    /// relative positions of landmarks (Touch-Mark) or resources then
    /// consumers (Market), relative position and velocity of each teammate in
    /// ascending id order, the same for each opponent, and for Market two
    /// carry flags (one per resource type).
    pub fn obs_len(&self) -> usize {
        let others = 4 * (self.n_agents() - 1);
        match self.game {
            Game::TouchMark => 4 + 2 * self.n_landmarks() + others,
            Game::Market => 4 + 2 * self.n_resources() + 2 * self.n_consumers() + others + 2,
        }
    }

    pub fn team_of(&self, agent: usize) -> usize {
        agent / self.agents_per_team
    }

    pub fn team_members(&self, team: usize) -> impl Iterator<Item = usize> {
        let per = self.agents_per_team;
        (team * per)..((team + 1) * per)
    }

    pub fn teammates_of(&self, agent: usize) -> Vec<usize> {
        let team = self.team_of(agent);
        self.team_members(team).filter(|&j| j != agent).collect()
    }

    pub fn opponents_of(&self, agent: usize) -> Vec<usize> {
        let team = self.team_of(agent);
        (0..self.n_agents())
            .filter(|&j| self.team_of(j) != team)
            .collect()
    }

    /// Stable digest of the spec, used to decide checkpoint compatibility.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_string(&digest)
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ResourceStatus {
    Free,
    CarriedBy(usize),
    Delivered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    pub kind: usize,
    pub pos: [f32; 2],
    pub status: ResourceStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerState {
    pub kind: usize,
    pub pos: [f32; 2],
    pub alive: bool,
}

/// Full simulator state. Cloneable, and comparable for the determinism
/// contract: identical (spec, seed, action sequence) must give identical
/// states bit for bit.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub agent_pos: Vec<[f32; 2]>,
    pub agent_vel: Vec<[f32; 2]>,
    /// Step index until which each agent stays frozen (exclusive).
    pub frozen_until: Vec<usize>,
    pub landmarks: Vec<[f32; 2]>,
    pub resources: Vec<ResourceState>,
    pub consumers: Vec<ConsumerState>,
    pub step_index: usize,
    pub done: bool,
    pub rng: ChaCha12Rng,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.agent_pos == other.agent_pos
            && self.agent_vel == other.agent_vel
            && self.frozen_until == other.frozen_until
            && self.landmarks == other.landmarks
            && self.resources == other.resources
            && self.consumers == other.consumers
            && self.step_index == other.step_index
            && self.done == other.done
            && self.rng.get_seed() == other.rng.get_seed()
            && self.rng.get_word_pos() == other.rng.get_word_pos()
            && self.rng.get_stream() == other.rng.get_stream()
    }
}

/// Per-step event flags, consumed by the metrics harness and the optional
/// JSON-lines event log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub step: usize,
    /// Agent whose landmark touch ended a Touch-Mark episode.
    pub landmark_touch: Option<usize>,
    /// Opposing-team agent pairs that collided this step.
    pub collisions: Vec<(usize, usize)>,
    /// (agent, resource index) pairs for successful picks.
    pub picks: Vec<(usize, usize)>,
    /// (agent, consumer index) pairs for successful drops.
    pub drops: Vec<(usize, usize)>,
    pub timeout: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Vec<Observation>,
    pub rewards: Vec<f32>,
    pub done: bool,
    pub events: StepEvents,
}

pub trait Environment {
    fn spec(&self) -> &GameSpec;
    fn state(&self) -> &WorldState;
    /// Re-seed and place every entity uniformly at random inside the board.
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError>;
    fn observe(&self, agent: usize) -> Result<Observation, EnvError>;
}

/// The two games behind one dispatchable type; instances are independently
/// owned and may move between threads.
pub enum GameEnv {
    TouchMark(TouchMarkEnv),
    Market(MarketEnv),
}

impl GameEnv {
    pub fn new(spec: GameSpec) -> Result<GameEnv, EnvError> {
        spec.validate()?;
        Ok(match spec.game {
            Game::TouchMark => GameEnv::TouchMark(TouchMarkEnv::new(spec)?),
            Game::Market => GameEnv::Market(MarketEnv::new(spec)?),
        })
    }
}

impl Environment for GameEnv {
    fn spec(&self) -> &GameSpec {
        match self {
            GameEnv::TouchMark(e) => e.spec(),
            GameEnv::Market(e) => e.spec(),
        }
    }

    fn state(&self) -> &WorldState {
        match self {
            GameEnv::TouchMark(e) => e.state(),
            GameEnv::Market(e) => e.state(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        match self {
            GameEnv::TouchMark(e) => e.reset(seed),
            GameEnv::Market(e) => e.reset(seed),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        match self {
            GameEnv::TouchMark(e) => e.step(actions),
            GameEnv::Market(e) => e.step(actions),
        }
    }

    fn observe(&self, agent: usize) -> Result<Observation, EnvError> {
        match self {
            GameEnv::TouchMark(e) => e.observe(agent),
            GameEnv::Market(e) => e.observe(agent),
        }
    }
}

// ---------------------------------------------------------------------------
// shared physics and observation helpers
// ---------------------------------------------------------------------------

pub(crate) fn movement_force(action: usize) -> [f32; 2] {
    match action {
        ACT_POS_X => [1.0, 0.0],
        ACT_NEG_X => [-1.0, 0.0],
        ACT_POS_Y => [0.0, 1.0],
        ACT_NEG_Y => [0.0, -1.0],
        _ => [0.0, 0.0],
    }
}

pub(crate) fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Advance one agent: damped velocity update, speed clamp on the norm, then
/// position update clamped to the board.
pub(crate) fn integrate(spec: &GameSpec, pos: &mut [f32; 2], vel: &mut [f32; 2], force: [f32; 2]) {
    for k in 0..2 {
        vel[k] = vel[k] * (1.0 - spec.damping) + force[k] * spec.dt;
    }
    let speed = (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
    if speed > spec.max_speed {
        let scale = spec.max_speed / speed;
        vel[0] *= scale;
        vel[1] *= scale;
    }
    for k in 0..2 {
        pos[k] = (pos[k] + vel[k] * spec.dt).clamp(-spec.board_half_width, spec.board_half_width);
    }
}

pub(crate) fn random_pos(rng: &mut ChaCha12Rng, half_width: f32) -> [f32; 2] {
    let x = rng.random_range(-half_width..=half_width);
    let y = rng.random_range(-half_width..=half_width);
    [x, y]
}

/// Push the egocentric "self plus other agents" block: own position and
/// velocity, then relative position and velocity of teammates and opponents
/// in ascending id order.
pub(crate) fn push_agent_block(out: &mut Vec<f32>, spec: &GameSpec, state: &WorldState, agent: usize) {
    let p = state.agent_pos[agent];
    out.extend_from_slice(&p);
    out.extend_from_slice(&state.agent_vel[agent]);
    let mut push_other = |j: usize| {
        let q = state.agent_pos[j];
        out.push(q[0] - p[0]);
        out.push(q[1] - p[1]);
        out.extend_from_slice(&state.agent_vel[j]);
    };
    for j in spec.teammates_of(agent) {
        push_other(j);
    }
    for j in spec.opponents_of(agent) {
        push_other(j);
    }
}
