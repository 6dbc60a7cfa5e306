//! Touch-Mark: two teams race to touch one of two static landmarks first.
//!
//! The first touch ends the episode with `+landmark_reward` for every member
//! of the touching team and the same amount subtracted from every opponent,
//! so the touch component of the reward sums to zero across agents. Each
//! agent also pays a per-step penalty proportional to its distance from its
//! nearest landmark. Contact between opposing agents freezes both in place
//! for `collision_freeze_steps` steps and costs `collision_penalty` each;
//! teammates pass through each other.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{
    dist, integrate, movement_force, push_agent_block, random_pos, EnvError, Environment,
    GameSpec, Observation, StepEvents, StepOutcome, WorldState,
};

pub struct TouchMarkEnv {
    spec: GameSpec,
    state: WorldState,
}

impl TouchMarkEnv {
    pub fn new(spec: GameSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let seed = spec.seed;
        let mut env = TouchMarkEnv {
            state: empty_state(&spec),
            spec,
        };
        env.reset(seed);
        Ok(env)
    }

    #[cfg(test)]
    pub(crate) fn state_mut(&mut self) -> &mut WorldState {
        &mut self.state
    }

    fn observe_unchecked(&self, agent: usize) -> Observation {
        let mut out = Vec::with_capacity(self.spec.obs_len());
        let p = self.state.agent_pos[agent];
        out.extend_from_slice(&p);
        out.extend_from_slice(&self.state.agent_vel[agent]);
        for lm in &self.state.landmarks {
            out.push(lm[0] - p[0]);
            out.push(lm[1] - p[1]);
        }
        // own pos/vel were already pushed; push_agent_block would duplicate
        // them, so only the relative-agent tail is reused here.
        let mut full = Vec::new();
        push_agent_block(&mut full, &self.spec, &self.state, agent);
        out.extend_from_slice(&full[4..]);
        debug_assert_eq!(out.len(), self.spec.obs_len());
        out
    }
}

fn empty_state(spec: &GameSpec) -> WorldState {
    let n = spec.n_agents();
    WorldState {
        agent_pos: vec![[0.0; 2]; n],
        agent_vel: vec![[0.0; 2]; n],
        frozen_until: vec![0; n],
        landmarks: vec![[0.0; 2]; spec.n_landmarks()],
        resources: Vec::new(),
        consumers: Vec::new(),
        step_index: 0,
        done: false,
        rng: ChaCha12Rng::seed_from_u64(spec.seed),
    }
}

impl Environment for TouchMarkEnv {
    fn spec(&self) -> &GameSpec {
        &self.spec
    }

    fn state(&self) -> &WorldState {
        &self.state
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let mut state = empty_state(&self.spec);
        state.rng = ChaCha12Rng::seed_from_u64(seed);
        for i in 0..self.spec.n_agents() {
            state.agent_pos[i] = random_pos(&mut state.rng, self.spec.board_half_width);
        }
        for l in 0..self.spec.n_landmarks() {
            state.landmarks[l] = random_pos(&mut state.rng, self.spec.board_half_width);
        }
        self.state = state;
        (0..self.spec.n_agents())
            .map(|i| self.observe_unchecked(i))
            .collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.spec.n_agents();
        if actions.len() != n {
            return Err(EnvError::WrongActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        for (agent, &action) in actions.iter().enumerate() {
            if action >= self.spec.n_actions() {
                return Err(EnvError::InvalidAction {
                    agent,
                    action,
                    limit: self.spec.n_actions(),
                });
            }
        }

        let t = self.state.step_index;
        let mut rewards = vec![0.0f32; n];
        let mut events = StepEvents {
            step: t,
            ..StepEvents::default()
        };

        // Movement. Frozen agents ignore forces and keep zero velocity.
        let frozen_now: Vec<bool> = (0..n).map(|i| self.state.frozen_until[i] > t).collect();
        for i in 0..n {
            if frozen_now[i] {
                self.state.agent_vel[i] = [0.0, 0.0];
                continue;
            }
            let force = movement_force(actions[i]);
            let (pos, vel) = (&mut self.state.agent_pos[i], &mut self.state.agent_vel[i]);
            integrate(&self.spec, pos, vel, force);
        }

        // Opposing-team contact freezes both agents and pushes them apart to
        // exactly touch_radius separation so an expired freeze does not
        // immediately re-trigger on the same overlap.
        for i in 0..n {
            for j in (i + 1)..n {
                if self.spec.team_of(i) == self.spec.team_of(j) {
                    continue;
                }
                if frozen_now[i] || frozen_now[j] {
                    continue;
                }
                let d = dist(self.state.agent_pos[i], self.state.agent_pos[j]);
                if d > self.spec.touch_radius {
                    continue;
                }
                events.collisions.push((i, j));
                rewards[i] += self.spec.collision_penalty;
                rewards[j] += self.spec.collision_penalty;
                for k in [i, j] {
                    self.state.agent_vel[k] = [0.0, 0.0];
                    self.state.frozen_until[k] = t + 1 + self.spec.collision_freeze_steps;
                }
                let (pi, pj) = (self.state.agent_pos[i], self.state.agent_pos[j]);
                let hw = self.spec.board_half_width;
                let (dir, half_gap) = if d > 1e-6 {
                    (
                        [(pj[0] - pi[0]) / d, (pj[1] - pi[1]) / d],
                        (self.spec.touch_radius - d) / 2.0,
                    )
                } else {
                    ([1.0, 0.0], self.spec.touch_radius / 2.0)
                };
                for k in 0..2 {
                    self.state.agent_pos[i][k] = (pi[k] - dir[k] * half_gap).clamp(-hw, hw);
                    self.state.agent_pos[j][k] = (pj[k] + dir[k] * half_gap).clamp(-hw, hw);
                }
            }
        }

        // First landmark touch ends the episode; simultaneous touches resolve
        // to the lowest agent id.
        let toucher = (0..n).find(|&i| {
            self.state
                .landmarks
                .iter()
                .any(|&lm| dist(self.state.agent_pos[i], lm) <= self.spec.touch_radius)
        });
        if let Some(winner) = toucher {
            let team = self.spec.team_of(winner);
            for i in 0..n {
                if self.spec.team_of(i) == team {
                    rewards[i] += self.spec.landmark_reward;
                } else {
                    rewards[i] -= self.spec.landmark_reward;
                }
            }
            events.landmark_touch = Some(winner);
            self.state.done = true;
        }

        // Per-step shaping toward the nearest landmark, final step included.
        for i in 0..n {
            let nearest = self
                .state
                .landmarks
                .iter()
                .map(|&lm| dist(self.state.agent_pos[i], lm))
                .fold(f32::INFINITY, f32::min);
            rewards[i] -= self.spec.distance_penalty_coeff * nearest;
        }

        self.state.step_index += 1;
        if !self.state.done && self.state.step_index >= self.spec.episode_limit {
            self.state.done = true;
            events.timeout = true;
        }

        let obs = (0..n).map(|i| self.observe_unchecked(i)).collect();
        Ok(StepOutcome {
            obs,
            rewards,
            done: self.state.done,
            events,
        })
    }

    fn observe(&self, agent: usize) -> Result<Observation, EnvError> {
        if agent >= self.spec.n_agents() {
            return Err(EnvError::UnknownAgent(agent));
        }
        Ok(self.observe_unchecked(agent))
    }
}
