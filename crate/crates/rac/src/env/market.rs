//! Market: teams pick scattered resources and deliver them to the matching
//! consumers before the opponents do.
//!
//! Four resources (two per type) and one consumer per type are placed at
//! random. A pick succeeds when a free resource lies within the contact
//! radius and the agent carries nothing; a drop succeeds at the matching
//! consumer while it is still alive. Both add `pick_drop_reward` to every
//! member of the acting team. A consumer dies once one resource of its type
//! is delivered, so at most two drops can happen per episode. While carrying,
//! an agent pays a per-step penalty proportional to its distance from the
//! matching consumer. Episodes end only by timeout.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{
    dist, integrate, movement_force, push_agent_block, random_pos, ConsumerState, EnvError,
    Environment, GameSpec, Observation, ResourceState, ResourceStatus, StepEvents, StepOutcome,
    WorldState, ACT_DROP, ACT_PICK,
};

pub struct MarketEnv {
    spec: GameSpec,
    state: WorldState,
}

impl MarketEnv {
    pub fn new(spec: GameSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let seed = spec.seed;
        let mut env = MarketEnv {
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

    fn carried_kind(&self, agent: usize) -> Option<usize> {
        self.state
            .resources
            .iter()
            .find(|r| r.status == ResourceStatus::CarriedBy(agent))
            .map(|r| r.kind)
    }

    fn observe_unchecked(&self, agent: usize) -> Observation {
        let mut out = Vec::with_capacity(self.spec.obs_len());
        let p = self.state.agent_pos[agent];
        out.extend_from_slice(&p);
        out.extend_from_slice(&self.state.agent_vel[agent]);
        for r in &self.state.resources {
            out.push(r.pos[0] - p[0]);
            out.push(r.pos[1] - p[1]);
        }
        for c in &self.state.consumers {
            out.push(c.pos[0] - p[0]);
            out.push(c.pos[1] - p[1]);
        }
        let mut full = Vec::new();
        push_agent_block(&mut full, &self.spec, &self.state, agent);
        out.extend_from_slice(&full[4..]);
        let carried = self.carried_kind(agent);
        out.push(if carried == Some(0) { 1.0 } else { 0.0 });
        out.push(if carried == Some(1) { 1.0 } else { 0.0 });
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
        landmarks: Vec::new(),
        resources: (0..spec.n_resources())
            .map(|r| ResourceState {
                kind: r / 2, // two of kind 0, then two of kind 1
                pos: [0.0; 2],
                status: ResourceStatus::Free,
            })
            .collect(),
        consumers: (0..spec.n_consumers())
            .map(|k| ConsumerState {
                kind: k,
                pos: [0.0; 2],
                alive: true,
            })
            .collect(),
        step_index: 0,
        done: false,
        rng: ChaCha12Rng::seed_from_u64(spec.seed),
    }
}

impl Environment for MarketEnv {
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
        for r in &mut state.resources {
            r.pos = random_pos(&mut state.rng, self.spec.board_half_width);
        }
        for c in &mut state.consumers {
            c.pos = random_pos(&mut state.rng, self.spec.board_half_width);
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

        for i in 0..n {
            let force = movement_force(actions[i]);
            let (pos, vel) = (&mut self.state.agent_pos[i], &mut self.state.agent_vel[i]);
            integrate(&self.spec, pos, vel, force);
        }

        // Carried resources move with their carriers.
        for ri in 0..self.state.resources.len() {
            if let ResourceStatus::CarriedBy(agent) = self.state.resources[ri].status {
                self.state.resources[ri].pos = self.state.agent_pos[agent];
            }
        }

        // Picks in ascending agent id; a contested resource goes to the
        // lowest id. Nearest eligible resource wins on distance ties by index.
        for agent in 0..n {
            if actions[agent] != ACT_PICK || self.carried_kind(agent).is_some() {
                continue;
            }
            let p = self.state.agent_pos[agent];
            let mut best: Option<(usize, f32)> = None;
            for (ri, r) in self.state.resources.iter().enumerate() {
                if r.status != ResourceStatus::Free {
                    continue;
                }
                let d = dist(p, r.pos);
                if d <= self.spec.touch_radius && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((ri, d));
                }
            }
            if let Some((ri, _)) = best {
                self.state.resources[ri].status = ResourceStatus::CarriedBy(agent);
                self.state.resources[ri].pos = p;
                events.picks.push((agent, ri));
                let team = self.spec.team_of(agent);
                for m in self.spec.team_members(team) {
                    rewards[m] += self.spec.pick_drop_reward;
                }
            }
        }

        // Drops at the matching live consumer.
        for agent in 0..n {
            if actions[agent] != ACT_DROP {
                continue;
            }
            let Some((ri, kind)) = self
                .state
                .resources
                .iter()
                .enumerate()
                .find(|(_, r)| r.status == ResourceStatus::CarriedBy(agent))
                .map(|(ri, r)| (ri, r.kind))
            else {
                continue;
            };
            let ci = kind; // one consumer per kind, indexed by kind
            let consumer = &self.state.consumers[ci];
            if !consumer.alive || dist(self.state.agent_pos[agent], consumer.pos) > self.spec.touch_radius
            {
                continue;
            }
            self.state.resources[ri].status = ResourceStatus::Delivered;
            self.state.resources[ri].pos = consumer.pos;
            self.state.consumers[ci].alive = false;
            events.drops.push((agent, ci));
            let team = self.spec.team_of(agent);
            for m in self.spec.team_members(team) {
                rewards[m] += self.spec.pick_drop_reward;
            }
        }

        // Carrying penalty toward the matching consumer while it is alive.
        for agent in 0..n {
            if let Some(kind) = self.carried_kind(agent) {
                let consumer = &self.state.consumers[kind];
                if consumer.alive {
                    rewards[agent] -= self.spec.distance_penalty_coeff
                        * dist(self.state.agent_pos[agent], consumer.pos);
                }
            }
        }

        self.state.step_index += 1;
        if self.state.step_index >= self.spec.episode_limit {
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
