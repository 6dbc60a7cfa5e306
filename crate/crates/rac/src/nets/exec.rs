//! Decentralized per-agent execution: each agent acts from its own
//! observation, its own trajectory state, and its team's role networks,
//! never touching a critic or another agent's observation.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, ParamSet};

use super::gaussian::GaussianValue;
use super::{obs_rows, onehot_rows, Lease, Model, RoleSample};

pub struct AgentExecutor<'a> {
    model: &'a Model,
    params: &'a ParamSet<f32>,
    pub agent: usize,
    tau: Vec<f32>,
    prev_action: Option<usize>,
}

impl<'a> AgentExecutor<'a> {
    pub fn new(model: &'a Model, params: &'a ParamSet<f32>, agent: usize) -> Self {
        AgentExecutor {
            model,
            params,
            agent,
            tau: vec![0.0; model.net.gru_hidden],
            prev_action: None,
        }
    }

    /// Reset the trajectory embedding to zero and forget the last action.
    pub fn begin_episode(&mut self) {
        self.tau.iter_mut().for_each(|v| *v = 0.0);
        self.prev_action = None;
    }

    pub fn trajectory(&self) -> &[f32] {
        &self.tau
    }

    /// Sample one action. Noise consumption order per call: self-role noise
    /// (`role_dim` draws), one opponent-slot noise block per opponent, then a
    /// single uniform draw for the action, so fixed seeds give fixed
    /// trajectories.
    pub fn act(&mut self, obs: &[f32], rng: &mut ChaCha12Rng) -> usize {
        let g: Graph<f32> = Graph::new();
        let lease = Lease::frozen(&g, self.params);
        let obs_t = obs_rows(&g, &[obs]);
        let aprev = onehot_rows(&g, &[self.prev_action], self.model.spec.n_actions());

        let mut role_tensors = Vec::new();
        if self.model.variant.uses_roles() {
            let dist = self.model.self_role(&lease, self.agent, &obs_t, &aprev);
            let eps: Vec<f32> = (0..self.model.net.role_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let sample = RoleSample::draw(&g, dist, eps);
            role_tensors.push(sample.value);
            if self.model.variant.uses_opponent_roles() {
                let tau_t = obs_rows(&g, &[&self.tau]);
                for (_, dist) in self.model.opponent_roles(&lease, self.agent, &obs_t, &tau_t) {
                    let eps: Vec<f32> = (0..self.model.net.role_dim)
                        .map(|_| rng.sample(StandardNormal))
                        .collect();
                    role_tensors.push(RoleSample::draw(&g, dist, eps).value);
                }
            }
        }
        let role_refs: Vec<&_> = role_tensors.iter().collect();
        let logits = self
            .model
            .policy_logits(&lease, self.agent, &obs_t, &role_refs);
        let probs = logits.softmax().value();
        let action = sample_categorical(&probs, rng);

        if self.model.variant.uses_roles() {
            let tau_t = obs_rows(&g, &[&self.tau]);
            let a_onehot = onehot_rows(&g, &[Some(action)], self.model.spec.n_actions());
            self.tau = self
                .model
                .traj_step(&lease, self.agent, &tau_t, &obs_t, &a_onehot)
                .value();
        }
        self.prev_action = Some(action);
        action
    }

    /// Current self-role distribution for the given observation, without
    /// advancing any state. `None` for the role-free baseline.
    pub fn self_role_dist(&self, obs: &[f32]) -> Option<GaussianValue> {
        if !self.model.variant.uses_roles() {
            return None;
        }
        let g: Graph<f32> = Graph::new();
        let lease = Lease::frozen(&g, self.params);
        let obs_t = obs_rows(&g, &[obs]);
        let aprev = onehot_rows(&g, &[self.prev_action], self.model.spec.n_actions());
        let dist = self.model.self_role(&lease, self.agent, &obs_t, &aprev);
        Some(dist.value_at(0))
    }
}

pub(crate) fn sample_categorical(probs: &[f32], rng: &mut ChaCha12Rng) -> usize {
    let u: f32 = rng.random();
    let mut cdf = 0.0f32;
    for (i, p) in probs.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return i;
        }
    }
    probs.len() - 1
}
