//! Network definitions and parameter registry for one game instance.
//!
//! Parameter naming: role-group networks (`traj`, `hs`, `ho`, `post`) key on
//! the team (`t0`, `t1`) when shared per team, otherwise on the agent
//! (`a0`..); policies (`pi`) and critics (`critic`) key per agent unless
//! shared per team. The per-head attention value extractors live under
//! `critic.shared`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{concat_cols, ParamSet, Real, Shape, Tensor};
use crate::config::{NetConfig, Variant};
use crate::env::GameSpec;

use super::gaussian::Gaussian;
use super::{audit, gru_step, linear, Lease};

#[derive(Clone)]
pub struct Model {
    pub spec: GameSpec,
    pub net: NetConfig,
    pub variant: Variant,
    pub std_floor: f64,
}

pub struct CriticOutput<R: Real> {
    /// One Q value per candidate own action: `[m, n_actions]`.
    pub q: Tensor<R>,
    /// Per-head attention weights over the attended agents: `[m, n_attended]`.
    pub attention: Vec<Tensor<R>>,
    /// Ids attended, in the order of the attention columns.
    pub attended: Vec<usize>,
}

impl Model {
    pub fn new(spec: GameSpec, net: NetConfig, variant: Variant, std_floor: f64) -> Model {
        Model {
            spec,
            net,
            variant,
            std_floor,
        }
    }

    /// Opponent slots per agent.
    pub fn n_opponents(&self) -> usize {
        self.spec.agents_per_team * (self.spec.teams - 1)
    }

    /// Width of the role block appended to policy inputs and the critic's
    /// own-agent embedding.
    pub fn role_input_width(&self) -> usize {
        match self.variant {
            Variant::Maac => 0,
            Variant::RacTeam => self.net.role_dim,
            _ => self.net.role_dim * (1 + self.n_opponents()),
        }
    }

    fn role_key(&self, agent: usize) -> String {
        if self.net.share_role_nets_per_team {
            format!("t{}", self.spec.team_of(agent))
        } else {
            format!("a{agent}")
        }
    }

    fn ac_key(&self, agent: usize) -> String {
        if self.net.share_actor_critic_per_team {
            format!("t{}", self.spec.team_of(agent))
        } else {
            format!("a{agent}")
        }
    }

    fn role_keys(&self) -> Vec<String> {
        if self.net.share_role_nets_per_team {
            (0..self.spec.teams).map(|t| format!("t{t}")).collect()
        } else {
            (0..self.spec.n_agents()).map(|a| format!("a{a}")).collect()
        }
    }

    fn ac_keys(&self) -> Vec<String> {
        if self.net.share_actor_critic_per_team {
            (0..self.spec.teams).map(|t| format!("t{t}")).collect()
        } else {
            (0..self.spec.n_agents()).map(|a| format!("a{a}")).collect()
        }
    }

    /// Agents the critic of `agent` attends over.
    pub fn critic_others(&self, agent: usize) -> Vec<usize> {
        if self.variant.critic_sees_opponents() {
            (0..self.spec.n_agents()).filter(|&j| j != agent).collect()
        } else {
            self.spec.teammates_of(agent)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.net.attn_dim / self.net.attn_heads
    }

    // -- parameter registry --------------------------------------------------

    /// Register every parameter of this model with a seeded uniform
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init; iteration order is fixed, so
    /// a given seed reproduces the same initialization.
    pub fn init_params<R: Real>(&self, seed: u64) -> ParamSet<R> {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let obs = self.spec.obs_len();
        let acts = self.spec.n_actions();
        let (role_d, gru, hidden) = (self.net.role_dim, self.net.gru_hidden, self.net.mlp_hidden);
        let attn = self.net.attn_dim;
        let head = self.head_dim();

        let lin = |ps: &mut ParamSet<R>, rng: &mut ChaCha12Rng, prefix: &str, fan_in: usize, out: usize| {
            let k = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<R> = (0..fan_in * out)
                .map(|_| R::of(rng.random_range(-k..=k)))
                .collect();
            ps.insert(&format!("{prefix}.w"), Shape::Matrix(fan_in, out), w);
            let b: Vec<R> = (0..out).map(|_| R::of(rng.random_range(-k..=k))).collect();
            ps.insert(&format!("{prefix}.b"), Shape::Vector(out), b);
        };

        if self.variant.uses_roles() {
            for key in self.role_keys() {
                lin(&mut ps, &mut rng, &format!("traj.{key}.embed"), obs + acts, gru);
                for gate in ["z", "r", "c"] {
                    let k = 1.0 / (gru as f64).sqrt();
                    for mat in ["w", "u"] {
                        let vals: Vec<R> = (0..gru * gru)
                            .map(|_| R::of(rng.random_range(-k..=k)))
                            .collect();
                        ps.insert(
                            &format!("traj.{key}.gru.{mat}{gate}"),
                            Shape::Matrix(gru, gru),
                            vals,
                        );
                    }
                    ps.insert(
                        &format!("traj.{key}.gru.b{gate}"),
                        Shape::Vector(gru),
                        vec![R::zero(); gru],
                    );
                }
            }
            for key in self.role_keys() {
                lin(&mut ps, &mut rng, &format!("hs.{key}.l1"), obs + acts, hidden);
                lin(&mut ps, &mut rng, &format!("hs.{key}.out"), hidden, 2 * role_d);
            }
            if self.variant.uses_opponent_roles() {
                for key in self.role_keys() {
                    lin(&mut ps, &mut rng, &format!("ho.{key}.l1"), obs + gru, hidden);
                    lin(
                        &mut ps,
                        &mut rng,
                        &format!("ho.{key}.out"),
                        hidden,
                        self.n_opponents() * 2 * role_d,
                    );
                }
            }
            for key in self.role_keys() {
                lin(&mut ps, &mut rng, &format!("post.{key}.l1"), obs + acts + gru, hidden);
                lin(&mut ps, &mut rng, &format!("post.{key}.out"), hidden, 2 * role_d);
            }
        }

        let role_in = self.role_input_width();
        for key in self.ac_keys() {
            lin(&mut ps, &mut rng, &format!("pi.{key}.l1"), obs + role_in, hidden);
            lin(&mut ps, &mut rng, &format!("pi.{key}.l2"), hidden, hidden);
            lin(&mut ps, &mut rng, &format!("pi.{key}.out"), hidden, acts);
        }
        for key in self.ac_keys() {
            lin(&mut ps, &mut rng, &format!("critic.{key}.gself"), obs + role_in, attn);
            lin(&mut ps, &mut rng, &format!("critic.{key}.gother"), obs + acts, attn);
            for h in 0..self.net.attn_heads {
                let k = 1.0 / (attn as f64).sqrt();
                let vals: Vec<R> = (0..attn * head)
                    .map(|_| R::of(rng.random_range(-k..=k)))
                    .collect();
                ps.insert(
                    &format!("critic.{key}.key.h{h}.w"),
                    Shape::Matrix(attn, head),
                    vals,
                );
            }
            lin(&mut ps, &mut rng, &format!("critic.{key}.head.l1"), 2 * attn, hidden);
            lin(&mut ps, &mut rng, &format!("critic.{key}.head.out"), hidden, acts);
        }
        for h in 0..self.net.attn_heads {
            let k = 1.0 / (attn as f64).sqrt();
            let vals: Vec<R> = (0..attn * head)
                .map(|_| R::of(rng.random_range(-k..=k)))
                .collect();
            ps.insert(
                &format!("critic.shared.val.h{h}.w"),
                Shape::Matrix(attn, head),
                vals,
            );
        }
        ps
    }

    pub fn is_policy_param(name: &str) -> bool {
        name.starts_with("pi.")
    }

    pub fn is_critic_param(name: &str) -> bool {
        name.starts_with("critic.")
    }

    pub fn is_role_param(name: &str) -> bool {
        name.starts_with("hs.")
            || name.starts_with("ho.")
            || name.starts_with("post.")
            || name.starts_with("traj.")
    }

    /// Clone of the parameters that get target copies: critics and policies.
    pub fn target_subset<R: Real>(&self, params: &ParamSet<R>) -> ParamSet<R> {
        params.subset(|n| Self::is_policy_param(n) || Self::is_critic_param(n))
    }

    // -- forward passes -------------------------------------------------------

    /// Advance the trajectory embedding with `(o_t, a_t)`.
    pub fn traj_step<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        hidden: &Tensor<R>,
        obs: &Tensor<R>,
        action_onehot: &Tensor<R>,
    ) -> Tensor<R> {
        let key = self.role_key(agent);
        let x = linear(lease, &format!("traj.{key}.embed"), &concat_cols(&[obs, action_onehot])).relu();
        gru_step(lease, &format!("traj.{key}.gru"), hidden, &x)
    }

    fn gaussian_head<R: Real>(&self, raw: &Tensor<R>, role_dim: usize, slot: usize) -> Gaussian<R> {
        let start = slot * 2 * role_dim;
        let mean = raw.slice_cols(start, start + role_dim);
        let std = raw
            .slice_cols(start + role_dim, start + 2 * role_dim)
            .softplus()
            .add_scalar(R::of(self.std_floor));
        Gaussian { mean, std }
    }

    /// Self-role distribution from `(o_t, a_{t-1})`.
    pub fn self_role<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        obs: &Tensor<R>,
        prev_action_onehot: &Tensor<R>,
    ) -> Gaussian<R> {
        let key = self.role_key(agent);
        let h = linear(lease, &format!("hs.{key}.l1"), &concat_cols(&[obs, prev_action_onehot])).relu();
        let raw = linear(lease, &format!("hs.{key}.out"), &h);
        self.gaussian_head(&raw, self.net.role_dim, 0)
    }

    /// Predicted role distribution for every opponent of `agent`, in
    /// ascending opponent id order, from `(o_t, tau_{t-1})`.
    pub fn opponent_roles<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        obs: &Tensor<R>,
        tau_prev: &Tensor<R>,
    ) -> Vec<(usize, Gaussian<R>)> {
        assert!(
            self.variant.uses_opponent_roles(),
            "variant {:?} has no opponent-role predictor",
            self.variant
        );
        let key = self.role_key(agent);
        let h = linear(lease, &format!("ho.{key}.l1"), &concat_cols(&[obs, tau_prev])).relu();
        let raw = linear(lease, &format!("ho.{key}.out"), &h);
        self.spec
            .opponents_of(agent)
            .into_iter()
            .enumerate()
            .map(|(slot, opp)| (opp, self.gaussian_head(&raw, self.net.role_dim, slot)))
            .collect()
    }

    /// Variational posterior `q(rho | o, a_prev, tau_prev)` keyed by
    /// `agent`'s team. The caller picks whose observation, action and
    /// trajectory go in.
    pub fn posterior<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        obs: &Tensor<R>,
        prev_action_onehot: &Tensor<R>,
        tau_prev: &Tensor<R>,
    ) -> Gaussian<R> {
        let key = self.role_key(agent);
        let h = linear(
            lease,
            &format!("post.{key}.l1"),
            &concat_cols(&[obs, prev_action_onehot, tau_prev]),
        )
        .relu();
        let raw = linear(lease, &format!("post.{key}.out"), &h);
        self.gaussian_head(&raw, self.net.role_dim, 0)
    }

    /// Policy logits over the action set; `roles` is empty for the baseline
    /// variant, `[rho_i]` for the team-scoped variant, and
    /// `[rho_i, rho_hat_1, ..]` otherwise.
    pub fn policy_logits<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        obs: &Tensor<R>,
        roles: &[&Tensor<R>],
    ) -> Tensor<R> {
        let key = self.ac_key(agent);
        let mut parts: Vec<&Tensor<R>> = vec![obs];
        parts.extend_from_slice(roles);
        let x = concat_cols(&parts);
        let h1 = linear(lease, &format!("pi.{key}.l1"), &x).relu();
        let h2 = linear(lease, &format!("pi.{key}.l2"), &h1).relu();
        linear(lease, &format!("pi.{key}.out"), &h2)
    }

    /// Attention critic for `agent`: the own-agent embedding consumes the
    /// observation plus the role block, every other agent contributes an
    /// embedding of `(o_j, a_j)`, and per-head attention-weighted values feed
    /// a head that outputs one Q per candidate own action.
    ///
    /// `others` carries `(agent id, obs, action one-hot)` and may be given in
    /// any order; the output does not depend on it beyond float rounding.
    pub fn critic<R: Real>(
        &self,
        lease: &Lease<R>,
        agent: usize,
        obs: &Tensor<R>,
        roles: &[&Tensor<R>],
        others: &[(usize, Tensor<R>, Tensor<R>)],
    ) -> CriticOutput<R> {
        audit::CRITIC_EVALS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let my_team = self.spec.team_of(agent);
        for (j, _, _) in others {
            if self.spec.team_of(*j) != my_team {
                audit::CRITIC_OPP_OBS_READS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        }
        assert!(!others.is_empty(), "critic needs at least one other agent");

        let key = self.ac_key(agent);
        let mut parts: Vec<&Tensor<R>> = vec![obs];
        parts.extend_from_slice(roles);
        let g_self = linear(lease, &format!("critic.{key}.gself"), &concat_cols(&parts)).relu();

        let g_others: Vec<Tensor<R>> = others
            .iter()
            .map(|(j, o, a)| {
                let jk = self.ac_key(*j);
                linear(lease, &format!("critic.{jk}.gother"), &concat_cols(&[o, a])).relu()
            })
            .collect();

        let scale = R::of(1.0 / (self.head_dim() as f64).sqrt());
        let mut head_contexts: Vec<Tensor<R>> = Vec::with_capacity(self.net.attn_heads);
        let mut attention = Vec::with_capacity(self.net.attn_heads);
        for h in 0..self.net.attn_heads {
            let wq = lease.get(&format!("critic.{key}.key.h{h}.w"));
            let q = g_self.matmul(&wq);
            // score_j = (W_i g_i) . (W_j g_j), stacked into [m, n_others]
            let scores: Vec<Tensor<R>> = others
                .iter()
                .zip(g_others.iter())
                .map(|((j, _, _), gj)| {
                    let jk = self.ac_key(*j);
                    let wk = lease.get(&format!("critic.{jk}.key.h{h}.w"));
                    let kj = gj.matmul(&wk);
                    let (m, _) = q.shape().dims2();
                    q.mul(&kj).row_sum().mul_scalar(scale).reshape(Shape::Matrix(m, 1))
                })
                .collect();
            let score_refs: Vec<&Tensor<R>> = scores.iter().collect();
            let alpha = concat_cols(&score_refs).softmax();

            let wv = lease.get(&format!("critic.shared.val.h{h}.w"));
            let mut ctx: Option<Tensor<R>> = None;
            for (col, gj) in g_others.iter().enumerate() {
                let vj = gj.matmul(&wv).relu();
                let (m, _) = vj.shape().dims2();
                let a_col = alpha
                    .slice_cols(col, col + 1)
                    .reshape(Shape::Vector(m));
                let term = vj.scale_rows(&a_col);
                ctx = Some(match ctx {
                    None => term,
                    Some(c) => c.add(&term),
                });
            }
            head_contexts.push(ctx.expect("non-empty attention set"));
            attention.push(alpha);
        }

        let ctx_refs: Vec<&Tensor<R>> = head_contexts.iter().collect();
        let x = concat_cols(&ctx_refs);
        let head_in = concat_cols(&[&g_self, &x]);
        let h1 = linear(lease, &format!("critic.{key}.head.l1"), &head_in).relu();
        let q = linear(lease, &format!("critic.{key}.head.out"), &h1);
        CriticOutput {
            q,
            attention,
            attended: others.iter().map(|(j, _, _)| *j).collect(),
        }
    }
}
