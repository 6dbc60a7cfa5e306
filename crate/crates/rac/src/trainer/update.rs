//! One training update over a batch of sampled episode windows.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{concat_rows, Graph, Shape, Tensor};
use crate::losses::{
    critic_td, cross_team_pairs, diversity_loss, mi_loss, opponent_loss, ordered_teammate_pairs,
    policy_surrogate, role_weight, total_loss, LossBundle,
};
use crate::nets::{obs_rows, onehot_rows, Gaussian, Lease, Model, RoleSample};
use crate::replay::{ReplayBuffer, WindowRef};

use super::{TrainError, Trainer};

/// Raw batch slices copied out of the replay buffer, indexed by absolute
/// episode step (for the trajectory chain) and by window step (for losses).
struct BatchData {
    rows: usize,
    chain: Vec<ChainSlice>,
    steps: Vec<StepSlice>,
}

struct ChainSlice {
    active: Vec<bool>,
    /// `[agent][row]`
    obs: Vec<Vec<Vec<f32>>>,
    actions: Vec<Vec<usize>>,
}

struct StepSlice {
    mask: Vec<bool>,
    /// Absolute step per row, clamped to the last valid step for masked rows.
    times: Vec<usize>,
    obs: Vec<Vec<Vec<f32>>>,
    prev_actions: Vec<Vec<Option<usize>>>,
    actions: Vec<Vec<usize>>,
    rewards: Vec<Vec<f32>>,
    next_obs: Vec<Vec<Vec<f32>>>,
    dones: Vec<bool>,
}

impl BatchData {
    fn assemble(buffer: &ReplayBuffer, windows: &[WindowRef], n_agents: usize) -> BatchData {
        let rows = windows.len();
        let chain_len = windows.iter().map(|w| w.start + w.len).max().unwrap();
        let max_len = windows.iter().map(|w| w.len).max().unwrap();

        let mut chain = Vec::with_capacity(chain_len);
        for k in 0..chain_len {
            let mut slice = ChainSlice {
                active: vec![false; rows],
                obs: vec![Vec::with_capacity(rows); n_agents],
                actions: vec![Vec::with_capacity(rows); n_agents],
            };
            for (r, w) in windows.iter().enumerate() {
                let ep = buffer.get(w.episode);
                let t = k.min(ep.len() - 1);
                slice.active[r] = k < ep.len();
                for agent in 0..n_agents {
                    slice.obs[agent].push(ep.obs[t][agent].clone());
                    slice.actions[agent].push(ep.actions[t][agent]);
                }
            }
            chain.push(slice);
        }

        let mut steps = Vec::with_capacity(max_len);
        for j in 0..max_len {
            let mut slice = StepSlice {
                mask: vec![false; rows],
                times: vec![0; rows],
                obs: vec![Vec::with_capacity(rows); n_agents],
                prev_actions: vec![Vec::with_capacity(rows); n_agents],
                actions: vec![Vec::with_capacity(rows); n_agents],
                rewards: vec![Vec::with_capacity(rows); n_agents],
                next_obs: vec![Vec::with_capacity(rows); n_agents],
                dones: vec![false; rows],
            };
            for (r, w) in windows.iter().enumerate() {
                let ep = buffer.get(w.episode);
                let valid = j < w.len;
                let t = if valid { w.start + j } else { w.start + w.len - 1 };
                slice.mask[r] = valid;
                slice.times[r] = t;
                let tr = ep.transition(t);
                slice.dones[r] = tr.done;
                for agent in 0..n_agents {
                    slice.obs[agent].push(tr.obs[agent].clone());
                    slice.prev_actions[agent].push(tr.prev_actions.map(|p| p[agent]));
                    slice.actions[agent].push(tr.actions[agent]);
                    slice.rewards[agent].push(tr.rewards[agent]);
                    slice.next_obs[agent].push(tr.next_obs[agent].clone());
                }
            }
            steps.push(slice);
        }
        BatchData { rows, chain, steps }
    }
}

fn rows_tensor(g: &Graph<f32>, rows: &[Vec<f32>]) -> Tensor<f32> {
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    obs_rows(g, &refs)
}

/// Pick per-row chain states: row `r` takes `states[times[r]]`'s row `r`.
fn gather_time_rows(states: &[Tensor<f32>], times: &[usize], rows: usize) -> Tensor<f32> {
    let t0 = times[0];
    if times.iter().all(|&t| t == t0) {
        return states[t0].clone();
    }
    let refs: Vec<&Tensor<f32>> = states.iter().collect();
    let stacked = concat_rows(&refs);
    let idx: Vec<usize> = times
        .iter()
        .enumerate()
        .map(|(r, &t)| t * rows + r)
        .collect();
    stacked.gather_rows(&idx)
}

/// Saved tensors from the role phase, reused when rebuilding the same
/// samples inside the per-step critic graphs and the target computation.
struct RoleTrace {
    /// `[step][agent]` flattened `rows x role_dim` noise.
    eps_self: Vec<Vec<Vec<f32>>>,
    /// `[step][agent][slot]`
    eps_opp: Vec<Vec<Vec<Vec<f32>>>>,
    /// `[step][agent]` flattened `rows x gru_hidden` values of `tau_{t-1}`.
    tau_prev: Vec<Vec<Vec<f32>>>,
    /// `[step][agent]` values of `tau_t`, consumed by the bootstrap target.
    tau_next: Vec<Vec<Vec<f32>>>,
}

impl Trainer {
    /// One batch update. Window steps run in order: every step takes a
    /// critic and a policy gradient step and soft-updates the targets; the
    /// role networks step once at the end on the decayed sum of their
    /// objectives accumulated across all steps and episodes.
    pub fn train_update(&mut self) -> Result<LossBundle, TrainError> {
        let windows = self.buffer.sample_windows(
            self.cfg.train.batch_episodes,
            self.cfg.train.window,
            &mut self.rng,
        )?;
        let n = self.cfg.game.n_agents();
        let data = BatchData::assemble(&self.buffer, &windows, n);
        self.updates_done += 1;

        let uses_roles = self.cfg.train.variant.uses_roles();
        let uses_opp = self.cfg.train.variant.uses_opponent_roles();
        let role_dim = self.cfg.nets.role_dim;
        let n_actions = self.cfg.game.n_actions();
        let alpha = self.cfg.loss.alpha;
        let rows = data.rows;

        // ---- role phase: trajectory chains, role distributions, role losses.
        let g_role: Graph<f32> = Graph::new();
        let mut l_mi_val = 0.0f64;
        let mut l_d_val = 0.0f64;
        let mut l_opp_val = 0.0f64;
        let mut role_losses: Vec<Tensor<f32>> = Vec::new();
        let mut trace = RoleTrace {
            eps_self: Vec::new(),
            eps_opp: Vec::new(),
            tau_prev: Vec::new(),
            tau_next: Vec::new(),
        };
        if uses_roles {
            // Fixed draw order: per step, per agent, self noise then one
            // block per opponent slot.
            let n_opp = if uses_opp { self.model.n_opponents() } else { 0 };
            for _ in 0..data.steps.len() {
                let mut step_self = Vec::with_capacity(n);
                let mut step_opp = Vec::with_capacity(n);
                for _ in 0..n {
                    let eps: Vec<f32> = (0..rows * role_dim)
                        .map(|_| (&mut self.rng).sample(StandardNormal))
                        .collect();
                    step_self.push(eps);
                    let slots: Vec<Vec<f32>> = (0..n_opp)
                        .map(|_| {
                            (0..rows * role_dim)
                                .map(|_| (&mut self.rng).sample(StandardNormal))
                                .collect()
                        })
                        .collect();
                    step_opp.push(slots);
                }
                trace.eps_self.push(step_self);
                trace.eps_opp.push(step_opp);
            }

            let lease = Lease::trainable(&g_role, &self.params);
            // Trajectory chain per agent, masked so finished rows freeze.
            let hidden = self.cfg.nets.gru_hidden;
            let mut states: Vec<Vec<Tensor<f32>>> = Vec::with_capacity(n);
            for agent in 0..n {
                let mut chain = Vec::with_capacity(data.chain.len() + 1);
                chain.push(g_role.constant(vec![0.0; rows * hidden], Shape::Matrix(rows, hidden)));
                for slice in &data.chain {
                    let h = chain.last().unwrap();
                    let obs = rows_tensor(&g_role, &slice.obs[agent]);
                    let act = onehot_rows(
                        &g_role,
                        &slice.actions[agent].iter().map(|&a| Some(a)).collect::<Vec<_>>(),
                        n_actions,
                    );
                    let advanced = self.model.traj_step(&lease, agent, h, &obs, &act);
                    let on: Vec<f32> = slice.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
                    let off: Vec<f32> = slice.active.iter().map(|&a| if a { 0.0 } else { 1.0 }).collect();
                    let on_t = g_role.constant(on, Shape::Vector(rows));
                    let off_t = g_role.constant(off, Shape::Vector(rows));
                    let next = advanced.scale_rows(&on_t).add(&h.scale_rows(&off_t));
                    chain.push(next);
                }
                states.push(chain);
            }

            let teammate_pairs = ordered_teammate_pairs(&self.cfg.game);
            let opp_pairs = cross_team_pairs(&self.cfg.game);
            for (j, step) in data.steps.iter().enumerate() {
                let tau_prev: Vec<Tensor<f32>> = (0..n)
                    .map(|agent| gather_time_rows(&states[agent], &step.times, rows))
                    .collect();
                let next_times: Vec<usize> = step.times.iter().map(|&t| t + 1).collect();
                let tau_next: Vec<Tensor<f32>> = (0..n)
                    .map(|agent| gather_time_rows(&states[agent], &next_times, rows))
                    .collect();
                trace
                    .tau_prev
                    .push(tau_prev.iter().map(|t| t.value()).collect());
                trace
                    .tau_next
                    .push(tau_next.iter().map(|t| t.value()).collect());

                let obs_t: Vec<Tensor<f32>> = (0..n)
                    .map(|agent| rows_tensor(&g_role, &step.obs[agent]))
                    .collect();
                let aprev_t: Vec<Tensor<f32>> = (0..n)
                    .map(|agent| onehot_rows(&g_role, &step.prev_actions[agent], n_actions))
                    .collect();

                let self_dists: Vec<Gaussian<f32>> = (0..n)
                    .map(|agent| {
                        self.model
                            .self_role(&lease, agent, &obs_t[agent], &aprev_t[agent])
                    })
                    .collect();
                let rho: Vec<RoleSample<f32>> = (0..n)
                    .map(|agent| {
                        RoleSample::draw(
                            &g_role,
                            self_dists[agent].clone(),
                            trace.eps_self[j][agent].clone(),
                        )
                    })
                    .collect();

                // Posterior consumes the live trajectory embedding; that is
                // the only route by which the encoder trains.
                let posteriors: Vec<Gaussian<f32>> = (0..n)
                    .map(|agent| {
                        self.model.posterior(
                            &lease,
                            agent,
                            &obs_t[agent],
                            &aprev_t[agent],
                            &tau_prev[agent],
                        )
                    })
                    .collect();

                let mi_terms: Vec<(Gaussian<f32>, Gaussian<f32>)> = (0..n)
                    .map(|agent| (self_dists[agent].clone(), posteriors[agent].clone()))
                    .collect();
                let l_mi_j = mi_loss(&mi_terms, &step.mask);

                let d_terms: Vec<(Tensor<f32>, Gaussian<f32>)> = teammate_pairs
                    .iter()
                    .map(|&(i, jm)| {
                        let q = self.model.posterior(
                            &lease,
                            jm,
                            &obs_t[jm],
                            &aprev_t[i],
                            &tau_prev[jm],
                        );
                        (rho[i].value.clone(), q)
                    })
                    .collect();
                let l_d_j = diversity_loss(&g_role, &d_terms, &step.mask);

                let l_opp_j = if uses_opp {
                    let mut pairs = Vec::with_capacity(opp_pairs.len());
                    for agent in 0..n {
                        let preds = self.model.opponent_roles(
                            &lease,
                            agent,
                            &obs_t[agent],
                            &tau_prev[agent].detach(),
                        );
                        for (opp, pred) in preds {
                            pairs.push((pred, self_dists[opp].detach()));
                        }
                    }
                    opponent_loss(&g_role, &pairs, &step.mask)
                } else {
                    g_role.scalar(0.0)
                };

                l_mi_val += l_mi_j.item() as f64;
                l_d_val += l_d_j.item() as f64;
                l_opp_val += l_opp_j.item() as f64;
                role_losses.push(l_mi_j);
                role_losses.push(l_d_j);
                role_losses.push(l_opp_j);
            }
        }

        // ---- per-step critic and policy updates.
        let mut l_q_total = 0.0f64;
        for (j, step) in data.steps.iter().enumerate() {
            let (q_values, step_l_q) = self.critic_step(j, step, &trace, uses_roles, uses_opp)?;
            l_q_total += step_l_q;
            self.policy_step(step, &q_values, &trace, j, uses_roles, alpha)?;
            self.soft_update_targets();
        }

        // ---- one role-network step on the decayed accumulated objectives.
        if uses_roles {
            let mask = self.cfg.train.role_loss_mask();
            let w = role_weight(&self.cfg.loss, self.episodes_done as f64) as f32;
            let steps_count = data.steps.len();
            let mut weighted: Option<Tensor<f32>> = None;
            for j in 0..steps_count {
                for (kind, loss) in role_losses[j * 3..j * 3 + 3].iter().enumerate() {
                    let enabled = match kind {
                        0 => mask.mutual_info,
                        1 => mask.diversity,
                        _ => mask.opponent,
                    };
                    if !enabled {
                        continue;
                    }
                    weighted = Some(match weighted {
                        None => loss.clone(),
                        Some(acc) => acc.add(loss),
                    });
                }
            }
            if let Some(total) = weighted {
                let scaled = total.mul_scalar(w);
                g_role.backward(&scaled, &mut self.params);
            }
            self.check_grads(Model::is_role_param, "role gradients")?;
            self.opt
                .step(&mut self.params, Model::is_role_param, self.cfg.train.lr_critic);
        }

        Ok(total_loss(
            l_q_total,
            l_mi_val,
            l_d_val,
            l_opp_val,
            self.episodes_done as f64,
            &self.cfg.loss,
        ))
    }

    /// Critic forward/backward and optimizer step for one window step.
    /// Returns the live Q vectors (per agent, flattened `rows x n_actions`)
    /// for the policy step, plus the TD loss value.
    fn critic_step(
        &mut self,
        j: usize,
        step: &StepSlice,
        trace: &RoleTrace,
        uses_roles: bool,
        uses_opp: bool,
    ) -> Result<(Vec<Vec<f32>>, f64), TrainError> {
        let n = self.cfg.game.n_agents();
        let n_actions = self.cfg.game.n_actions();
        let rows = step.mask.len();
        let alpha = self.cfg.loss.alpha as f32;
        let gamma = self.cfg.loss.gamma as f32;

        // Bootstrap targets from the target networks, next-step roles from
        // the current role networks; everything here is gradient-free.
        let y = {
            let gt: Graph<f32> = Graph::new();
            let live = Lease::frozen(&gt, &self.params);
            let tgt = Lease::frozen(&gt, &self.targets);
            let next_obs: Vec<Tensor<f32>> = (0..n)
                .map(|agent| rows_tensor(&gt, &step.next_obs[agent]))
                .collect();
            let a_now: Vec<Tensor<f32>> = (0..n)
                .map(|agent| {
                    onehot_rows(
                        &gt,
                        &step.actions[agent].iter().map(|&a| Some(a)).collect::<Vec<_>>(),
                        n_actions,
                    )
                })
                .collect();
            let mut next_roles: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); n];
            if uses_roles {
                for agent in 0..n {
                    let dist = self.model.self_role(&live, agent, &next_obs[agent], &a_now[agent]);
                    let eps: Vec<f32> = (0..rows * self.cfg.nets.role_dim)
                        .map(|_| (&mut self.rng).sample(StandardNormal))
                        .collect();
                    next_roles[agent].push(RoleSample::draw(&gt, dist, eps).value);
                    if uses_opp {
                        let tau_t = gt.constant(
                            trace.tau_next[j][agent].clone(),
                            Shape::Matrix(rows, self.cfg.nets.gru_hidden),
                        );
                        for (_, dist) in
                            self.model.opponent_roles(&live, agent, &next_obs[agent], &tau_t)
                        {
                            let eps: Vec<f32> = (0..rows * self.cfg.nets.role_dim)
                                .map(|_| (&mut self.rng).sample(StandardNormal))
                                .collect();
                            next_roles[agent].push(RoleSample::draw(&gt, dist, eps).value);
                        }
                    }
                }
            }
            // Next actions from the target policies, then their log-probs.
            let mut next_actions: Vec<Vec<usize>> = Vec::with_capacity(n);
            let mut next_logp: Vec<Vec<f32>> = Vec::with_capacity(n);
            for agent in 0..n {
                let refs: Vec<&Tensor<f32>> = next_roles[agent].iter().collect();
                let logits = self.model.policy_logits(&tgt, agent, &next_obs[agent], &refs);
                let logp = logits.log_softmax();
                let probs = logp.exp().value();
                let mut acts = Vec::with_capacity(rows);
                for r in 0..rows {
                    let u: f32 = (&mut self.rng).random();
                    let row = &probs[r * n_actions..(r + 1) * n_actions];
                    let mut cdf = 0.0;
                    let mut chosen = n_actions - 1;
                    for (a, p) in row.iter().enumerate() {
                        cdf += p;
                        if u < cdf {
                            chosen = a;
                            break;
                        }
                    }
                    acts.push(chosen);
                }
                next_logp.push(logp.select_per_row(&acts).value());
                next_actions.push(acts);
            }
            let next_onehot: Vec<Tensor<f32>> = (0..n)
                .map(|agent| {
                    onehot_rows(
                        &gt,
                        &next_actions[agent].iter().map(|&a| Some(a)).collect::<Vec<_>>(),
                        n_actions,
                    )
                })
                .collect();
            let mut y = vec![vec![0.0f32; rows]; n];
            for agent in 0..n {
                let refs: Vec<&Tensor<f32>> = next_roles[agent].iter().collect();
                let others: Vec<(usize, Tensor<f32>, Tensor<f32>)> = self
                    .model
                    .critic_others(agent)
                    .into_iter()
                    .map(|o| (o, next_obs[o].clone(), next_onehot[o].clone()))
                    .collect();
                let out = self
                    .model
                    .critic(&tgt, agent, &next_obs[agent], &refs, &others);
                let q_next = out.q.select_per_row(&next_actions[agent]).value();
                for r in 0..rows {
                    let reward = step.rewards[agent][r];
                    y[agent][r] = if step.dones[r] {
                        reward
                    } else {
                        reward + gamma * (q_next[r] - alpha * next_logp[agent][r])
                    };
                }
            }
            y
        };

        // Live critic forward; gradients reach the critic parameters and,
        // through the recomputed role samples, the role encoders.
        let g2: Graph<f32> = Graph::new();
        let lease = Lease::trainable(&g2, &self.params);
        let obs_t: Vec<Tensor<f32>> = (0..n)
            .map(|agent| rows_tensor(&g2, &step.obs[agent]))
            .collect();
        let act_onehot: Vec<Tensor<f32>> = (0..n)
            .map(|agent| {
                onehot_rows(
                    &g2,
                    &step.actions[agent].iter().map(|&a| Some(a)).collect::<Vec<_>>(),
                    n_actions,
                )
            })
            .collect();
        let mut roles: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); n];
        if uses_roles {
            for agent in 0..n {
                let aprev = onehot_rows(&g2, &step.prev_actions[agent], n_actions);
                let dist = self.model.self_role(&lease, agent, &obs_t[agent], &aprev);
                roles[agent].push(
                    RoleSample::draw(&g2, dist, trace.eps_self[j][agent].clone()).value,
                );
                if uses_opp {
                    let tau = g2.constant(
                        trace.tau_prev[j][agent].clone(),
                        Shape::Matrix(rows, self.cfg.nets.gru_hidden),
                    );
                    for (slot, (_, dist)) in self
                        .model
                        .opponent_roles(&lease, agent, &obs_t[agent], &tau)
                        .into_iter()
                        .enumerate()
                    {
                        roles[agent].push(
                            RoleSample::draw(&g2, dist, trace.eps_opp[j][agent][slot].clone())
                                .value,
                        );
                    }
                }
            }
        }

        let mut q_values: Vec<Vec<f32>> = Vec::with_capacity(n);
        let mut td: Option<Tensor<f32>> = None;
        for agent in 0..n {
            let refs: Vec<&Tensor<f32>> = roles[agent].iter().collect();
            let others: Vec<(usize, Tensor<f32>, Tensor<f32>)> = self
                .model
                .critic_others(agent)
                .into_iter()
                .map(|o| (o, obs_t[o].clone(), act_onehot[o].clone()))
                .collect();
            let out = self.model.critic(&lease, agent, &obs_t[agent], &refs, &others);
            q_values.push(out.q.value());
            let q_taken = out.q.select_per_row(&step.actions[agent]);
            let term = critic_td(&q_taken, &y[agent], &step.mask);
            td = Some(match td {
                None => term,
                Some(acc) => acc.add(&term),
            });
        }
        let td = td.expect("at least one agent");
        let l_q = td.item() as f64;
        g2.backward(&td, &mut self.params);
        self.check_grads(Model::is_critic_param, "critic gradients")?;
        self.opt
            .step(&mut self.params, Model::is_critic_param, self.cfg.train.lr_critic);
        Ok((q_values, l_q))
    }

    /// Policy surrogate step for one window step. Role inputs and the
    /// advantage are detached: the gradient reaches policy parameters only.
    fn policy_step(
        &mut self,
        step: &StepSlice,
        q_values: &[Vec<f32>],
        trace: &RoleTrace,
        j: usize,
        uses_roles: bool,
        alpha: f64,
    ) -> Result<(), TrainError> {
        let n = self.cfg.game.n_agents();
        let n_actions = self.cfg.game.n_actions();
        let rows = step.mask.len();

        let g3: Graph<f32> = Graph::new();
        let lease = Lease::trainable(&g3, &self.params);
        let mut loss: Option<Tensor<f32>> = None;
        for agent in 0..n {
            let obs = rows_tensor(&g3, &step.obs[agent]);
            // Rebuild the same role values as constants.
            let mut role_consts: Vec<Tensor<f32>> = Vec::new();
            if uses_roles {
                let frozen = Lease::frozen(&g3, &self.params);
                let aprev = onehot_rows(&g3, &step.prev_actions[agent], n_actions);
                let dist = self.model.self_role(&frozen, agent, &obs, &aprev);
                role_consts
                    .push(RoleSample::draw(&g3, dist, trace.eps_self[j][agent].clone()).value);
                if self.cfg.train.variant.uses_opponent_roles() {
                    let tau = g3.constant(
                        trace.tau_prev[j][agent].clone(),
                        Shape::Matrix(rows, self.cfg.nets.gru_hidden),
                    );
                    for (slot, (_, dist)) in self
                        .model
                        .opponent_roles(&frozen, agent, &obs, &tau)
                        .into_iter()
                        .enumerate()
                    {
                        role_consts.push(
                            RoleSample::draw(&g3, dist, trace.eps_opp[j][agent][slot].clone())
                                .value,
                        );
                    }
                }
            }
            let refs: Vec<&Tensor<f32>> = role_consts.iter().collect();
            let logits = self.model.policy_logits(&lease, agent, &obs, &refs);
            let logp = logits.log_softmax();
            let logp_vals = logp.value();
            let q = &q_values[agent];

            // advantage = Q(a_t) - sum_a pi(a) Q(a) - alpha log pi(a_t)
            let mut adv = vec![0.0f32; rows];
            for r in 0..rows {
                let prow = &logp_vals[r * n_actions..(r + 1) * n_actions];
                let qrow = &q[r * n_actions..(r + 1) * n_actions];
                let mut b = 0.0f32;
                for a in 0..n_actions {
                    b += prow[a].exp() * qrow[a];
                }
                let a_t = step.actions[agent][r];
                adv[r] = qrow[a_t] - b - alpha as f32 * prow[a_t];
            }
            let term = policy_surrogate(&logp, &step.actions[agent], &adv, alpha, &step.mask);
            loss = Some(match loss {
                None => term,
                Some(acc) => acc.add(&term),
            });
        }
        let loss = loss.expect("at least one agent");
        g3.backward(&loss, &mut self.params);
        self.check_grads(Model::is_policy_param, "policy gradients")?;
        self.opt
            .step(&mut self.params, Model::is_policy_param, self.cfg.train.lr_policy);
        Ok(())
    }

    fn check_grads(
        &self,
        filter: impl Fn(&str) -> bool,
        what: &str,
    ) -> Result<(), TrainError> {
        for p in self.params.iter() {
            if filter(&p.name) && p.grad.iter().any(|v| !v.is_finite()) {
                return Err(self.non_finite_abort(what));
            }
        }
        Ok(())
    }
}
