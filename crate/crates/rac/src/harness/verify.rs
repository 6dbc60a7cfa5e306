//! High-precision gradient verification battery: every network and every
//! objective, finite-differenced end to end on a small two-versus-two
//! configuration.
//!
//! Pieces the implementation deliberately detaches (bootstrap targets,
//! advantages, the opponent loss target and its trajectory input) enter the
//! checked functions as fixed values, so the comparison matches the
//! differentiable surface actually used in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{gradcheck, GradcheckReport, Graph, ParamSet, Shape, Tensor};
use crate::config::{NetConfig, Variant};
use crate::env::GameSpec;
use crate::losses::{
    critic_td, cross_team_pairs, diversity_loss, gaussian_kl, mi_loss, opponent_loss,
    ordered_teammate_pairs, policy_surrogate,
};
use crate::nets::{onehot_rows, Gaussian, Lease, Model, RoleSample};

pub struct VerifyItem {
    pub name: String,
    pub report: GradcheckReport,
}

const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

struct Fixture {
    model: Model,
    rows: usize,
    chain_steps: usize,
    obs: Vec<Vec<Vec<f64>>>,     // [agent][row] current observations
    chain_obs: Vec<Vec<Vec<Vec<f64>>>>, // [step][agent][row]
    chain_actions: Vec<Vec<Vec<usize>>>, // [step][agent][row]
    prev_actions: Vec<Vec<Option<usize>>>, // [agent][row]
    actions: Vec<Vec<usize>>,    // [agent][row]
    eps_self: Vec<Vec<f64>>,     // [agent]
    eps_opp: Vec<Vec<Vec<f64>>>, // [agent][slot]
    y: Vec<Vec<f64>>,            // [agent][row] fixed TD targets
    advantage: Vec<Vec<f64>>,    // [agent][row]
    weights: Vec<f64>,           // generic output weights
    mask: Vec<bool>,
    alpha: f64,
}

impl Fixture {
    fn new(seed: u64) -> Fixture {
        let spec = GameSpec::touchmark(); // 2v2
        let net = NetConfig {
            role_dim: 3,
            gru_hidden: 4,
            mlp_hidden: 6,
            attn_dim: 8,
            attn_heads: 2,
            ..NetConfig::default()
        };
        let model = Model::new(spec, net, Variant::Rac, 1e-3);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rows = 2usize;
        let chain_steps = 3usize;
        let n = model.spec.n_agents();
        let obs_len = model.spec.obs_len();
        let n_actions = model.spec.n_actions();
        let role_dim = model.net.role_dim;
        let mut rand_obs = |rng: &mut ChaCha12Rng| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..obs_len).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let obs: Vec<Vec<Vec<f64>>> = (0..n).map(|_| rand_obs(&mut rng)).collect();
        let chain_obs: Vec<Vec<Vec<Vec<f64>>>> = (0..chain_steps)
            .map(|_| (0..n).map(|_| rand_obs(&mut rng)).collect())
            .collect();
        let chain_actions: Vec<Vec<Vec<usize>>> = (0..chain_steps)
            .map(|_| {
                (0..n)
                    .map(|_| (0..rows).map(|_| rng.random_range(0..n_actions)).collect())
                    .collect()
            })
            .collect();
        let prev_actions: Vec<Vec<Option<usize>>> = (0..n)
            .map(|_| (0..rows).map(|_| Some(rng.random_range(0..n_actions))).collect())
            .collect();
        let actions: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..rows).map(|_| rng.random_range(0..n_actions)).collect())
            .collect();
        let eps_self: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rows * role_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let eps_opp: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                (0..model.n_opponents())
                    .map(|_| (0..rows * role_dim).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let advantage: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let weights: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        Fixture {
            model,
            rows,
            chain_steps,
            obs,
            chain_obs,
            chain_actions,
            prev_actions,
            actions,
            eps_self,
            eps_opp,
            y,
            advantage,
            weights,
            mask: vec![true; rows],
            alpha: 0.01,
        }
    }

    fn obs_tensor(&self, g: &Graph<f64>, data: &[Vec<f64>]) -> Tensor<f64> {
        let flat: Vec<f64> = data.iter().flatten().copied().collect();
        g.constant(flat, Shape::Matrix(self.rows, data[0].len()))
    }

    /// Trajectory embedding after the fixed chain, per agent.
    fn tau(&self, g: &Graph<f64>, lease: &Lease<f64>, agent: usize) -> Tensor<f64> {
        let hidden = self.model.net.gru_hidden;
        let mut h = g.constant(vec![0.0; self.rows * hidden], Shape::Matrix(self.rows, hidden));
        for step in 0..self.chain_steps {
            let o = self.obs_tensor(g, &self.chain_obs[step][agent]);
            let a = onehot_rows(
                g,
                &self.chain_actions[step][agent].iter().map(|&x| Some(x)).collect::<Vec<_>>(),
                self.model.spec.n_actions(),
            );
            h = self.model.traj_step(lease, agent, &h, &o, &a);
        }
        h
    }

    fn weight_tensor(&self, g: &Graph<f64>, len: usize, offset: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..self.rows * len)
            .map(|i| self.weights[(offset + i) % self.weights.len()])
            .collect();
        g.constant(data, Shape::Matrix(self.rows, len))
    }

    fn roles_for(
        &self,
        g: &Graph<f64>,
        lease: &Lease<f64>,
        agent: usize,
        tau_const: &[f64],
    ) -> Vec<Tensor<f64>> {
        let o = self.obs_tensor(g, &self.obs[agent]);
        let aprev = onehot_rows(g, &self.prev_actions[agent], self.model.spec.n_actions());
        let dist = self.model.self_role(lease, agent, &o, &aprev);
        let mut roles = vec![RoleSample::draw(g, dist, self.eps_self[agent].clone()).value];
        let tau = g.constant(
            tau_const.to_vec(),
            Shape::Matrix(self.rows, self.model.net.gru_hidden),
        );
        for (slot, (_, dist)) in self
            .model
            .opponent_roles(lease, agent, &o, &tau)
            .into_iter()
            .enumerate()
        {
            roles.push(RoleSample::draw(g, dist, self.eps_opp[agent][slot].clone()).value);
        }
        roles
    }

    /// Role sample values at a fixed parameter point, one entry per role
    /// slot per agent; stands in for the detached role inputs of the policy.
    fn role_values(&self, params: &ParamSet<f64>, tau_frozen: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        let g = Graph::new();
        let lease = Lease::frozen(&g, params);
        (0..self.model.spec.n_agents())
            .map(|agent| {
                self.roles_for(&g, &lease, agent, &tau_frozen[agent])
                    .iter()
                    .map(|t| t.value())
                    .collect()
            })
            .collect()
    }

    /// Frozen trajectory values, standing in for the detached tau inputs.
    fn tau_values(&self, params: &ParamSet<f64>) -> Vec<Vec<f64>> {
        let g = Graph::new();
        let lease = Lease::frozen(&g, params);
        (0..self.model.spec.n_agents())
            .map(|agent| self.tau(&g, &lease, agent).value())
            .collect()
    }

    fn critic_for(
        &self,
        g: &Graph<f64>,
        lease: &Lease<f64>,
        agent: usize,
        roles: &[Tensor<f64>],
    ) -> Tensor<f64> {
        let o = self.obs_tensor(g, &self.obs[agent]);
        let refs: Vec<&Tensor<f64>> = roles.iter().collect();
        let others: Vec<(usize, Tensor<f64>, Tensor<f64>)> = self
            .model
            .critic_others(agent)
            .into_iter()
            .map(|j| {
                (
                    j,
                    self.obs_tensor(g, &self.obs[j]),
                    onehot_rows(
                        g,
                        &self.actions[j].iter().map(|&x| Some(x)).collect::<Vec<_>>(),
                        self.model.spec.n_actions(),
                    ),
                )
            })
            .collect();
        self.model.critic(lease, agent, &o, &refs, &others).q
    }
}

/// Run the whole battery; one report per network and per objective.
pub fn gradcheck_battery(seed: u64) -> Vec<VerifyItem> {
    let fx = Fixture::new(seed);
    let mut params: ParamSet<f64> = fx.model.init_params(seed ^ 0xabcd);
    let tau_frozen = fx.tau_values(&params);
    // Stop-gradient targets for the opponent loss, frozen at the checked
    // parameter point.
    let opp_targets: Vec<(Vec<f64>, Vec<f64>)> = {
        let gf = Graph::new();
        let fl = Lease::frozen(&gf, &params);
        (0..fx.model.spec.n_agents())
            .map(|agent| {
                let o = fx.obs_tensor(&gf, &fx.obs[agent]);
                let aprev = onehot_rows(&gf, &fx.prev_actions[agent], fx.model.spec.n_actions());
                let d = fx.model.self_role(&fl, agent, &o, &aprev);
                (d.mean.value(), d.std.value())
            })
            .collect()
    };
    let role_frozen = fx.role_values(&params, &tau_frozen);
    let mut items: Vec<VerifyItem> = Vec::new();

    type Check<'a> = (&'a str, Box<dyn FnMut(&Graph<f64>, &ParamSet<f64>) -> Tensor<f64> + 'a>);

    let n = fx.model.spec.n_agents();
    let n_actions = fx.model.spec.n_actions();
    let role_dim = fx.model.net.role_dim;

    let mut checks: Vec<Check> = Vec::new();
    checks.push((
        "trajectory_encoder",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let tau = fx.tau(g, &lease, agent);
                let w = fx.weight_tensor(g, fx.model.net.gru_hidden, agent);
                total = total.add(&tau.mul(&w).sum());
            }
            total
        }),
    ));
    checks.push((
        "self_role_encoder",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let o = fx.obs_tensor(g, &fx.obs[agent]);
                let aprev = onehot_rows(g, &fx.prev_actions[agent], n_actions);
                let dist = fx.model.self_role(&lease, agent, &o, &aprev);
                let w1 = fx.weight_tensor(g, role_dim, agent);
                let w2 = fx.weight_tensor(g, role_dim, agent + 7);
                total = total
                    .add(&dist.mean.mul(&w1).sum())
                    .add(&dist.std.mul(&w2).sum());
            }
            total
        }),
    ));
    checks.push((
        "opponent_role_predictor",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let o = fx.obs_tensor(g, &fx.obs[agent]);
                let tau = fx.tau(g, &lease, agent);
                for (slot, (_, dist)) in
                    fx.model.opponent_roles(&lease, agent, &o, &tau).into_iter().enumerate()
                {
                    let w = fx.weight_tensor(g, role_dim, agent + slot);
                    total = total.add(&dist.mean.mul(&w).sum()).add(&dist.std.sum());
                }
            }
            total
        }),
    ));
    checks.push((
        "variational_posterior",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let o = fx.obs_tensor(g, &fx.obs[agent]);
                let aprev = onehot_rows(g, &fx.prev_actions[agent], n_actions);
                let tau = fx.tau(g, &lease, agent);
                let dist = fx.model.posterior(&lease, agent, &o, &aprev, &tau);
                let w = fx.weight_tensor(g, role_dim, agent + 3);
                total = total.add(&dist.mean.mul(&w).sum()).add(&dist.std.sum());
            }
            total
        }),
    ));
    checks.push((
        "policy_network",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let roles: Vec<Tensor<f64>> = role_frozen[agent]
                    .iter()
                    .map(|v| g.constant(v.clone(), Shape::Matrix(fx.rows, role_dim)))
                    .collect();
                let refs: Vec<&Tensor<f64>> = roles.iter().collect();
                let o = fx.obs_tensor(g, &fx.obs[agent]);
                let logits = fx.model.policy_logits(&lease, agent, &o, &refs);
                let w = fx.weight_tensor(g, n_actions, agent + 11);
                total = total.add(&logits.mul(&w).sum());
            }
            total
        }),
    ));
    checks.push((
        "attention_critic",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let roles = fx.roles_for(g, &lease, agent, &tau_frozen[agent]);
                let q = fx.critic_for(g, &lease, agent, &roles);
                let w = fx.weight_tensor(g, n_actions, agent + 5);
                total = total.add(&q.mul(&w).sum());
            }
            total
        }),
    ));
    checks.push((
        "critic_td_loss",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let roles = fx.roles_for(g, &lease, agent, &tau_frozen[agent]);
                let q = fx.critic_for(g, &lease, agent, &roles);
                let q_taken = q.select_per_row(&fx.actions[agent]);
                total = total.add(&critic_td(&q_taken, &fx.y[agent], &fx.mask));
            }
            total
        }),
    ));
    checks.push((
        "policy_surrogate",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut total = g.scalar(0.0);
            for agent in 0..n {
                let roles: Vec<Tensor<f64>> = role_frozen[agent]
                    .iter()
                    .map(|v| g.constant(v.clone(), Shape::Matrix(fx.rows, role_dim)))
                    .collect();
                let refs: Vec<&Tensor<f64>> = roles.iter().collect();
                let o = fx.obs_tensor(g, &fx.obs[agent]);
                let logits = fx.model.policy_logits(&lease, agent, &o, &refs);
                total = total.add(&policy_surrogate(
                    &logits.log_softmax(),
                    &fx.actions[agent],
                    &fx.advantage[agent],
                    fx.alpha,
                    &fx.mask,
                ));
            }
            total
        }),
    ));
    checks.push((
        "mutual_information_loss",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let terms: Vec<(Gaussian<f64>, Gaussian<f64>)> = (0..n)
                .map(|agent| {
                    let o = fx.obs_tensor(g, &fx.obs[agent]);
                    let aprev = onehot_rows(g, &fx.prev_actions[agent], n_actions);
                    let tau = fx.tau(g, &lease, agent);
                    let p = fx.model.self_role(&lease, agent, &o, &aprev);
                    let q = fx.model.posterior(&lease, agent, &o, &aprev, &tau);
                    (p, q)
                })
                .collect();
            mi_loss(&terms, &fx.mask)
        }),
    ));
    checks.push((
        "diversity_loss",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let terms: Vec<(Tensor<f64>, Gaussian<f64>)> = ordered_teammate_pairs(&fx.model.spec)
                .into_iter()
                .map(|(i, jm)| {
                    let oi = fx.obs_tensor(g, &fx.obs[i]);
                    let ai = onehot_rows(g, &fx.prev_actions[i], n_actions);
                    let p = fx.model.self_role(&lease, i, &oi, &ai);
                    let rho = RoleSample::draw(g, p, fx.eps_self[i].clone());
                    let oj = fx.obs_tensor(g, &fx.obs[jm]);
                    let tj = fx.tau(g, &lease, jm);
                    let q = fx.model.posterior(&lease, jm, &oj, &ai, &tj);
                    (rho.value, q)
                })
                .collect();
            diversity_loss(g, &terms, &fx.mask)
        }),
    ));
    checks.push((
        "opponent_loss",
        Box::new(|g, ps| {
            // Targets and trajectory inputs are detached in training, so
            // they enter as fixed values here.
            let lease = Lease::trainable(g, ps);
            let mut pairs = Vec::new();
            for (i, jm) in cross_team_pairs(&fx.model.spec) {
                let oi = fx.obs_tensor(g, &fx.obs[i]);
                let tau = g.constant(
                    tau_frozen[i].clone(),
                    Shape::Matrix(fx.rows, fx.model.net.gru_hidden),
                );
                let preds = fx.model.opponent_roles(&lease, i, &oi, &tau);
                let pred = preds.into_iter().find(|(o, _)| *o == jm).unwrap().1;
                let target = Gaussian {
                    mean: g.constant(opp_targets[jm].0.clone(), pred.mean.shape()),
                    std: g.constant(opp_targets[jm].1.clone(), pred.std.shape()),
                };
                pairs.push((pred, target));
            }
            opponent_loss(g, &pairs, &fx.mask)
        }),
    ));
    checks.push((
        "total_loss",
        Box::new(|g, ps| {
            let lease = Lease::trainable(g, ps);
            let mut l_q = g.scalar(0.0);
            for agent in 0..n {
                let roles = fx.roles_for(g, &lease, agent, &tau_frozen[agent]);
                let q = fx.critic_for(g, &lease, agent, &roles);
                let q_taken = q.select_per_row(&fx.actions[agent]);
                l_q = l_q.add(&critic_td(&q_taken, &fx.y[agent], &fx.mask));
            }
            let mi_terms: Vec<(Gaussian<f64>, Gaussian<f64>)> = (0..n)
                .map(|agent| {
                    let o = fx.obs_tensor(g, &fx.obs[agent]);
                    let aprev = onehot_rows(g, &fx.prev_actions[agent], n_actions);
                    let tau = fx.tau(g, &lease, agent);
                    let p = fx.model.self_role(&lease, agent, &o, &aprev);
                    let q = fx.model.posterior(&lease, agent, &o, &aprev, &tau);
                    (p, q)
                })
                .collect();
            let l_mi = mi_loss(&mi_terms, &fx.mask);
            let d_terms: Vec<(Tensor<f64>, Gaussian<f64>)> = ordered_teammate_pairs(&fx.model.spec)
                .into_iter()
                .map(|(i, jm)| {
                    let oi = fx.obs_tensor(g, &fx.obs[i]);
                    let ai = onehot_rows(g, &fx.prev_actions[i], n_actions);
                    let p = fx.model.self_role(&lease, i, &oi, &ai);
                    let rho = RoleSample::draw(g, p, fx.eps_self[i].clone());
                    let oj = fx.obs_tensor(g, &fx.obs[jm]);
                    let tj = fx.tau(g, &lease, jm);
                    let q = fx.model.posterior(&lease, jm, &oj, &ai, &tj);
                    (rho.value, q)
                })
                .collect();
            let l_d = diversity_loss(g, &d_terms, &fx.mask);
            let mut opp_pairs = Vec::new();
            for (i, jm) in cross_team_pairs(&fx.model.spec) {
                let oi = fx.obs_tensor(g, &fx.obs[i]);
                let tau = g.constant(
                    tau_frozen[i].clone(),
                    Shape::Matrix(fx.rows, fx.model.net.gru_hidden),
                );
                let preds = fx.model.opponent_roles(&lease, i, &oi, &tau);
                let pred = preds.into_iter().find(|(o, _)| *o == jm).unwrap().1;
                let target = Gaussian {
                    mean: g.constant(opp_targets[jm].0.clone(), pred.mean.shape()),
                    std: g.constant(opp_targets[jm].1.clone(), pred.std.shape()),
                };
                opp_pairs.push((pred, target));
            }
            let l_opp = opponent_loss(g, &opp_pairs, &fx.mask);
            // role weight fixed at 0.5 for the check
            l_q.add(&l_mi.add(&l_d).add(&l_opp).mul_scalar(0.5))
        }),
    ));

    for (name, mut f) in checks {
        let report = gradcheck(&mut f, &mut params, EPS, TOL);
        items.push(VerifyItem {
            name: name.to_string(),
            report,
        });
    }
    items
}

/// `KL(p || p) == 0` sanity used by the command-line verifier.
pub fn kl_self_check() -> f64 {
    let g: Graph<f64> = Graph::new();
    let p = Gaussian {
        mean: g.matrix(1, 3, vec![0.1, -0.2, 0.4]),
        std: g.matrix(1, 3, vec![0.5, 1.0, 2.0]),
    };
    gaussian_kl(&p, &p).value()[0].abs()
}
