//! Differentiable objectives: critic TD loss, policy surrogate with the
//! exact counterfactual baseline, the three role objectives, and the decayed
//! total.
//!
//! Reductions follow the update loop's accumulation conventions: TD and
//! policy terms average over the batch rows that are valid at a window step,
//! role objectives sum over agents (or pairs) and rows and are later summed
//! across window steps.

use crate::autodiff::{Graph, Real, Shape, Tensor};
use crate::config::LossConfig;
use crate::env::GameSpec;
use crate::nets::Gaussian;

/// Closed-form `KL(p || q)` per row, summed over dimensions.
pub fn gaussian_kl<R: Real>(p: &Gaussian<R>, q: &Gaussian<R>) -> Tensor<R> {
    assert_eq!(p.mean.shape(), q.mean.shape(), "KL: dimension mismatch");
    let log_ratio = q.std.log().sub(&p.std.log());
    let var_q2 = q.std.square().mul_scalar(R::of(2.0));
    let quad = p
        .std
        .square()
        .add(&p.mean.sub(&q.mean).square())
        .div(&var_q2);
    log_ratio.add(&quad).add_scalar(R::of(-0.5)).row_sum()
}

/// Closed-form differential entropy per row, summed over dimensions.
pub fn gaussian_entropy<R: Real>(p: &Gaussian<R>) -> Tensor<R> {
    const HALF_LN_2PI_E: f64 = 1.4189385332046727;
    let (_, d) = p.std.shape().dims2();
    p.std
        .log()
        .row_sum()
        .add_scalar(R::of(d as f64 * HALF_LN_2PI_E))
}

/// Exact counterfactual baseline: the expectation of the Q vector under the
/// policy, enumerated over the discrete action set. `probs` and `q` are both
/// `[m, n_actions]`.
pub fn baseline<R: Real>(probs: &Tensor<R>, q: &Tensor<R>) -> Tensor<R> {
    assert_eq!(probs.shape(), q.shape(), "baseline: shape mismatch");
    probs.mul(q).row_sum()
}

pub fn mask_tensor<R: Real>(g: &Graph<R>, mask: &[bool]) -> Tensor<R> {
    let data: Vec<R> = mask
        .iter()
        .map(|&b| if b { R::one() } else { R::zero() })
        .collect();
    g.constant(data, Shape::Vector(mask.len()))
}

/// Sum of the masked rows of a `[m]` vector (scalars pass through a
/// length-one mask).
pub fn masked_sum<R: Real>(x: &Tensor<R>, mask: &[bool]) -> Tensor<R> {
    let g = x.graph().clone();
    let m = mask_tensor(&g, mask).reshape(x.shape());
    x.mul(&m).sum()
}

/// Mean over the masked rows of a `[m]` vector; zero when the mask is empty.
pub fn masked_mean<R: Real>(x: &Tensor<R>, mask: &[bool]) -> Tensor<R> {
    let count = mask.iter().filter(|&&b| b).count().max(1);
    masked_sum(x, mask).mul_scalar(R::of(1.0 / count as f64))
}

/// Squared TD error against a fixed target, averaged over valid rows.
/// `q_taken` is `[m]` (the critic at the taken action); `y` is detached.
pub fn critic_td<R: Real>(q_taken: &Tensor<R>, y: &[R], mask: &[bool]) -> Tensor<R> {
    let g = q_taken.graph().clone();
    assert_eq!(y.len(), q_taken.shape().len(), "target length mismatch");
    let target = g.constant(y.to_vec(), q_taken.shape());
    masked_mean(&q_taken.sub(&target).square(), mask)
}

/// Policy surrogate for one agent at one step, averaged over valid rows:
///
/// ```text
/// -log pi(a_t) * advantage  -  alpha * H(pi)
/// ```
///
/// The advantage is a constant (gradient-detached) by construction; the
/// entropy bonus stays differentiable through the log-probabilities.
pub fn policy_surrogate<R: Real>(
    log_probs: &Tensor<R>,
    actions: &[usize],
    advantage: &[R],
    alpha: f64,
    mask: &[bool],
) -> Tensor<R> {
    let g = log_probs.graph().clone();
    let logp_a = log_probs.select_per_row(actions);
    let adv = g.constant(advantage.to_vec(), logp_a.shape());
    let score = logp_a.mul(&adv).neg();
    let entropy = log_probs.exp().mul(log_probs).row_sum().neg();
    let per_row = score.sub(&entropy.mul_scalar(R::of(alpha)));
    masked_mean(&per_row, mask)
}

/// Mutual-information objective: sum over agents and valid rows of
/// `KL(P || q) + H(P)` with `P` the self-role distribution and `q` the
/// trajectory-conditioned variational posterior.
pub fn mi_loss<R: Real>(terms: &[(Gaussian<R>, Gaussian<R>)], mask: &[bool]) -> Tensor<R> {
    let mut total: Option<Tensor<R>> = None;
    for (p, q) in terms {
        let row = gaussian_kl(p, q).add(&gaussian_entropy(p));
        let t = masked_sum(&row, mask);
        total = Some(match total {
            None => t,
            Some(acc) => acc.add(&t),
        });
    }
    total.expect("mi_loss needs at least one agent term")
}

/// Diversity objective: sum over ordered within-team pairs and valid rows of
/// the log density of agent `i`'s sampled role under the posterior evaluated
/// on teammate `j`'s trajectory and observation. Minimizing it pushes
/// teammates' roles off each other's trajectory-conditioned posteriors.
/// The empty pair list (one-agent teams) gives zero.
pub fn diversity_loss<R: Real>(
    g: &Graph<R>,
    terms: &[(Tensor<R>, Gaussian<R>)],
    mask: &[bool],
) -> Tensor<R> {
    let mut total = g.scalar(R::zero());
    for (rho_value, posterior) in terms {
        let row = posterior.log_density(rho_value);
        total = total.add(&masked_sum(&row, mask));
    }
    total
}

/// Opponent objective: sum over ordered cross-team pairs and valid rows of
/// `KL(predicted || actual)`. The caller passes the actual self-role
/// distribution already detached, so only the predictor learns from it.
pub fn opponent_loss<R: Real>(
    g: &Graph<R>,
    pairs: &[(Gaussian<R>, Gaussian<R>)],
    mask: &[bool],
) -> Tensor<R> {
    let mut total = g.scalar(R::zero());
    for (predicted, actual) in pairs {
        total = total.add(&masked_sum(&gaussian_kl(predicted, actual), mask));
    }
    total
}

/// Ordered within-team pairs `(i, j)`, `i != j`, `team(i) == team(j)`.
pub fn ordered_teammate_pairs(spec: &GameSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..spec.n_agents() {
        for j in 0..spec.n_agents() {
            if i != j && spec.team_of(i) == spec.team_of(j) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Ordered cross-team pairs `(i, j)` with `team(i) != team(j)`.
pub fn cross_team_pairs(spec: &GameSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..spec.n_agents() {
        for j in 0..spec.n_agents() {
            if spec.team_of(i) != spec.team_of(j) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Exponentially decaying role-loss weight `lambda^(u / C)` after `u`
/// training episodes.
pub fn role_weight(cfg: &LossConfig, episodes: f64) -> f64 {
    cfg.lambda.powf(episodes / cfg.decay_episodes)
}

/// Scalar report of one update's objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBundle {
    pub l_q: f64,
    pub l_mi: f64,
    pub l_d: f64,
    pub l_opp: f64,
    pub l_role: f64,
    pub role_weight: f64,
    pub l_tot: f64,
}

/// Assemble the composite report: `l_role = l_d + l_mi + l_opp` and
/// `l_tot = l_q + role_weight * l_role`.
pub fn total_loss(
    l_q: f64,
    l_mi: f64,
    l_d: f64,
    l_opp: f64,
    episodes: f64,
    cfg: &LossConfig,
) -> LossBundle {
    let w = role_weight(cfg, episodes);
    let l_role = l_d + l_mi + l_opp;
    LossBundle {
        l_q,
        l_mi,
        l_d,
        l_opp,
        l_role,
        role_weight: w,
        l_tot: l_q + w * l_role,
    }
}

#[cfg(test)]
mod tests;
