//! Learnable components: per-agent policies and attention critics, per-team
//! self-role encoders, opponent-role predictors, variational posteriors, and
//! the GRU trajectory encoder.

mod exec;
mod gaussian;
mod model;

pub use exec::AgentExecutor;
pub use gaussian::{Gaussian, GaussianValue, RoleSample};
pub use model::{CriticOutput, Model};

use crate::autodiff::{Graph, ParamSet, Real, Shape, Tensor};

/// Resolves parameter names into graph leaves, either gradient-tracked
/// (training the live set) or frozen (targets, rollout, stop-gradient reads).
pub struct Lease<'a, R: Real> {
    pub graph: &'a Graph<R>,
    pub params: &'a ParamSet<R>,
    pub trainable: bool,
}

impl<'a, R: Real> Lease<'a, R> {
    pub fn trainable(graph: &'a Graph<R>, params: &'a ParamSet<R>) -> Self {
        Lease {
            graph,
            params,
            trainable: true,
        }
    }

    pub fn frozen(graph: &'a Graph<R>, params: &'a ParamSet<R>) -> Self {
        Lease {
            graph,
            params,
            trainable: false,
        }
    }

    pub fn get(&self, name: &str) -> Tensor<R> {
        if self.trainable {
            self.graph.param(self.params, name)
        } else {
            self.graph.frozen(self.params, name)
        }
    }
}

/// `x W + b` with `x: [m, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<R: Real>(lease: &Lease<R>, prefix: &str, x: &Tensor<R>) -> Tensor<R> {
    let w = lease.get(&format!("{prefix}.w"));
    let b = lease.get(&format!("{prefix}.b"));
    x.matmul(&w).add_bias(&b)
}

/// Standard update/reset-gate GRU cell:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// c  = tanh(x Wc + (r * h) Uc + bc)
/// h' = (1 - z) * h + z * c
/// ```
///
/// With all-zero weights and biases this gives `h' = 0.5 h`.
pub fn gru_step<R: Real>(
    lease: &Lease<R>,
    prefix: &str,
    h: &Tensor<R>,
    x: &Tensor<R>,
) -> Tensor<R> {
    let gate = |wn: &str, un: &str, bn: &str, hin: &Tensor<R>| {
        x.matmul(&lease.get(&format!("{prefix}.{wn}")))
            .add(&hin.matmul(&lease.get(&format!("{prefix}.{un}"))))
            .add_bias(&lease.get(&format!("{prefix}.{bn}")))
    };
    let z = gate("wz", "uz", "bz", h).sigmoid();
    let r = gate("wr", "ur", "br", h).sigmoid();
    let c = gate("wc", "uc", "bc", &r.mul(h)).tanh();
    let one_minus_z = z.neg().add_scalar(R::one());
    one_minus_z.mul(h).add(&z.mul(&c))
}

/// One-hot rows: `ids[i] = None` gives an all-zero row (the "no previous
/// action" encoding at episode start).
pub fn onehot_rows<R: Real>(g: &Graph<R>, ids: &[Option<usize>], n: usize) -> Tensor<R> {
    let m = ids.len();
    let mut data = vec![R::zero(); m * n];
    for (i, id) in ids.iter().enumerate() {
        if let Some(a) = id {
            assert!(*a < n, "action id {a} out of {n}");
            data[i * n + a] = R::one();
        }
    }
    g.constant(data, Shape::Matrix(m, n))
}

/// Rows of observations as a `[m, obs_len]` constant.
pub fn obs_rows<R: Real>(g: &Graph<R>, rows: &[&[f32]]) -> Tensor<R> {
    let m = rows.len();
    assert!(m > 0);
    let n = rows[0].len();
    let mut data = Vec::with_capacity(m * n);
    for r in rows {
        assert_eq!(r.len(), n);
        data.extend(r.iter().map(|&v| R::of_f32(v)));
    }
    g.constant(data, Shape::Matrix(m, n))
}

/// Instrumentation used by the decentralized-execution and variant-isolation
/// audits.
pub mod audit {
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Critic forward evaluations; decentralized execution must not add any.
    pub static CRITIC_EVALS: AtomicU64 = AtomicU64::new(0);
    /// Opponent observations consumed inside critic construction; team-scoped
    /// training must not add any.
    pub static CRITIC_OPP_OBS_READS: AtomicU64 = AtomicU64::new(0);

    pub fn reset() {
        CRITIC_EVALS.store(0, Ordering::SeqCst);
        CRITIC_OPP_OBS_READS.store(0, Ordering::SeqCst);
    }

    pub fn critic_evals() -> u64 {
        CRITIC_EVALS.load(Ordering::SeqCst)
    }

    pub fn critic_opp_obs_reads() -> u64 {
        CRITIC_OPP_OBS_READS.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests;
