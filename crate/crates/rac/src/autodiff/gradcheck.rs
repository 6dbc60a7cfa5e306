//! Finite-difference verification of analytic gradients.
//!
//! Meant to run in high precision (`f64`): the comparison floor sits far
//! below what `f32` rounding noise would allow.

use super::graph::{Graph, Tensor};
use super::params::ParamSet;
use super::real::Real;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// `name[flat_index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare the analytic gradient of `f` against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of every parameter.
///
/// `f` must be deterministic: any sampling noise has to be fixed outside the
/// closure. Relative error uses the denominator `max(|a|, |n|, 1e-4)` so that
/// agreeing near-zero gradients do not register as failures.
pub fn gradcheck<R: Real>(
    mut f: impl FnMut(&Graph<R>, &ParamSet<R>) -> Tensor<R>,
    params: &mut ParamSet<R>,
    eps: f64,
    _tol: f64,
) -> GradcheckReport {
    params.zero_grads();
    {
        let g = Graph::new();
        let loss = f(&g, params);
        g.backward(&loss, params);
    }
    let analytic: Vec<(String, Vec<R>)> = params
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    params.zero_grads();

    let mut eval = |params: &ParamSet<R>| -> f64 {
        let g = Graph::new();
        f(&g, params).item().as_f64()
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for (pi, name) in names.iter().enumerate() {
        let n_elems = params.get(name).value.len();
        for i in 0..n_elems {
            let x0 = params.get(name).value[i];
            params.get_mut(name).value[i] = x0 + R::of(eps);
            let lp = eval(params);
            params.get_mut(name).value[i] = x0 - R::of(eps);
            let lm = eval(params);
            params.get_mut(name).value[i] = x0;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[pi].1[i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            let rel = (a - numeric).abs() / denom;
            checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = format!("{name}[{i}]");
            }
        }
    }
    GradcheckReport {
        max_rel_err,
        worst,
        checked,
    }
}
