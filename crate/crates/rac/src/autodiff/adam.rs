//! Adaptive per-parameter moment optimizer with bias correction.

use std::collections::BTreeMap;

use super::params::ParamSet;
use super::real::Real;

#[derive(Clone, Debug)]
pub struct Adam<R: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet<R>,
    v: ParamSet<R>,
    /// Per-parameter step counts; parameters may update at different cadences.
    t: BTreeMap<String, u64>,
}

impl<R: Real> Default for Adam<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Adam<R> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ParamSet::new(),
            v: ParamSet::new(),
            t: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter whose name satisfies `filter`,
    /// consuming (and zeroing) its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamSet<R>, filter: impl Fn(&str) -> bool, lr: f64) {
        let b1 = R::of(self.beta1);
        let b2 = R::of(self.beta2);
        let eps = R::of(self.eps);
        let lr = R::of(lr);
        for p in params.iter_mut() {
            if !filter(&p.name) {
                continue;
            }
            if !self.m.contains(&p.name) {
                self.m
                    .insert(&p.name, p.shape, vec![R::zero(); p.value.len()]);
                self.v
                    .insert(&p.name, p.shape, vec![R::zero(); p.value.len()]);
            }
            let t = self.t.entry(p.name.clone()).or_insert(0);
            *t += 1;
            let bc1 = R::one() - R::of(self.beta1.powi(*t as i32));
            let bc2 = R::one() - R::of(self.beta2.powi(*t as i32));
            let m = &mut self.m.get_mut(&p.name).value;
            let v = &mut self.v.get_mut(&p.name).value;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (R::one() - b1) * g;
                v[i] = b2 * v[i] + (R::one() - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] = p.value[i] - lr * mh / (vh.sqrt() + eps);
                p.grad[i] = R::zero();
            }
        }
    }

    pub fn moments(&self) -> (&ParamSet<R>, &ParamSet<R>) {
        (&self.m, &self.v)
    }

    pub fn step_counts(&self) -> &BTreeMap<String, u64> {
        &self.t
    }

    /// Rebuild from serialized state.
    pub fn from_state(m: ParamSet<R>, v: ParamSet<R>, t: BTreeMap<String, u64>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t,
        }
    }
}
