//! Diagonal Gaussians over role latents, in two forms: graph tensors for
//! training and plain values for metrics.

use crate::autodiff::{Graph, Real, Shape, Tensor};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Batched diagonal Gaussian: `mean` and `std` are `[m, d]` tensors with
/// strictly positive `std` rows.
pub struct Gaussian<R: Real> {
    pub mean: Tensor<R>,
    pub std: Tensor<R>,
}

impl<R: Real> Clone for Gaussian<R> {
    fn clone(&self) -> Self {
        Gaussian {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }
}

impl<R: Real> Gaussian<R> {
    /// Reparameterized sample `mean + std * eps` for fixed noise, so the
    /// gradient flows through `mean` and `std` only.
    pub fn sample(&self, eps: &Tensor<R>) -> Tensor<R> {
        self.mean.add(&self.std.mul(eps))
    }

    /// Constant copy; a stop-gradient target.
    pub fn detach(&self) -> Gaussian<R> {
        Gaussian {
            mean: self.mean.detach(),
            std: self.std.detach(),
        }
    }

    /// Per-row log density of `x` under the Gaussian, summed over dimensions:
    /// `-1/2 sum_d ((x - mu)^2 / sigma^2 + 2 ln sigma + ln 2 pi)`.
    pub fn log_density(&self, x: &Tensor<R>) -> Tensor<R> {
        let d = x.shape().dims2().1 as f64;
        let z = x.sub(&self.mean).div(&self.std);
        let quad = z.square().row_sum();
        let logdet = self.std.log().row_sum().mul_scalar(R::of(2.0));
        quad.add(&logdet)
            .add_scalar(R::of(d * LN_2PI))
            .mul_scalar(R::of(-0.5))
    }

    /// Plain-value snapshot of row `row`.
    pub fn value_at(&self, row: usize) -> GaussianValue {
        let (_, d) = self.mean.shape().dims2();
        let mv = self.mean.value();
        let sv = self.std.value();
        GaussianValue {
            mean: mv[row * d..(row + 1) * d].iter().map(|v| v.as_f64()).collect(),
            std: sv[row * d..(row + 1) * d].iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// One reparameterized role draw: the distribution it came from, the noise,
/// and the differentiable value `mean + std * eps`.
pub struct RoleSample<R: Real> {
    pub dist: Gaussian<R>,
    pub eps: Vec<R>,
    pub value: Tensor<R>,
}

impl<R: Real> RoleSample<R> {
    pub fn draw(g: &Graph<R>, dist: Gaussian<R>, eps: Vec<R>) -> RoleSample<R> {
        let (m, d) = dist.mean.shape().dims2();
        assert_eq!(eps.len(), m * d, "noise length mismatch");
        let shape = if m == 1 {
            dist.mean.shape()
        } else {
            Shape::Matrix(m, d)
        };
        let eps_t = g.constant(eps.clone(), shape);
        let value = dist.sample(&eps_t);
        RoleSample { dist, eps, value }
    }
}

/// Detached diagonal Gaussian with closed-form divergence helpers, used for
/// role statistics in the harness.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianValue {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianValue {
    /// `KL(self || other)`, summed over dimensions.
    pub fn kl(&self, other: &GaussianValue) -> f64 {
        assert_eq!(self.mean.len(), other.mean.len());
        let mut total = 0.0;
        for i in 0..self.mean.len() {
            let (m0, s0) = (self.mean[i], self.std[i]);
            let (m1, s1) = (other.mean[i], other.std[i]);
            total += (s1 / s0).ln() + (s0 * s0 + (m0 - m1) * (m0 - m1)) / (2.0 * s1 * s1) - 0.5;
        }
        total
    }

    pub fn symmetric_kl(&self, other: &GaussianValue) -> f64 {
        0.5 * (self.kl(other) + other.kl(self))
    }

    pub fn entropy(&self) -> f64 {
        self.std
            .iter()
            .map(|s| 0.5 * (LN_2PI + 1.0) + s.ln())
            .sum()
    }
}
