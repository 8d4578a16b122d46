//! Deterministic numeric kernels: scalar links, diagonal Gaussians, a small
//! dense network with exact gradients, seeded randomness, and a 2-D PCA
//! projector.
//!
//! Everything here is pure computation on `f64` slices. Transcendental
//! functions go through `libm` so results are bit-identical across platforms
//! and the crate stays `no_std`-compatible.

pub mod mlp;
pub mod pca;
pub mod rng;

pub use mlp::{MlpGrads, MlpParams, MlpTrace};
pub use pca::{pca_project, PcaProjection};
pub use rng::Rng;

use alloc::vec::Vec;

/// Variance floor added to the squared scale head of a stochastic encoder.
/// Keeps log-variance terms finite when the raw scale output crosses zero.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Logistic sigmoid, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, computed as `-ln(1 + exp(-|x|)) + min(x, 0)`.
///
/// Direct composition underflows to `ln(0)` near x = -745; this form stays
/// finite for all finite inputs and degrades gracefully to `x` for large
/// negative arguments.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

/// Diagonal Gaussian over `R^k`, parameterized by a mean vector and a raw
/// (unsquared, possibly negative) scale vector.
///
/// The distribution's variance in dimension `k` is `raw_scale[k]^2 +
/// VARIANCE_FLOOR`; reparameterized samples use the raw scale directly,
/// `s = mean + raw_scale ⊙ eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub raw_scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, raw_scale: Vec<f64>) -> Self {
        assert_eq!(
            mean.len(),
            raw_scale.len(),
            "mean and raw_scale must have equal length"
        );
        assert!(!mean.is_empty(), "DiagGaussian must have dimension >= 1");
        DiagGaussian { mean, raw_scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Floored variance in dimension `k`.
    pub fn variance(&self, k: usize) -> f64 {
        self.raw_scale[k] * self.raw_scale[k] + VARIANCE_FLOOR
    }

    /// Reparameterized sample `mean + raw_scale ⊙ eps`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim(), "eps length must match dimension");
        self.mean
            .iter()
            .zip(self.raw_scale.iter())
            .zip(eps.iter())
            .map(|((m, r), e)| m + r * e)
            .collect()
    }

    /// KL divergence to the standard normal `N(0, I)`:
    /// `0.5 * Σ_k (var_k + mean_k^2 - 1 - ln var_k)`.
    pub fn kl_to_standard(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.dim() {
            let v = self.variance(k);
            acc += v + self.mean[k] * self.mean[k] - 1.0 - libm::log(v);
        }
        0.5 * acc
    }
}
