//! The n-dimensional Euclidean Laplace mechanism.
//!
//! A point `x₀ ∈ ℝⁿ` is released as `x₀ + ρ` where `ρ` has density
//! `K·exp(−ε‖ρ‖₂)`. The norm `‖ρ‖₂` is Gamma distributed with shape `n` and
//! rate `ε`, and the direction is uniform on the unit sphere, which gives an
//! exact two-step sampler. Densities are evaluated in log-space so that
//! `Γ(n)` never overflows.

mod ledger;
mod sanitize;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

use crate::models::ParameterVector;

pub use ledger::{compose, ClientEntry, ClientRecord, LedgerReport, PrivacyLedger, Release};
pub use sanitize::{sanitize_update, SanitizedUpdate, NEIGHBOURHOOD_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("noise multiplier must be positive and finite, got {0}")]
    InvalidNoiseMultiplier(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("privacy loss must be nonnegative and finite, got {0}")]
    InvalidCharge(f64),
    #[error("ledger has no clients")]
    EmptyLedger,
    #[error("client {0:?} is not registered in the ledger")]
    UnknownClient(String),
}

pub type Result<T> = std::result::Result<T, MechanismError>;

/// Privacy parameter `ε` (per unit of L2 distance) and dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    epsilon: f64,
    dim: usize,
}

impl LaplaceParams {
    pub fn new(epsilon: f64, dim: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MechanismError::InvalidEpsilon(epsilon));
        }
        if dim == 0 {
            return Err(MechanismError::InvalidDimension);
        }
        Ok(Self { epsilon, dim })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `E‖ρ‖₂ = n/ε`.
    pub fn mean_radius(&self) -> f64 {
        self.dim as f64 / self.epsilon
    }

    /// Per-component variance `(n+1)/ε²`.
    pub fn component_variance(&self) -> f64 {
        (self.dim as f64 + 1.0) / (self.epsilon * self.epsilon)
    }
}

/// `ln K` with `K = εⁿ Γ(n/2) / (2 π^{n/2} Γ(n))`.
pub fn log_normalization_constant(params: &LaplaceParams) -> f64 {
    let n = params.dim as f64;
    n * params.epsilon.ln() + ln_gamma(n / 2.0) - LN_2 - (n / 2.0) * PI.ln() - ln_gamma(n)
}

pub fn normalization_constant(params: &LaplaceParams) -> f64 {
    log_normalization_constant(params).exp()
}

/// Log-density of the mechanism centred at `center`, evaluated at `x`.
pub fn log_density(x: &ParameterVector, center: &ParameterVector, params: &LaplaceParams) -> Result<f64> {
    check_dim(params, x)?;
    check_dim(params, center)?;
    Ok(log_normalization_constant(params) - params.epsilon * x.distance(center))
}

pub fn density(x: &ParameterVector, center: &ParameterVector, params: &LaplaceParams) -> Result<f64> {
    log_density(x, center, params).map(f64::exp)
}

/// `ln γ_{ε,n}(r)` with `γ_{ε,n}(r) = εⁿ e^{−εr} r^{n−1} / Γ(n)`.
/// Negative radii have zero density.
pub fn log_radius_pdf(r: f64, params: &LaplaceParams) -> f64 {
    if r < 0.0 || r.is_nan() {
        return f64::NEG_INFINITY;
    }
    let n = params.dim as f64;
    let power = if params.dim == 1 { 0.0 } else { (n - 1.0) * r.ln() };
    n * params.epsilon.ln() - params.epsilon * r + power - ln_gamma(n)
}

/// Density of `‖ρ‖₂`.
pub fn radius_pdf(r: f64, params: &LaplaceParams) -> f64 {
    log_radius_pdf(r, params).exp()
}

/// Draws `‖ρ‖₂ ~ Gamma(shape n, rate ε)` (exact Marsaglia–Tsang sampler).
pub fn sample_radius<R: Rng + ?Sized>(params: &LaplaceParams, rng: &mut R) -> f64 {
    Gamma::new(params.dim as f64, 1.0 / params.epsilon)
        .expect("validated parameters")
        .sample(rng)
}

/// Uniform direction on the unit sphere of `ℝ^dim`, by normalizing a vector
/// of independent standard normals. An all-zero draw is redrawn.
pub fn sample_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ParameterVector {
    assert!(dim >= 1, "direction needs dimension >= 1");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return ParameterVector::new(v.into_iter().map(|a| a / norm).collect());
        }
    }
}

/// Noise vector `ρ` with density `K·exp(−ε‖ρ‖₂)`.
pub fn sample_noise<R: Rng + ?Sized>(params: &LaplaceParams, rng: &mut R) -> ParameterVector {
    let r = sample_radius(params, rng);
    sample_direction(params.dim, rng).scale(r)
}

/// Releases `center + r·u`, with `r` from [`sample_radius`] and `u` from
/// [`sample_direction`].
pub fn sample_laplace<R: Rng + ?Sized>(
    center: &ParameterVector,
    params: &LaplaceParams,
    rng: &mut R,
) -> Result<ParameterVector> {
    check_dim(params, center)?;
    Ok(center.add(&sample_noise(params, rng)))
}

fn check_dim(params: &LaplaceParams, v: &ParameterVector) -> Result<()> {
    if v.dim() != params.dim {
        return Err(MechanismError::DimensionMismatch {
            expected: params.dim,
            found: v.dim(),
        });
    }
    Ok(())
}
