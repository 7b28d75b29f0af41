//! Closed-form gradient inversion against a linear model.
//!
//! For `f(x) = wᵀx + b` and one sample, the loss gradient is `c·[x; 1]` for
//! some scalar `c`, so an observer of the gradient recovers `x` exactly as
//! `g_w / g_b`. The probe measures how well that still works after the
//! gradient went through the sanitizer.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::mechanism::{sanitize_update, MechanismError};
use crate::models::{self, Batch, LossKind, ModelError, ModelSpec, ParameterVector};
use crate::rng::{self, tag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("gradient is zero (residual is exactly zero); nothing is released")]
    ZeroGradient,
    #[error("sample is the zero vector; cosine is undefined")]
    ZeroSample,
    #[error("noise multiplier must be finite and nonnegative, got {0}")]
    InvalidNoiseMultiplier(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity between `x` and its reconstruction from the sanitized
/// RMSE gradient of a linear model with bias at `theta`. `nu = 0` releases
/// the raw gradient.
pub fn gradient_inversion_probe<R: Rng + ?Sized>(
    theta: &ParameterVector,
    x: &[f64],
    y: f64,
    nu: f64,
    rng: &mut R,
) -> Result<f64, ProbeError> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(ProbeError::InvalidNoiseMultiplier(nu));
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(ProbeError::ZeroSample);
    }
    let d = x.len();
    let spec = ModelSpec::linear(d, 1, true);
    let batch = Batch::regression(DMatrix::from_row_slice(1, d, x), &[y])?;
    let g = models::gradient(&spec, theta, &batch, LossKind::Rmse)?;
    if g.as_slice().iter().all(|v| *v == 0.0) {
        return Err(ProbeError::ZeroGradient);
    }
    let released = if nu > 0.0 {
        sanitize_update(&ParameterVector::zeros(g.dim()), &g, nu, rng)?.value
    } else {
        g
    };
    let (weights, bias) = released.as_slice().split_at(d);
    let scale = bias[0];
    let reconstruction: Vec<f64> = if scale != 0.0 {
        weights.iter().map(|w| w / scale).collect()
    } else {
        weights.to_vec()
    };
    Ok(cosine(&reconstruction, x))
}

/// Runs `trials` probes on fresh standard-normal `θ`, `x` and `y`.
pub fn probe_trials(dim: usize, nu: f64, trials: usize, seed: u64) -> Result<Vec<f64>, ProbeError> {
    let mut r = rng::derive(seed, &[tag::PROBE, nu.to_bits()]);
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let theta = ParameterVector::new((0..=dim).map(|_| r.sample(StandardNormal)).collect());
        let x: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let y: f64 = r.sample(StandardNormal);
        match gradient_inversion_probe(&theta, &x, y, nu, &mut r) {
            Ok(c) => out.push(c),
            Err(ProbeError::ZeroGradient | ProbeError::ZeroSample) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}
