use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_noise, LaplaceParams, MechanismError, Result};
use crate::models::ParameterVector;

/// Lower clamp on `‖δ‖₂`; below it the calibration `ε = n/(ν‖δ‖₂)` is
/// evaluated at the floor instead.
pub const NEIGHBOURHOOD_FLOOR: f64 = 1e-9;

/// A locally trained vector after perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedUpdate {
    pub value: ParameterVector,
    /// `ε` the mechanism was run with, per unit L2 distance.
    pub mechanism_epsilon: f64,
    /// Leakage within the `‖δ‖₂`-neighbourhood: always `n/ν`.
    pub round_epsilon: f64,
    /// `‖δ‖₂` (unclamped).
    pub neighbourhood_radius: f64,
}

/// Perturbs `local` with Laplace noise calibrated to the size of the update
/// `δ = local − hypothesis`: `ε = n/(ν‖δ‖₂)`, so that points within the
/// `‖δ‖₂`-ball around the release are `n/ν`-indistinguishable.
pub fn sanitize_update<R: Rng + ?Sized>(
    hypothesis: &ParameterVector,
    local: &ParameterVector,
    noise_multiplier: f64,
    rng: &mut R,
) -> Result<SanitizedUpdate> {
    if !(noise_multiplier > 0.0 && noise_multiplier.is_finite()) {
        return Err(MechanismError::InvalidNoiseMultiplier(noise_multiplier));
    }
    if hypothesis.dim() != local.dim() {
        return Err(MechanismError::DimensionMismatch {
            expected: hypothesis.dim(),
            found: local.dim(),
        });
    }
    let n = local.dim();
    if n == 0 {
        return Err(MechanismError::InvalidDimension);
    }
    let radius = local.distance(hypothesis);
    let calibrated = radius.max(NEIGHBOURHOOD_FLOOR);
    let epsilon = n as f64 / (noise_multiplier * calibrated);
    let params = LaplaceParams::new(epsilon, n)?;
    let value = local.add(&sample_noise(&params, rng));
    Ok(SanitizedUpdate {
        value,
        mechanism_epsilon: epsilon,
        round_epsilon: n as f64 / noise_multiplier,
        neighbourhood_radius: radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_epsilon_is_dim_over_nu() {
        let h = ParameterVector::new(vec![0.0, 0.0]);
        let mut r = rng::derive(1, &[]);
        for local in [vec![1.0, 0.0], vec![0.001, -0.002], vec![300.0, 400.0]] {
            let out = sanitize_update(&h, &ParameterVector::new(local), 5.0, &mut r).unwrap();
            assert_eq!(out.round_epsilon, 0.4);
        }
    }

    #[test]
    fn calibration_uses_update_norm() {
        let h = ParameterVector::new(vec![1.0, 1.0, 1.0]);
        let l = ParameterVector::new(vec![1.0, 3.0, 1.0]);
        let out = sanitize_update(&h, &l, 2.0, &mut rng::derive(2, &[])).unwrap();
        assert_eq!(out.neighbourhood_radius, 2.0);
        assert_eq!(out.mechanism_epsilon, 3.0 / (2.0 * 2.0));
    }

    #[test]
    fn zero_update_is_clamped() {
        let h = ParameterVector::new(vec![0.5, -0.5]);
        let out = sanitize_update(&h, &h, 5.0, &mut rng::derive(3, &[])).unwrap();
        assert_eq!(out.neighbourhood_radius, 0.0);
        assert_eq!(out.round_epsilon, 0.4);
        assert_eq!(out.mechanism_epsilon, 2.0 / (5.0 * NEIGHBOURHOOD_FLOOR));
        // noise at the clamp scale: mean norm ν·n·τ-ish, far below 1e-6
        assert!(out.value.distance(&h) < 1e-6);
    }

    #[test]
    fn noise_grows_linearly_with_multiplier() {
        let h = ParameterVector::zeros(2);
        let l = ParameterVector::new(vec![0.3, 0.4]);
        let mean_norm = |nu: f64| {
            let mut r = rng::derive(4, &[]);
            let draws = 20_000;
            (0..draws)
                .map(|_| sanitize_update(&h, &l, nu, &mut r).unwrap().value.distance(&l))
                .sum::<f64>()
                / draws as f64
        };
        // E‖value − local‖ = ν‖δ‖
        for nu in [1.0, 4.0, 16.0] {
            let m = mean_norm(nu);
            assert!((m / (nu * 0.5) - 1.0).abs() < 0.03, "nu={nu}: {m}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = ParameterVector::zeros(2);
        let mut r = rng::derive(5, &[]);
        assert!(sanitize_update(&h, &h, 0.0, &mut r).is_err());
        assert!(sanitize_update(&h, &h, -1.0, &mut r).is_err());
        assert!(sanitize_update(&h, &ParameterVector::zeros(3), 1.0, &mut r).is_err());
    }
}
