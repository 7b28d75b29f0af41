//! Direction-free bound on the loss increase caused by a parameter perturbation.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{predict, Batch, ModelError, ModelKind, ModelSpec, ParameterVector, Result};

/// Largest singular value of `m`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let top = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    top.sqrt()
}

/// `‖f(X,θ) − Y‖₂`, i.e. the RMSE scaled back by `√|Z|`.
fn residual_norm(spec: &ModelSpec, theta: &ParameterVector, batch: &Batch) -> Result<f64> {
    let out = predict(spec, theta, batch.features())?;
    Ok((out - batch.targets()).norm())
}

fn perturbation_term(spec: &ModelSpec, batch: &Batch, theta: &ParameterVector, rho: &ParameterVector) -> Result<f64> {
    spec.check_params(rho)?;
    let moved = theta.add(rho);
    Ok(residual_norm(spec, &moved, batch)? - residual_norm(spec, theta, batch)?)
}

/// Margin `‖J‖₂‖ρ‖₂ − (‖F(Z,θ+ρ)‖√|Z| − ‖F(Z,θ)‖√|Z|)` for a linear model,
/// whose Jacobian is the design matrix (with a unit column when the model
/// has a bias). The inequality is exact for linear models, so the margin is
/// nonnegative up to rounding.
pub fn verify_rmse_bound(
    spec: &ModelSpec,
    batch: &Batch,
    theta: &ParameterVector,
    rho: &ParameterVector,
) -> Result<f64> {
    if spec.kind != ModelKind::Linear {
        return Err(ModelError::NotLinear);
    }
    spec.validate()?;
    let x = batch.features();
    let design = if spec.bias {
        DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j < x.ncols() { x[(i, j)] } else { 1.0 })
    } else {
        x.clone()
    };
    let bound = spectral_norm(&design) * rho.norm();
    Ok(bound - perturbation_term(spec, batch, theta, rho)?)
}

/// First-order version of [`verify_rmse_bound`] for any model: the Jacobian
/// of the stacked outputs is taken by central differences at `θ`. Only
/// meaningful for small `ρ`; reported as a diagnostic, never asserted.
pub fn first_order_margin(
    spec: &ModelSpec,
    batch: &Batch,
    theta: &ParameterVector,
    rho: &ParameterVector,
) -> Result<f64> {
    spec.check_params(theta)?;
    let h = 1e-6;
    let n = theta.dim();
    let rows = batch.len() * spec.output_dim;
    let mut jac = DMatrix::zeros(rows, n);
    for p in 0..n {
        let mut plus = theta.clone();
        plus.as_mut_slice()[p] += h;
        let mut minus = theta.clone();
        minus.as_mut_slice()[p] -= h;
        let diff = (predict(spec, &plus, batch.features())? - predict(spec, &minus, batch.features())?) / (2.0 * h);
        for (r, v) in diff.iter().enumerate() {
            jac[(r, p)] = *v;
        }
    }
    Ok(spectral_norm(&jac) * rho.norm() - perturbation_term(spec, batch, theta, rho)?)
}
