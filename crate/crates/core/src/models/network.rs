//! Dense networks with relu hidden layers; a linear model is the
//! zero-hidden-layer case.

use nalgebra::DMatrix;

use super::{Batch, LayerLayout, LossKind, ModelError, ModelSpec, ParameterVector, Result};

struct Net<'a> {
    layers: Vec<LayerLayout>,
    theta: &'a [f64],
}

impl<'a> Net<'a> {
    fn new(spec: &ModelSpec, theta: &'a ParameterVector) -> Result<Self> {
        spec.validate()?;
        spec.check_params(theta)?;
        Ok(Self {
            layers: spec.layout(),
            theta: theta.as_slice(),
        })
    }

    /// Fills `acts[0] = x`, `acts[l + 1]` = output of layer `l`; relu on all
    /// but the last layer.
    fn forward(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &self.theta[layer.offset + o * layer.fan_in..][..layer.fan_in];
                let mut z: f64 = row.iter().zip(input).map(|(w, a)| w * a).sum();
                if let Some(b) = layer.bias_offset {
                    z += self.theta[b + o];
                }
                *slot = if l < last { z.max(0.0) } else { z };
            }
        }
    }

    /// Accumulates `dL/dθ` for one sample into `grad` given `dL/d output`.
    /// Relu subgradient at zero is zero.
    fn backward(&self, acts: &[Vec<f64>], out_grad: &[f64], grad: &mut [f64], scratch: &mut Vec<f64>) {
        let mut delta = out_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.offset + o * layer.fan_in..][..layer.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                if let Some(b) = layer.bias_offset {
                    grad[b + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            scratch.clear();
            scratch.resize(layer.fan_in, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                let row = &self.theta[layer.offset + o * layer.fan_in..][..layer.fan_in];
                for (s, w) in scratch.iter_mut().zip(row) {
                    *s += w * d;
                }
            }
            for (s, a) in scratch.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *s = 0.0;
                }
            }
            std::mem::swap(&mut delta, scratch);
        }
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        let mut acts = vec![vec![0.0; self.layers[0].fan_in]];
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.fan_out]));
        acts
    }
}

fn row_of(m: &DMatrix<f64>, i: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend((0..m.ncols()).map(|j| m[(i, j)]));
}

fn check_features(spec: &ModelSpec, features: &DMatrix<f64>) -> Result<()> {
    if features.ncols() != spec.input_dim {
        return Err(ModelError::DimensionMismatch {
            what: "feature columns",
            expected: spec.input_dim,
            found: features.ncols(),
        });
    }
    Ok(())
}

fn check_batch(spec: &ModelSpec, batch: &Batch, kind: LossKind) -> Result<()> {
    check_features(spec, batch.features())?;
    if batch.targets().ncols() != spec.output_dim {
        return Err(ModelError::DimensionMismatch {
            what: "target columns",
            expected: spec.output_dim,
            found: batch.targets().ncols(),
        });
    }
    if kind == LossKind::CrossEntropy && spec.output_dim < 2 {
        return Err(ModelError::InvalidSpec(
            "cross-entropy needs output_dim >= 2 (one logit per class)".into(),
        ));
    }
    Ok(())
}

/// Model outputs, one row per sample.
pub fn predict(spec: &ModelSpec, theta: &ParameterVector, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let net = Net::new(spec, theta)?;
    check_features(spec, features)?;
    let mut acts = net.buffers();
    let mut x = Vec::new();
    let mut out = DMatrix::zeros(features.nrows(), spec.output_dim);
    for i in 0..features.nrows() {
        row_of(features, i, &mut x);
        net.forward(&x, &mut acts);
        for (j, v) in acts.last().unwrap().iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Probability of class 1 from a row of logits (softmax).
pub fn positive_probability(logits: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    (logits[1] - lse).exp()
}

/// Loss value and its gradient. `want_grad = false` skips the backward pass.
fn evaluate(
    spec: &ModelSpec,
    theta: &ParameterVector,
    batch: &Batch,
    kind: LossKind,
    want_grad: bool,
) -> Result<(f64, Option<ParameterVector>)> {
    let net = Net::new(spec, theta)?;
    check_batch(spec, batch, kind)?;
    let n = batch.len();
    let out_dim = spec.output_dim;
    let mut acts = net.buffers();
    let mut x = Vec::new();
    let mut outputs = Vec::with_capacity(n * out_dim);
    for i in 0..n {
        row_of(batch.features(), i, &mut x);
        net.forward(&x, &mut acts);
        outputs.extend_from_slice(acts.last().unwrap());
    }
    let y = batch.targets();
    let inv_n = 1.0 / n as f64;
    // dL/dF, row-major n x out_dim
    let mut d_out = vec![0.0; n * out_dim];
    let loss = match kind {
        LossKind::Rmse => {
            let mut sq = 0.0;
            for i in 0..n {
                for j in 0..out_dim {
                    let r = outputs[i * out_dim + j] - y[(i, j)];
                    d_out[i * out_dim + j] = r;
                    sq += r * r;
                }
            }
            let rmse = (sq * inv_n).sqrt();
            let scale = if rmse > 0.0 { inv_n / rmse } else { 0.0 };
            d_out.iter_mut().for_each(|d| *d *= scale);
            rmse
        }
        LossKind::CrossEntropy => {
            let mut total = 0.0;
            for i in 0..n {
                let logits = &outputs[i * out_dim..(i + 1) * out_dim];
                let lse = log_sum_exp(logits);
                let mass: f64 = (0..out_dim).map(|j| y[(i, j)]).sum();
                for j in 0..out_dim {
                    let t = y[(i, j)];
                    total -= t * (logits[j] - lse);
                    let p = (logits[j] - lse).exp();
                    d_out[i * out_dim + j] = (p * mass - t) * inv_n;
                }
            }
            total * inv_n
        }
    };
    if !want_grad {
        return Ok((loss, None));
    }
    let mut grad = vec![0.0; theta.dim()];
    let mut scratch = Vec::new();
    for i in 0..n {
        row_of(batch.features(), i, &mut x);
        net.forward(&x, &mut acts);
        net.backward(&acts, &d_out[i * out_dim..(i + 1) * out_dim], &mut grad, &mut scratch);
    }
    Ok((loss, Some(ParameterVector::new(grad))))
}

/// RMSE `‖f(X,θ) − Y‖₂ / √|Z|` or mean softmax cross-entropy.
pub fn loss(spec: &ModelSpec, theta: &ParameterVector, batch: &Batch, kind: LossKind) -> Result<f64> {
    evaluate(spec, theta, batch, kind, false).map(|(l, _)| l)
}

/// Analytic gradient of [`loss`] with respect to `θ`. At zero RMSE the
/// gradient is taken to be zero.
pub fn gradient(
    spec: &ModelSpec,
    theta: &ParameterVector,
    batch: &Batch,
    kind: LossKind,
) -> Result<ParameterVector> {
    loss_and_gradient(spec, theta, batch, kind).map(|(_, g)| g)
}

pub fn loss_and_gradient(
    spec: &ModelSpec,
    theta: &ParameterVector,
    batch: &Batch,
    kind: LossKind,
) -> Result<(f64, ParameterVector)> {
    evaluate(spec, theta, batch, kind, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_batch<R: Rng>(rng: &mut R, rows: usize, spec: &ModelSpec, kind: LossKind) -> Batch {
        let x = DMatrix::from_fn(rows, spec.input_dim, |_, _| rng.sample(StandardNormal));
        match kind {
            LossKind::Rmse => {
                let y = DMatrix::from_fn(rows, spec.output_dim, |_, _| rng.sample(StandardNormal));
                Batch::new(x, y).unwrap()
            }
            LossKind::CrossEntropy => {
                let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..spec.output_dim)).collect();
                Batch::classification(x, &labels, spec.output_dim).unwrap()
            }
        }
    }

    /// Central finite differences, independent of the backward pass.
    fn finite_difference(spec: &ModelSpec, theta: &ParameterVector, batch: &Batch, kind: LossKind) -> Vec<f64> {
        let h = 1e-5;
        (0..theta.dim())
            .map(|i| {
                let mut plus = theta.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = theta.clone();
                minus.as_mut_slice()[i] -= h;
                (loss(spec, &plus, batch, kind).unwrap() - loss(spec, &minus, batch, kind).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn linear_prediction_is_dot_product() {
        let spec = ModelSpec::linear(2, 1, false);
        let theta = ParameterVector::new(vec![5.0, 6.0]);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(predict(&spec, &theta, &x).unwrap()[(0, 0)], 11.0);
        let zero = ParameterVector::zeros(2);
        let x = DMatrix::from_row_slice(2, 2, &[3.0, -7.0, 0.5, 2.0]);
        assert!(predict(&spec, &zero, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_feedforward_outputs_zero() {
        let spec = ModelSpec::feedforward(3, vec![4, 4], 2, true);
        let theta = ParameterVector::zeros(spec.param_count());
        let x = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        assert!(predict(&spec, &theta, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn predict_rejects_wrong_dimensions() {
        let spec = ModelSpec::linear(2, 1, true);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(
            predict(&spec, &ParameterVector::zeros(2), &x),
            Err(ModelError::DimensionMismatch { .. })
        ));
        let x3 = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        assert!(predict(&spec, &ParameterVector::zeros(3), &x3).is_err());
    }

    #[test]
    fn rmse_examples() {
        let spec = ModelSpec::linear(1, 1, false);
        let theta = ParameterVector::new(vec![3.0]);
        let b = Batch::regression(DMatrix::from_row_slice(1, 1, &[1.0]), &[1.0]).unwrap();
        assert_eq!(loss(&spec, &theta, &b, LossKind::Rmse).unwrap(), 2.0);
        let b = Batch::regression(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), &[3.0, 6.0]).unwrap();
        assert_eq!(loss(&spec, &theta, &b, LossKind::Rmse).unwrap(), 0.0);
        let g = gradient(&spec, &theta, &b, LossKind::Rmse).unwrap();
        assert_eq!(g.as_slice(), &[0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        for c in [2usize, 3, 7] {
            let spec = ModelSpec::linear(2, c, true);
            let theta = ParameterVector::zeros(spec.param_count());
            let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.0, 4.0, 4.0]);
            let b = Batch::classification(x, &[0, 1 % c, c - 1], c).unwrap();
            let l = loss(&spec, &theta, &b, LossKind::CrossEntropy).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_needs_two_logits() {
        let spec = ModelSpec::linear(1, 1, true);
        let b = Batch::regression(DMatrix::from_row_slice(1, 1, &[1.0]), &[1.0]).unwrap();
        assert!(loss(&spec, &ParameterVector::zeros(2), &b, LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::derive(11, &[]);
        let cases = [
            (ModelSpec::linear(4, 1, true), LossKind::Rmse),
            (ModelSpec::linear(3, 3, true), LossKind::CrossEntropy),
            (ModelSpec::linear(5, 2, false), LossKind::Rmse),
            (ModelSpec::feedforward(3, vec![6], 1, true), LossKind::Rmse),
            (ModelSpec::feedforward(4, vec![8], 3, true), LossKind::CrossEntropy),
            (ModelSpec::feedforward(2, vec![5, 4], 2, false), LossKind::CrossEntropy),
        ];
        for (spec, kind) in cases {
            for _ in 0..5 {
                let theta = spec.init_params(&mut r);
                let batch = random_batch(&mut r, 9, &spec, kind);
                let g = gradient(&spec, &theta, &batch, kind).unwrap();
                let fd = finite_difference(&spec, &theta, &batch, kind);
                let dev = max_abs_dev(g.as_slice(), &fd);
                assert!(dev < 1e-5, "{spec:?} {kind:?}: deviation {dev}");
            }
        }
    }

    #[test]
    fn loss_is_invariant_to_row_order() {
        let mut r = rng::derive(12, &[]);
        for kind in [LossKind::Rmse, LossKind::CrossEntropy] {
            let spec = ModelSpec::feedforward(3, vec![4], 2, true);
            let theta = spec.init_params(&mut r);
            let batch = random_batch(&mut r, 8, &spec, kind);
            let reversed: Vec<usize> = (0..8).rev().collect();
            let a = loss(&spec, &theta, &batch, kind).unwrap();
            let b = loss(&spec, &theta, &batch.select(&reversed), kind).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
