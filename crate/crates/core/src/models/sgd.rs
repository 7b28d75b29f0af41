use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gradient, loss, Batch, LossKind, ModelError, ModelSpec, ParameterVector, Result};

/// Plain mini-batch SGD settings: no momentum, no weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
}

impl LocalTraining {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidTraining("epochs must be at least 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(ModelError::InvalidTraining(format!(
                "step size must be finite and nonnegative, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidTraining("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Runs `epochs` passes of mini-batch SGD from `theta`.
///
/// Each epoch shuffles the rows with `rng` and walks them in chunks of
/// `batch_size`, keeping the last partial chunk. A batch size at or above the
/// dataset size is a full-batch step on the rows in their stored order, and
/// draws nothing from `rng`.
pub fn local_update<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: &ParameterVector,
    data: &Batch,
    kind: LossKind,
    opts: &LocalTraining,
    rng: &mut R,
) -> Result<ParameterVector> {
    opts.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    spec.check_params(theta)?;
    let mut current = theta.clone();
    let n = data.len();
    if opts.batch_size >= n {
        for _ in 0..opts.epochs {
            let g = gradient(spec, &current, data, kind)?;
            current.axpy(-opts.step_size, &g);
        }
        return Ok(current);
    }
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(opts.batch_size) {
            let g = gradient(spec, &current, &data.select(chunk), kind)?;
            current.axpy(-opts.step_size, &g);
        }
    }
    Ok(current)
}

/// Index of the hypothesis with the smallest local empirical loss; ties go
/// to the lowest index and NaN losses never win.
pub fn select_hypothesis(
    data: &Batch,
    hypotheses: &[ParameterVector],
    spec: &ModelSpec,
    kind: LossKind,
) -> Result<usize> {
    if hypotheses.is_empty() {
        return Err(ModelError::NoHypotheses);
    }
    let mut best = (0, f64::INFINITY);
    for (j, h) in hypotheses.iter().enumerate() {
        let l = loss(spec, h, data, kind)?;
        if l < best.1 {
            best = (j, l);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::{DMatrix, DVector};
    use rand_distr::StandardNormal;

    fn regression_batch(seed: u64, rows: usize, theta: &[f64]) -> Batch {
        let mut r = rng::derive(seed, &[]);
        let x = DMatrix::from_fn(rows, theta.len(), |_, _| r.sample(StandardNormal));
        let y: Vec<f64> = (0..rows)
            .map(|i| (0..theta.len()).map(|j| x[(i, j)] * theta[j]).sum::<f64>() + r.random::<f64>())
            .collect();
        Batch::regression(x, &y).unwrap()
    }

    #[test]
    fn zero_step_leaves_theta_unchanged() {
        let spec = ModelSpec::linear(2, 1, true);
        let data = regression_batch(1, 10, &[1.0, 2.0]);
        let theta = ParameterVector::new(vec![0.3, -0.2, 0.1]);
        let opts = LocalTraining { epochs: 4, step_size: 0.0, batch_size: 3 };
        let out = local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(2, &[])).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn full_batch_single_epoch_is_one_gradient_step() {
        let spec = ModelSpec::feedforward(2, vec![3], 1, true);
        let data = regression_batch(3, 10, &[1.0, -1.0]);
        let theta = spec.init_params(&mut rng::derive(4, &[]));
        let opts = LocalTraining { epochs: 1, step_size: 0.05, batch_size: 10 };
        let out = local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(5, &[])).unwrap();
        let mut expected = theta.clone();
        expected.axpy(-0.05, &gradient(&spec, &theta, &data, LossKind::Rmse).unwrap());
        assert_eq!(out, expected);
    }

    #[test]
    fn converges_to_least_squares() {
        let spec = ModelSpec::linear(2, 1, true);
        let data = regression_batch(6, 40, &[2.0, -3.0]);
        // normal equations on [X | 1]
        let x = data.features();
        let xa = DMatrix::from_fn(x.nrows(), 3, |i, j| if j < 2 { x[(i, j)] } else { 1.0 });
        let y = DVector::from_iterator(x.nrows(), data.targets().iter().copied());
        let xtx = xa.transpose() * &xa;
        let solution = xtx.lu().solve(&(xa.transpose() * y)).unwrap();

        let opts = LocalTraining { epochs: 4000, step_size: 0.05, batch_size: 40 };
        let out = local_update(
            &spec,
            &ParameterVector::zeros(3),
            &data,
            LossKind::Rmse,
            &opts,
            &mut rng::derive(7, &[]),
        )
        .unwrap();
        let dist = out.distance(&ParameterVector::new(solution.iter().copied().collect()));
        assert!(dist < 1e-3, "distance {dist}");
    }

    #[test]
    fn same_seed_same_output() {
        let spec = ModelSpec::linear(2, 1, true);
        let data = regression_batch(8, 23, &[1.0, 1.0]);
        let opts = LocalTraining { epochs: 3, step_size: 0.1, batch_size: 4 };
        let theta = ParameterVector::zeros(3);
        let a = local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(9, &[])).unwrap();
        let b = local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(9, &[])).unwrap();
        let c = local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(10, &[])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_options_rejected() {
        let spec = ModelSpec::linear(2, 1, true);
        let data = regression_batch(1, 5, &[1.0, 1.0]);
        let theta = ParameterVector::zeros(3);
        for opts in [
            LocalTraining { epochs: 0, step_size: 0.1, batch_size: 1 },
            LocalTraining { epochs: 1, step_size: -0.1, batch_size: 1 },
            LocalTraining { epochs: 1, step_size: 0.1, batch_size: 0 },
        ] {
            assert!(local_update(&spec, &theta, &data, LossKind::Rmse, &opts, &mut rng::derive(0, &[])).is_err());
        }
    }

    #[test]
    fn selection_examples() {
        let spec = ModelSpec::linear(2, 1, false);
        let data = regression_batch(13, 10, &[5.0, 6.0]);
        let single = [ParameterVector::new(vec![-9.0, 9.0])];
        assert_eq!(select_hypothesis(&data, &single, &spec, LossKind::Rmse).unwrap(), 0);
        let pair = [ParameterVector::new(vec![4.0, -4.5]), ParameterVector::new(vec![5.0, 6.0])];
        assert_eq!(select_hypothesis(&data, &pair, &spec, LossKind::Rmse).unwrap(), 1);
        let same = [ParameterVector::new(vec![1.0, 1.0]), ParameterVector::new(vec![1.0, 1.0])];
        assert_eq!(select_hypothesis(&data, &same, &spec, LossKind::Rmse).unwrap(), 0);
        assert_eq!(select_hypothesis(&data, &[], &spec, LossKind::Rmse), Err(ModelError::NoHypotheses));
    }
}
