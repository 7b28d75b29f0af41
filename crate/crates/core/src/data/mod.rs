//! Client datasets: synthetic populations and tabular ingestion.

mod synth;
mod tabular;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::models::{Batch, LossKind, ModelError, ModelSpec};

pub use synth::{
    gen_fairness_population, gen_population, gen_population_with_responses, gen_regression_population,
    FeatureLaw, GeneratorSpec, LabelMode, PopulationSpec, Threshold, ThresholdSide,
};
pub use tabular::{
    load_population, load_tabular, read_sidecar, read_tabular, write_population, ClientMeta, PopulationSidecar,
    TabularSchema,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("split of {total} clients at fraction {fraction} leaves an empty side")]
    EmptySplit { total: usize, fraction: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Csv { line: u64, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}: empty client id")]
    EmptyClientId { line: u64 },
    #[error("line {line}, column {column:?}: group must be 0 or 1, got {value:?}")]
    InvalidGroup { line: u64, column: String, value: String },
    #[error("file has no data rows")]
    NoRows,
    #[error("sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: String,
    /// Samples as rows.
    pub features: DMatrix<f64>,
    /// Regression values, or class labels stored as `0.0, 1.0, ...`.
    pub targets: Vec<f64>,
    /// Binary sensitive attribute; `true` is the privileged group.
    pub sensitive: Option<bool>,
    /// Ground-truth generator, for evaluation only.
    pub generator: Option<usize>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Targets shaped for `kind`: a single column for RMSE, one-hot rows for
    /// cross-entropy.
    pub fn to_batch(&self, spec: &ModelSpec, kind: LossKind) -> std::result::Result<Batch, ModelError> {
        match kind {
            LossKind::Rmse => {
                if spec.output_dim != 1 {
                    return Err(ModelError::InvalidTargets(format!(
                        "client {} has scalar targets but the model has {} outputs",
                        self.id, spec.output_dim
                    )));
                }
                Batch::regression(self.features.clone(), &self.targets)
            }
            LossKind::CrossEntropy => {
                let labels = self
                    .labels()
                    .ok_or_else(|| ModelError::InvalidTargets(format!("client {} has non-integer labels", self.id)))?;
                Batch::classification(self.features.clone(), &labels, spec.output_dim)
            }
        }
    }

    /// Targets as class indices, if every target is a nonnegative integer.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.targets
            .iter()
            .map(|&t| (t >= 0.0 && t.fract() == 0.0 && t < 1e9).then_some(t as usize))
            .collect()
    }
}

/// Seeded shuffle, then the first `round(fraction · N)` clients become the
/// validation side.
pub fn split_clients<R: Rng + ?Sized>(
    mut clients: Vec<ClientDataset>,
    validation_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<ClientDataset>, Vec<ClientDataset>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(DataError::InvalidFraction(validation_fraction));
    }
    let total = clients.len();
    let n_val = (validation_fraction * total as f64).round() as usize;
    if n_val == 0 || n_val >= total {
        return Err(DataError::EmptySplit {
            total,
            fraction: validation_fraction,
        });
    }
    clients.shuffle(rng);
    let train = clients.split_off(n_val);
    Ok((train, clients))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn clients(n: usize) -> Vec<ClientDataset> {
        (0..n)
            .map(|i| ClientDataset {
                id: format!("c{i}"),
                features: DMatrix::from_element(1, 1, i as f64),
                targets: vec![0.0],
                sensitive: None,
                generator: None,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_coverage() {
        let (train, val) = split_clients(clients(10), 0.3, &mut rng::derive(1, &[])).unwrap();
        assert_eq!((train.len(), val.len()), (7, 3));
        let mut ids: Vec<String> = train.iter().chain(&val).map(|c| c.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn split_is_seeded() {
        let a = split_clients(clients(20), 0.25, &mut rng::derive(4, &[])).unwrap();
        let b = split_clients(clients(20), 0.25, &mut rng::derive(4, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_clients(clients(10), 0.0, &mut rng::derive(1, &[])),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_clients(clients(10), 1.0, &mut rng::derive(1, &[])),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_clients(clients(3), 0.1, &mut rng::derive(1, &[])),
            Err(DataError::EmptySplit { .. })
        ));
    }

    #[test]
    fn batches_follow_loss_kind() {
        let c = ClientDataset {
            id: "a".into(),
            features: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            targets: vec![1.0, 0.0],
            sensitive: Some(true),
            generator: Some(0),
        };
        let reg = c.to_batch(&ModelSpec::linear(1, 1, true), LossKind::Rmse).unwrap();
        assert_eq!(reg.targets().ncols(), 1);
        let cls = c.to_batch(&ModelSpec::linear(1, 2, true), LossKind::CrossEntropy).unwrap();
        assert_eq!(cls.targets()[(0, 1)], 1.0);
        assert_eq!(cls.targets()[(1, 0)], 1.0);
        assert!(c.to_batch(&ModelSpec::linear(1, 2, true), LossKind::Rmse).is_err());
        let mut frac = c.clone();
        frac.targets = vec![0.5, 1.0];
        assert!(frac.to_batch(&ModelSpec::linear(1, 2, true), LossKind::CrossEntropy).is_err());
    }
}
