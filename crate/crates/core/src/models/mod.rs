//! Fitting functions, losses, analytic gradients and local SGD.

mod bound;
mod network;
mod sgd;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bound::{first_order_margin, spectral_norm, verify_rmse_bound};
pub use network::{gradient, loss, loss_and_gradient, positive_probability, predict};
pub use sgd::{local_update, select_hypothesis, LocalTraining};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("operation requires a linear model")]
    NotLinear,
    #[error("invalid local training options: {0}")]
    InvalidTraining(String),
    #[error("hypothesis set is empty")]
    NoHypotheses,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Feedforward,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Rmse,
    CrossEntropy,
}

/// Architecture of the fitted function `f(θ; x)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

/// Location of one dense layer inside a flat parameter vector. Weights are
/// stored row-major as `fan_out x fan_in`, followed by the bias when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerLayout {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias_offset: Option<usize>,
}

impl LayerLayout {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias_offset.is_some() { self.fan_out } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelSpec {
    pub fn linear(input_dim: usize, output_dim: usize, bias: bool) -> Self {
        Self {
            kind: ModelKind::Linear,
            input_dim,
            output_dim,
            hidden_layers: Vec::new(),
            activation: Activation::Relu,
            bias,
        }
    }

    pub fn feedforward(input_dim: usize, hidden: Vec<usize>, output_dim: usize, bias: bool) -> Self {
        Self {
            kind: ModelKind::Feedforward,
            input_dim,
            output_dim,
            hidden_layers: hidden,
            activation: Activation::Relu,
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.output_dim == 0 {
            return Err(ModelError::InvalidSpec("output_dim must be at least 1".into()));
        }
        match self.kind {
            ModelKind::Linear if !self.hidden_layers.is_empty() => Err(ModelError::InvalidSpec(
                "a linear model has no hidden layers".into(),
            )),
            ModelKind::Feedforward if self.hidden_layers.contains(&0) => Err(
                ModelError::InvalidSpec("hidden layer widths must be at least 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers.len() + 2);
        w.push(self.input_dim);
        if self.kind == ModelKind::Feedforward {
            w.extend_from_slice(&self.hidden_layers);
        }
        w.push(self.output_dim);
        w
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bias_offset = self.bias.then_some(offset + fan_in * fan_out);
                let layer = LayerLayout {
                    offset,
                    fan_in,
                    fan_out,
                    bias_offset,
                };
                offset += layer.len();
                layer
            })
            .collect()
    }

    /// Number of parameters `n`.
    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerLayout::len).sum()
    }

    /// I.i.d. standard normal initialization.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector::new(
            (0..self.param_count())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    pub(crate) fn check_params(&self, theta: &ParameterVector) -> Result<()> {
        let n = self.param_count();
        if theta.dim() != n {
            return Err(ModelError::DimensionMismatch {
                what: "parameter vector",
                expected: n,
                found: theta.dim(),
            });
        }
        Ok(())
    }
}

/// A point `θ ∈ ℝⁿ`. The layout is given by the [`ModelSpec`] it is used with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// `self - other`, componentwise.
    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, by: f64) -> Self {
        Self(self.0.iter().map(|a| a * by).collect())
    }

    /// In-place `self += by * other`.
    pub fn axpy(&mut self, by: f64, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += by * b;
        }
    }

    /// Componentwise mean of a nonempty set of equal-dimension vectors,
    /// summed in the given order.
    pub fn mean<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a ParameterVector>,
    {
        let mut iter = points.into_iter();
        let mut acc = iter.next()?.clone();
        let mut count = 1usize;
        for p in iter {
            for (a, b) in acc.0.iter_mut().zip(&p.0) {
                *a += b;
            }
            count += 1;
        }
        let inv = count as f64;
        for a in &mut acc.0 {
            *a /= inv;
        }
        Some(acc)
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Samples as rows of `features`, with matching rows of `targets`
/// (a single column for regression, one-hot rows for classification).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl Batch {
    pub fn new(features: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if features.nrows() != targets.nrows() {
            return Err(ModelError::DimensionMismatch {
                what: "target rows",
                expected: features.nrows(),
                found: targets.nrows(),
            });
        }
        Ok(Self { features, targets })
    }

    /// Regression batch with one target value per row.
    pub fn regression(features: DMatrix<f64>, targets: &[f64]) -> Result<Self> {
        let t = DMatrix::from_column_slice(targets.len(), 1, targets);
        Self::new(features, t)
    }

    /// Classification batch with integer class labels in `0..classes`.
    pub fn classification(features: DMatrix<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        let mut t = DMatrix::zeros(labels.len(), classes);
        for (i, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(ModelError::InvalidTargets(format!(
                    "label {c} at row {i} outside 0..{classes}"
                )));
            }
            t[(i, c)] = 1.0;
        }
        Self::new(features, t)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Sub-batch made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }
}
