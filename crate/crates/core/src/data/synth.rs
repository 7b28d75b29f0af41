//! Synthetic client populations: linear generators with uniform residuals,
//! optionally thresholded into binary labels.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ClientDataset, DataError, Result};

/// Law of each feature coordinate (drawn i.i.d.).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureLaw {
    #[default]
    StandardNormal,
    Uniform {
        low: f64,
        high: f64,
    },
}

impl FeatureLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            FeatureLaw::StandardNormal => rng.sample(StandardNormal),
            FeatureLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FeatureLaw::Uniform { low, high } if !(low < high && low.is_finite() && high.is_finite()) => Err(
                DataError::InvalidSpec(format!("uniform feature law needs low < high, got [{low}, {high})")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSide {
    /// label 1 iff `Sigmoid(y − offset) ≥ 0.5`
    AtLeastHalf,
    /// label 1 iff `Sigmoid(y − offset) ≤ 0.5`
    AtMostHalf,
}

/// Sigmoid threshold rule. `Sigmoid(t) ≥ 0.5 ⟺ t ≥ 0`, so the rule is
/// evaluated on the sign of `y − offset`, which avoids saturation of the
/// logistic function near zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    #[serde(default)]
    pub offset: f64,
    pub side: ThresholdSide,
}

impl Default for Threshold {
    fn default() -> Self {
        Self {
            offset: 0.0,
            side: ThresholdSide::AtLeastHalf,
        }
    }
}

impl Threshold {
    pub fn label(&self, y: f64) -> bool {
        let t = y - self.offset;
        match self.side {
            ThresholdSide::AtLeastHalf => t >= 0.0,
            ThresholdSide::AtMostHalf => t <= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Regression,
    SigmoidThreshold,
}

/// `y = xᵀθ* + shift + u`, `u ~ Uniform[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub theta: Vec<f64>,
    #[serde(default)]
    pub shift: f64,
    pub clients: usize,
    pub samples_per_client: usize,
    /// Sensitive attribute of this generator's clients.
    #[serde(default)]
    pub privileged: Option<bool>,
    /// Used when the population's label mode is `sigmoid_threshold`.
    #[serde(default)]
    pub threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub feature_law: FeatureLaw,
    #[serde(default)]
    pub labels: LabelMode,
}

impl PopulationSpec {
    /// Two regression generators, `θ₁* = [5, 6]` and `θ₂* = [4, −4.5]`,
    /// with `clients_each` clients of 10 samples per generator.
    pub fn two_regressions(clients_each: usize) -> Self {
        Self {
            generators: vec![
                GeneratorSpec {
                    theta: vec![5.0, 6.0],
                    shift: 0.0,
                    clients: clients_each,
                    samples_per_client: 10,
                    privileged: None,
                    threshold: None,
                },
                GeneratorSpec {
                    theta: vec![4.0, -4.5],
                    shift: 0.0,
                    clients: clients_each,
                    samples_per_client: 10,
                    privileged: None,
                    threshold: None,
                },
            ],
            feature_law: FeatureLaw::StandardNormal,
            labels: LabelMode::Regression,
        }
    }

    /// Privileged majority `g₁` (800 clients, `y = xᵀθ₁ + u`, label 1 iff
    /// `Sigmoid(y) ≥ 0.5`) and unprivileged minority `g₂` (200 clients,
    /// `y = xᵀθ₂ + 15 + u`, label 1 iff `Sigmoid(y − 15) ≤ 0.5`), 10 samples
    /// per client, reusing the regression generators' parameters.
    pub fn fairness(majority: usize, minority: usize) -> Self {
        Self {
            generators: vec![
                GeneratorSpec {
                    theta: vec![5.0, 6.0],
                    shift: 0.0,
                    clients: majority,
                    samples_per_client: 10,
                    privileged: Some(true),
                    threshold: Some(Threshold {
                        offset: 0.0,
                        side: ThresholdSide::AtLeastHalf,
                    }),
                },
                GeneratorSpec {
                    theta: vec![4.0, -4.5],
                    shift: 15.0,
                    clients: minority,
                    samples_per_client: 10,
                    privileged: Some(false),
                    threshold: Some(Threshold {
                        offset: 15.0,
                        side: ThresholdSide::AtMostHalf,
                    }),
                },
            ],
            feature_law: FeatureLaw::StandardNormal,
            labels: LabelMode::SigmoidThreshold,
        }
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.generators.first().map(|g| g.theta.len())
    }

    pub fn total_clients(&self) -> usize {
        self.generators.iter().map(|g| g.clients).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self
            .feature_dim()
            .ok_or_else(|| DataError::InvalidSpec("at least one generator is required".into()))?;
        if dim == 0 {
            return Err(DataError::InvalidSpec("generator theta must be nonempty".into()));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.theta.len() != dim {
                return Err(DataError::InvalidSpec(format!(
                    "generator {i} has {} coefficients, expected {dim}",
                    g.theta.len()
                )));
            }
            if g.theta.iter().chain([&g.shift]).any(|v| !v.is_finite()) {
                return Err(DataError::InvalidSpec(format!("generator {i} has non-finite parameters")));
            }
            if g.samples_per_client == 0 {
                return Err(DataError::InvalidSpec(format!("generator {i} needs samples_per_client >= 1")));
            }
        }
        if self.total_clients() == 0 {
            return Err(DataError::InvalidSpec("population has no clients".into()));
        }
        self.feature_law.validate()
    }
}

/// Generated clients together with the raw responses `y` behind their targets.
pub fn gen_population_with_responses<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    id_prefix: &str,
    rng: &mut R,
) -> Result<Vec<(ClientDataset, Vec<f64>)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.total_clients());
    for (gi, g) in spec.generators.iter().enumerate() {
        let d = g.theta.len();
        let threshold = g.threshold.unwrap_or_default();
        for _ in 0..g.clients {
            let m = g.samples_per_client;
            let mut features = DMatrix::zeros(m, d);
            let mut responses = Vec::with_capacity(m);
            for i in 0..m {
                let mut y = 0.0;
                for j in 0..d {
                    let x = spec.feature_law.sample(rng);
                    features[(i, j)] = x;
                    y += x * g.theta[j];
                }
                y += g.shift + rng.random::<f64>();
                responses.push(y);
            }
            let targets = match spec.labels {
                LabelMode::Regression => responses.clone(),
                LabelMode::SigmoidThreshold => responses
                    .iter()
                    .map(|&y| if threshold.label(y) { 1.0 } else { 0.0 })
                    .collect(),
            };
            let id = format!("{id_prefix}{:05}", out.len());
            out.push((
                ClientDataset {
                    id,
                    features,
                    targets,
                    sensitive: g.privileged,
                    generator: Some(gi),
                },
                responses,
            ));
        }
    }
    Ok(out)
}

pub fn gen_population<R: Rng + ?Sized>(spec: &PopulationSpec, id_prefix: &str, rng: &mut R) -> Result<Vec<ClientDataset>> {
    Ok(gen_population_with_responses(spec, id_prefix, rng)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

pub fn gen_regression_population<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<Vec<ClientDataset>> {
    if spec.labels != LabelMode::Regression {
        return Err(DataError::InvalidSpec("expected a regression population".into()));
    }
    gen_population(spec, "c", rng)
}

/// The default fairness population (800 privileged + 200 unprivileged).
pub fn gen_fairness_population<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<ClientDataset>> {
    gen_population(&PopulationSpec::fairness(800, 200), "c", rng)
}
