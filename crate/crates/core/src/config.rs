//! Experiment configuration files (TOML).
//!
//! ```toml
//! [data]
//! holdout = true
//!
//! [data.synthetic]
//! labels = "regression"
//! [[data.synthetic.generators]]
//! theta = [5.0, 6.0]
//! clients = 50
//! samples_per_client = 10
//!
//! [model]
//! loss = "rmse"
//! [model.architecture]
//! kind = "linear"
//! input_dim = 2
//! output_dim = 1
//! bias = false
//!
//! [federation]
//! k = 2
//! rounds = 200
//! users_per_round = 7
//! local_epochs = 1
//! step_size = 0.1
//! batch_size = 10
//! noise_multiplier = 5.0
//! seed = 0
//!
//! [output]
//! directory = "out/regression"
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::data::{LabelMode, PopulationSpec, TabularSchema};
use crate::federation::FederationConfig;
use crate::models::{LossKind, ModelKind, ModelSpec};

/// One rejected field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSource {
    /// Resolved against the config file's directory when relative.
    pub path: PathBuf,
    pub schema: TabularSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub synthetic: Option<PopulationSpec>,
    #[serde(default)]
    pub tabular: Option<TabularSource>,
    /// Draws a separate validation population from the synthetic spec.
    #[serde(default)]
    pub holdout: bool,
    /// Moves this fraction of the clients to validation instead.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub loss: LossKind,
    pub architecture: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub noise_multipliers: Vec<f64>,
    #[serde(default)]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl OutputSection {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub federation: FederationConfig,
    #[serde(default)]
    pub fairness: Option<FairnessSection>,
    pub output: OutputSection,
}

fn push(out: &mut Vec<Diagnostic>, field: impl Into<String>, message: impl Into<String>) {
    out.push(Diagnostic {
        field: field.into(),
        message: message.into(),
    });
}

impl ExperimentConfig {
    /// Every semantic problem, one diagnostic per offending field.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let data = &self.data;
        match (&data.synthetic, &data.tabular) {
            (None, None) => push(&mut d, "data", "one of data.synthetic or data.tabular is required"),
            (Some(_), Some(_)) => push(&mut d, "data", "data.synthetic and data.tabular are mutually exclusive"),
            _ => {}
        }
        if let Some(spec) = &data.synthetic {
            if let Err(e) = spec.validate() {
                push(&mut d, "data.synthetic", e.to_string());
            }
            if let Some(dim) = spec.feature_dim() {
                if dim != self.model.architecture.input_dim {
                    push(
                        &mut d,
                        "model.architecture.input_dim",
                        format!("is {} but the generators have {dim} features", self.model.architecture.input_dim),
                    );
                }
            }
            let wants_classes = self.model.loss == LossKind::CrossEntropy;
            let labelled = spec.labels == LabelMode::SigmoidThreshold;
            if wants_classes != labelled {
                push(
                    &mut d,
                    "model.loss",
                    "cross_entropy requires sigmoid_threshold labels and rmse requires regression labels",
                );
            }
        }
        if let Some(t) = &data.tabular {
            if t.schema.feature_columns.len() != self.model.architecture.input_dim {
                push(
                    &mut d,
                    "model.architecture.input_dim",
                    format!(
                        "is {} but data.tabular.schema lists {} feature columns",
                        self.model.architecture.input_dim,
                        t.schema.feature_columns.len()
                    ),
                );
            }
            if data.holdout {
                push(&mut d, "data.holdout", "only available for synthetic data");
            }
        }
        match (data.holdout, data.validation_fraction) {
            (false, None) => push(&mut d, "data", "set data.holdout or data.validation_fraction"),
            (true, Some(_)) => push(
                &mut d,
                "data.validation_fraction",
                "cannot be combined with data.holdout",
            ),
            (_, Some(f)) if !(f > 0.0 && f < 1.0) => {
                push(&mut d, "data.validation_fraction", format!("must lie in (0, 1), got {f}"))
            }
            _ => {}
        }
        if let Err(e) = self.model.architecture.validate() {
            push(&mut d, "model.architecture", e.to_string());
        }
        if self.model.loss == LossKind::Rmse && self.model.architecture.output_dim != 1 {
            push(&mut d, "model.architecture.output_dim", "rmse needs a single output");
        }
        if self.model.loss == LossKind::CrossEntropy && self.model.architecture.output_dim < 2 {
            push(&mut d, "model.architecture.output_dim", "cross_entropy needs at least 2 outputs");
        }
        if self.model.architecture.kind == ModelKind::Linear && !self.model.architecture.hidden_layers.is_empty() {
            push(&mut d, "model.architecture.hidden_layers", "must be empty for a linear model");
        }
        for (field, msg) in self.federation.problems() {
            push(&mut d, format!("federation.{field}"), msg);
        }
        if let Some(f) = &self.fairness {
            if f.enabled {
                if f.noise_multipliers.is_empty() {
                    push(&mut d, "fairness.noise_multipliers", "must be nonempty when fairness is enabled");
                }
                if let Some(bad) = f.noise_multipliers.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    push(&mut d, "fairness.noise_multipliers", format!("must be finite and nonnegative, got {bad}"));
                }
                if f.k_values.is_empty() {
                    push(&mut d, "fairness.k_values", "must be nonempty when fairness is enabled");
                }
                if f.k_values.contains(&0) {
                    push(&mut d, "fairness.k_values", "must all be at least 1");
                }
                if f.seeds.is_empty() {
                    push(&mut d, "fairness.seeds", "must be nonempty when fairness is enabled");
                }
                if self.model.loss != LossKind::CrossEntropy {
                    push(&mut d, "model.loss", "fairness sweeps need a cross_entropy classifier");
                }
            }
        }
        if self.output.formats.is_empty() {
            push(&mut d, "output.formats", "must list at least one of \"csv\", \"json\"");
        }
        if self.output.directory.as_os_str().is_empty() {
            push(&mut d, "output.directory", "must not be empty");
        }
        d
    }

    pub fn fairness_enabled(&self) -> bool {
        self.fairness.as_ref().is_some_and(|f| f.enabled)
    }

    /// Absolute location of the tabular file, if any.
    pub fn tabular_path(&self, base: &Path) -> Option<PathBuf> {
        self.data.tabular.as_ref().map(|t| base.join(&t.path))
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let d = cfg.diagnostics();
    if d.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(d))
    }
}

/// Reads `path` and parses it. Returns the config and the directory that
/// relative data paths resolve against.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}
