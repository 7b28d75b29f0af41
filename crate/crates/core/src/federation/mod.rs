//! The clustered, d-private federated training loop.
//!
//! Each round the server samples `U` clients and broadcasts its `k`
//! hypotheses. Every sampled client picks the hypothesis with the lowest
//! loss on its data, trains it locally, sanitizes the result and releases
//! it. The server runs k-means on the releases, seeded with the current
//! hypotheses, and replaces each hypothesis with the mean of the releases
//! assigned to it (an empty cluster keeps its hypothesis).

mod evaluate;
mod output;
mod probe;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

use crate::clustering::{self, ClusterError};
use crate::data::ClientDataset;
use crate::mechanism::{sanitize_update, MechanismError, PrivacyLedger, Release};
use crate::models::{self, Batch, LocalTraining, LossKind, ModelError, ModelSpec, ParameterVector};
use crate::rng::{self, tag};

pub use evaluate::{evaluate, evaluate_batches, fairness_predictions, Evaluation};
pub use output::{write_releases_csv, write_rounds_csv, RunSummary};
pub use probe::{gradient_inversion_probe, median, probe_trials, ProbeError};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("round needs {needed} clients but only {available} are available")]
    NotEnoughClients { needed: usize, available: usize },
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("client set is empty")]
    NoClients,
    #[error("duplicate client id {0:?}")]
    DuplicateClient(String),
}

pub type Result<T> = std::result::Result<T, FederationError>;

fn default_kmeans_iters() -> usize {
    clustering::DEFAULT_MAX_ITERS
}

fn default_kmeans_tol() -> f64 {
    clustering::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// Number of hypotheses `k`.
    pub k: usize,
    /// Maximum number of rounds `T`.
    pub rounds: usize,
    /// Clients per round `U`.
    pub users_per_round: usize,
    pub local_epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    /// `ν`; zero releases raw updates.
    pub noise_multiplier: f64,
    /// Rounds without validation improvement before stopping; `None` never stops early.
    #[serde(default)]
    pub patience: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_kmeans_tol")]
    pub kmeans_tol: f64,
}

impl FederationConfig {
    /// Problems with the config, one message per offending field.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        if self.k == 0 {
            p.push(("k", "must be at least 1".to_string()));
        }
        if self.rounds == 0 {
            p.push(("rounds", "must be at least 1".to_string()));
        }
        if self.users_per_round == 0 {
            p.push(("users_per_round", "must be at least 1".to_string()));
        }
        if self.local_epochs == 0 {
            p.push(("local_epochs", "must be at least 1".to_string()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            p.push(("step_size", format!("must be finite and nonnegative, got {}", self.step_size)));
        }
        if self.batch_size == 0 {
            p.push(("batch_size", "must be at least 1".to_string()));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            p.push((
                "noise_multiplier",
                format!("must be finite and nonnegative, got {}", self.noise_multiplier),
            ));
        }
        if self.patience == Some(0) {
            p.push(("patience", "must be at least 1 when set".to_string()));
        }
        if self.kmeans_max_iters == 0 {
            p.push(("kmeans_max_iters", "must be at least 1".to_string()));
        }
        if self.kmeans_tol.is_nan() || self.kmeans_tol < 0.0 {
            p.push(("kmeans_tol", "must be nonnegative".to_string()));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some((field, msg)) => Err(FederationError::InvalidConfig(format!("{field}: {msg}"))),
        }
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.local_epochs,
            step_size: self.step_size,
            batch_size: self.batch_size,
        }
    }
}

/// Everything a round needs that does not change between rounds.
pub struct Federation<'a> {
    pub config: &'a FederationConfig,
    pub spec: &'a ModelSpec,
    pub loss: LossKind,
    pub clients: &'a [ClientDataset],
    batches: Vec<Batch>,
}

impl<'a> Federation<'a> {
    pub fn new(
        config: &'a FederationConfig,
        spec: &'a ModelSpec,
        loss: LossKind,
        clients: &'a [ClientDataset],
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if clients.is_empty() {
            return Err(FederationError::NoClients);
        }
        let mut seen = HashSet::new();
        for c in clients {
            if !seen.insert(c.id.as_str()) {
                return Err(FederationError::DuplicateClient(c.id.clone()));
            }
        }
        let batches = clients
            .iter()
            .map(|c| c.to_batch(spec, loss))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            config,
            spec,
            loss,
            clients,
            batches,
        })
    }

    /// Fresh state: `k` standard-normal hypotheses and a zero ledger entry
    /// for every client.
    pub fn initial_state(&self) -> FederationState {
        let mut r = rng::derive(self.config.seed, &[tag::INIT]);
        let hypotheses: Vec<ParameterVector> = (0..self.config.k).map(|_| self.spec.init_params(&mut r)).collect();
        FederationState {
            best_hypotheses: hypotheses.clone(),
            hypotheses,
            ledger: PrivacyLedger::with_clients(self.clients.iter().map(|c| c.id.clone())),
            history: Vec::new(),
            best_validation_loss: None,
            best_round: None,
        }
    }
}

/// Released vector of one sampled client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRelease {
    pub client: String,
    /// Hypothesis the client trained (lowest local loss).
    pub selected: usize,
    /// Cluster k-means put the release in.
    pub cluster: usize,
    pub value: ParameterVector,
    /// `n/ν`, or `None` for a raw release.
    pub round_epsilon: Option<f64>,
    pub neighbourhood_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub releases: Vec<ClientRelease>,
    /// Size of every k-means cluster.
    pub assignment_counts: Vec<usize>,
    pub kmeans_converged: bool,
    pub hypotheses: Vec<ParameterVector>,
    pub validation_loss: Option<f64>,
    pub median_epsilon: Option<f64>,
    pub max_epsilon: Option<f64>,
}

impl RoundRecord {
    pub fn sampled(&self) -> impl Iterator<Item = &str> {
        self.releases.iter().map(|r| r.client.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationState {
    pub hypotheses: Vec<ParameterVector>,
    pub ledger: PrivacyLedger,
    pub history: Vec<RoundRecord>,
    pub best_validation_loss: Option<f64>,
    pub best_round: Option<usize>,
    pub best_hypotheses: Vec<ParameterVector>,
}

/// Client-side pipeline: select, train, sanitize.
fn client_step(fed: &Federation<'_>, hypotheses: &[ParameterVector], client: usize, round: usize) -> Result<ClientRelease> {
    let cfg = fed.config;
    let c = &fed.clients[client];
    let batch = &fed.batches[client];
    let mut r = rng::derive(cfg.seed, &[tag::CLIENT, round as u64, rng::stable_hash(&c.id)]);
    let selected = models::select_hypothesis(batch, hypotheses, fed.spec, fed.loss)?;
    let start = &hypotheses[selected];
    let local = models::local_update(fed.spec, start, batch, fed.loss, &cfg.local_training(), &mut r)?;
    if cfg.noise_multiplier > 0.0 {
        let s = sanitize_update(start, &local, cfg.noise_multiplier, &mut r)?;
        Ok(ClientRelease {
            client: c.id.clone(),
            selected,
            cluster: selected,
            value: s.value,
            round_epsilon: Some(s.round_epsilon),
            neighbourhood_radius: s.neighbourhood_radius,
        })
    } else {
        Ok(ClientRelease {
            client: c.id.clone(),
            selected,
            cluster: selected,
            neighbourhood_radius: local.distance(start),
            value: local,
            round_epsilon: None,
        })
    }
}

/// One server round. Appends a [`RoundRecord`] (without validation loss)
/// to the state's history.
pub fn run_round(state: &mut FederationState, fed: &Federation<'_>, round: usize) -> Result<()> {
    let cfg = fed.config;
    let available = fed.clients.len();
    if available < cfg.users_per_round {
        return Err(FederationError::NotEnoughClients {
            needed: cfg.users_per_round,
            available,
        });
    }
    let mut r = rng::derive(cfg.seed, &[tag::SAMPLE_USERS, round as u64]);
    let sampled = index::sample(&mut r, available, cfg.users_per_round).into_vec();

    let hypotheses = &state.hypotheses;
    let mut releases = sampled
        .par_iter()
        .map(|&i| client_step(fed, hypotheses, i, round))
        .collect::<Result<Vec<_>>>()?;

    let points: Vec<ParameterVector> = releases.iter().map(|r| r.value.clone()).collect();
    let clusters = clustering::kmeans(&points, hypotheses, cfg.kmeans_max_iters, cfg.kmeans_tol)?;
    let members = clusters.members();
    let next: Vec<ParameterVector> = members
        .iter()
        .zip(hypotheses)
        .map(|(m, old)| ParameterVector::mean(m.iter().map(|&i| &points[i])).unwrap_or_else(|| old.clone()))
        .collect();

    for (rel, &cluster) in releases.iter_mut().zip(&clusters.assignments) {
        rel.cluster = cluster;
        let release = match rel.round_epsilon {
            Some(epsilon) => Release::Protected {
                epsilon,
                radius: rel.neighbourhood_radius,
            },
            None => Release::Unprotected {
                radius: rel.neighbourhood_radius,
            },
        };
        state.ledger.record(&rel.client, release)?;
    }
    let (median_epsilon, max_epsilon) = state.ledger.summary()?;
    state.hypotheses = next.clone();
    state.history.push(RoundRecord {
        round,
        releases,
        assignment_counts: members.iter().map(Vec::len).collect(),
        kmeans_converged: clusters.converged,
        hypotheses: next,
        validation_loss: None,
        median_epsilon,
        max_epsilon,
    });
    Ok(())
}

/// Runs up to `rounds` rounds, scoring the hypotheses on `validation` after
/// each one, and stops once `patience` consecutive rounds bring no strict
/// improvement.
pub fn run_training(
    config: &FederationConfig,
    train: &[ClientDataset],
    validation: &[ClientDataset],
    spec: &ModelSpec,
    loss: LossKind,
) -> Result<FederationState> {
    let fed = Federation::new(config, spec, loss, train)?;
    if validation.is_empty() {
        return Err(FederationError::NoClients);
    }
    let val_batches = validation
        .iter()
        .map(|c| c.to_batch(spec, loss))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut state = fed.initial_state();
    let mut stale = 0usize;
    for t in 0..config.rounds {
        run_round(&mut state, &fed, t)?;
        let eval = evaluate_batches(&state.hypotheses, &val_batches, spec, loss)?;
        let val = eval.global_loss;
        state.history.last_mut().expect("round recorded").validation_loss = Some(val);
        if state.best_validation_loss.is_none_or(|b| val < b) {
            state.best_validation_loss = Some(val);
            state.best_round = Some(t);
            state.best_hypotheses = state.hypotheses.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if config.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    Ok(state)
}
