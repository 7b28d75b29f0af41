//! Personalized federated learning under d-privacy.
//!
//! Clients train locally, perturb their parameter updates with the
//! n-dimensional Euclidean Laplace mechanism and release them to a server
//! that groups the updates with hypothesis-seeded k-means and averages each
//! group. A per-client ledger composes the leakage of every release, and a
//! fairness suite compares personalized and non-personalized training.
//!
//! Module map:
//!
//! * [`mechanism`]: densities, exact sampler, update sanitization, privacy ledger.
//! * [`models`]: linear and feed-forward models, losses, analytic gradients, SGD.
//! * [`clustering`]: Lloyd's k-means seeded with the current hypotheses.
//! * [`federation`]: the training loop, evaluation, gradient-inversion probe.
//! * [`fairness`]: group-fairness difference metrics.
//! * [`data`]: synthetic populations and tabular ingestion.
//! * [`config`] / [`experiment`] / [`verify`]: configuration-driven runners.

pub mod clustering;
pub mod config;
pub mod data;
pub mod experiment;
pub mod fairness;
pub mod federation;
pub mod mechanism;
pub mod models;
pub mod rng;
pub mod verify;

pub use mechanism::{LaplaceParams, PrivacyLedger, SanitizedUpdate};
pub use models::{Batch, LossKind, ModelSpec, ParameterVector};
