//! Run artifacts: per-round CSV, released-vector CSV, JSON summary.

use serde::{Deserialize, Serialize};
use std::io::Write;

use super::{FederationConfig, FederationState};
use crate::models::{LossKind, ModelSpec};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `round,val_loss,assign_0..assign_{k-1},median_eps,max_eps`
pub fn write_rounds_csv<W: Write>(state: &FederationState, k: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["round".to_string(), "val_loss".to_string()];
    header.extend((0..k).map(|j| format!("assign_{j}")));
    header.push("median_eps".into());
    header.push("max_eps".into());
    w.write_record(&header)?;
    for r in &state.history {
        let mut row = vec![r.round.to_string(), opt(r.validation_loss)];
        row.extend(r.assignment_counts.iter().map(|c| c.to_string()));
        row.push(opt(r.median_epsilon));
        row.push(opt(r.max_epsilon));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `round,client_id,selected,cluster,round_eps,radius,theta_0..theta_{n-1}`
pub fn write_releases_csv<W: Write>(state: &FederationState, n: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["round", "client_id", "selected", "cluster", "round_eps", "radius"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("theta_{i}")));
    w.write_record(&header)?;
    for r in &state.history {
        for rel in &r.releases {
            let mut row = vec![
                r.round.to_string(),
                rel.client.clone(),
                rel.selected.to_string(),
                rel.cluster.to_string(),
                opt(rel.round_epsilon),
                rel.neighbourhood_radius.to_string(),
            ];
            row.extend(rel.value.as_slice().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub federation: FederationConfig,
    pub model: ModelSpec,
    pub loss: LossKind,
    pub train_clients: usize,
    pub validation_clients: usize,
    pub rounds_run: usize,
    pub best_round: Option<usize>,
    pub best_validation_loss: Option<f64>,
    pub final_validation_loss: Option<f64>,
    pub final_hypotheses: Vec<Vec<f64>>,
    pub best_hypotheses: Vec<Vec<f64>>,
    pub median_epsilon: Option<f64>,
    pub max_epsilon: Option<f64>,
}

impl RunSummary {
    pub fn new(
        state: &FederationState,
        federation: &FederationConfig,
        model: &ModelSpec,
        loss: LossKind,
        train_clients: usize,
        validation_clients: usize,
    ) -> Self {
        let last = state.history.last();
        Self {
            federation: federation.clone(),
            model: model.clone(),
            loss,
            train_clients,
            validation_clients,
            rounds_run: state.history.len(),
            best_round: state.best_round,
            best_validation_loss: state.best_validation_loss,
            final_validation_loss: last.and_then(|r| r.validation_loss),
            final_hypotheses: state.hypotheses.iter().map(|h| h.as_slice().to_vec()).collect(),
            best_hypotheses: state.best_hypotheses.iter().map(|h| h.as_slice().to_vec()).collect(),
            median_epsilon: last.and_then(|r| r.median_epsilon),
            max_epsilon: last.and_then(|r| r.max_epsilon),
        }
    }
}
