//! Lloyd's k-means seeded with the server's current hypotheses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ParameterVector;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no points to cluster")]
    NoPoints,
    #[error("no initial centers")]
    NoCenters,
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster index (0-based) of every point.
    pub assignments: Vec<usize>,
    pub centers: Vec<ParameterVector>,
    pub iterations: usize,
    /// True when the result is a Lloyd fixed point; false when `max_iters`
    /// or the movement tolerance stopped the loop first.
    pub converged: bool,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Point indices of every cluster, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.centers.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            m[c].push(i);
        }
        m
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }
}

/// Nearest center by squared L2 distance; ties go to the lowest index.
pub fn nearest(point: &ParameterVector, centers: &[ParameterVector]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = point.distance_squared(c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn assign(points: &[ParameterVector], centers: &[ParameterVector]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centers)).collect()
}

/// Mean of each cluster's members; an empty cluster keeps its previous center.
fn update_centers(points: &[ParameterVector], assignments: &[usize], previous: &[ParameterVector]) -> Vec<ParameterVector> {
    (0..previous.len())
        .map(|j| {
            let members = assignments
                .iter()
                .zip(points)
                .filter(|(a, _)| **a == j)
                .map(|(_, p)| p);
            ParameterVector::mean(members).unwrap_or_else(|| previous[j].clone())
        })
        .collect()
}

/// Within-cluster sum of squared distances.
pub fn inertia(points: &[ParameterVector], centers: &[ParameterVector], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| p.distance_squared(&centers[a]))
        .sum()
}

/// Lloyd iterations from `initial_centers`. Stops when assignments stop
/// changing (a fixed point), when no center moves by `tol` or more, or after
/// `max_iters` center updates.
pub fn kmeans(
    points: &[ParameterVector],
    initial_centers: &[ParameterVector],
    max_iters: usize,
    tol: f64,
) -> Result<ClusterResult, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::NoPoints);
    }
    if initial_centers.is_empty() {
        return Err(ClusterError::NoCenters);
    }
    let dim = initial_centers[0].dim();
    for (index, v) in initial_centers.iter().chain(points).enumerate() {
        if v.dim() != dim {
            let index = index.saturating_sub(initial_centers.len());
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: dim,
                found: v.dim(),
            });
        }
    }

    let mut centers = initial_centers.to_vec();
    let mut assignments = assign(points, &centers);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let next = update_centers(points, &assignments, &centers);
        let movement = next
            .iter()
            .zip(&centers)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        centers = next;
        let reassigned = assign(points, &centers);
        if reassigned == assignments {
            converged = true;
            break;
        }
        assignments = reassigned;
        if movement < tol {
            break;
        }
    }
    Ok(ClusterResult {
        assignments,
        centers,
        iterations,
        converged,
    })
}
