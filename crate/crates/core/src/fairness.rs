//! Group-fairness differences between a privileged (`sensitive = true`) and
//! an unprivileged group, from binary predictions.
//!
//! Rates are plain empirical frequencies. A stratum with no samples is an
//! error rather than a silent zero.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub predicted: bool,
    pub actual: bool,
    /// `true` for the privileged group.
    pub sensitive: bool,
}

impl LabeledPrediction {
    pub fn new(predicted: bool, actual: bool, sensitive: bool) -> Self {
        Self {
            predicted,
            actual,
            sensitive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Privileged,
    Unprivileged,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Privileged => "privileged (S=1)",
            Group::Unprivileged => "unprivileged (S=0)",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FairnessError {
    #[error("{0} group has no samples")]
    EmptyGroup(Group),
    #[error("{group} group has no samples with Y={label}")]
    MissingStratum { group: Group, label: u8 },
}

pub type Result<T> = std::result::Result<T, FairnessError>;

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    /// [sensitive][actual] -> (positives predicted, total)
    cells: [[(u64, u64); 2]; 2],
}

impl Counts {
    fn of(preds: &[LabeledPrediction]) -> Self {
        let mut c = Self::default();
        for p in preds {
            let cell = &mut c.cells[p.sensitive as usize][p.actual as usize];
            cell.0 += p.predicted as u64;
            cell.1 += 1;
        }
        c
    }

    fn group(s: bool) -> Group {
        if s {
            Group::Privileged
        } else {
            Group::Unprivileged
        }
    }

    /// `P[Ŷ=1 | S=s]`
    fn positive_rate(&self, s: bool) -> Result<f64> {
        let [a, b] = self.cells[s as usize];
        let total = a.1 + b.1;
        if total == 0 {
            return Err(FairnessError::EmptyGroup(Self::group(s)));
        }
        Ok((a.0 + b.0) as f64 / total as f64)
    }

    /// `P[Ŷ=1 | Y=y, S=s]`
    fn conditional_rate(&self, s: bool, y: bool) -> Result<f64> {
        let (pos, total) = self.cells[s as usize][y as usize];
        if total == 0 {
            return Err(FairnessError::MissingStratum {
                group: Self::group(s),
                label: y as u8,
            });
        }
        Ok(pos as f64 / total as f64)
    }

    fn gap(&self, y: bool) -> Result<f64> {
        Ok((self.conditional_rate(true, y)? - self.conditional_rate(false, y)?).abs())
    }
}

/// `|P[Ŷ=1|S=1] − P[Ŷ=1|S=0]|`
pub fn demographic_parity_diff(preds: &[LabeledPrediction]) -> Result<f64> {
    let c = Counts::of(preds);
    Ok((c.positive_rate(true)? - c.positive_rate(false)?).abs())
}

/// `|TPR(S=1) − TPR(S=0)|`
pub fn equal_opportunity_diff(preds: &[LabeledPrediction]) -> Result<f64> {
    let c = Counts::of(preds);
    c.gap(true)
}

/// `max(|TPR(S=1) − TPR(S=0)|, |FPR(S=1) − FPR(S=0)|)`
pub fn equalized_odds_diff(preds: &[LabeledPrediction]) -> Result<f64> {
    let c = Counts::of(preds);
    Ok(c.gap(true)?.max(c.gap(false)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub demographic_parity_diff: f64,
    pub equalized_odds_diff: f64,
    pub equal_opportunity_diff: f64,
}

impl FairnessReport {
    pub const METRICS: [&'static str; 3] = [
        "equal_opportunity_diff",
        "equalized_odds_diff",
        "demographic_parity_diff",
    ];

    pub fn compute(preds: &[LabeledPrediction]) -> Result<Self> {
        Ok(Self {
            demographic_parity_diff: demographic_parity_diff(preds)?,
            equalized_odds_diff: equalized_odds_diff(preds)?,
            equal_opportunity_diff: equal_opportunity_diff(preds)?,
        })
    }

    /// `(metric name, value)` in the order of [`Self::METRICS`].
    pub fn values(&self) -> [(&'static str, f64); 3] {
        [
            (Self::METRICS[0], self.equal_opportunity_diff),
            (Self::METRICS[1], self.equalized_odds_diff),
            (Self::METRICS[2], self.demographic_parity_diff),
        ]
    }
}
