//! Per-client privacy accounting.
//!
//! Independent releases compose additively: running an `ε₁`- and an
//! `ε₂`-d-private mechanism on the same secret is `(ε₁+ε₂)`-d-private. Sums
//! are correctly rounded, which makes [`compose`] independent of order and
//! makes `m` charges of `a` equal `m·a` bit for bit.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{MechanismError, Result};

/// Correctly rounded sum of nonnegative, finite privacy losses.
pub fn compose(epsilons: &[f64]) -> Result<f64> {
    if let Some(&bad) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(MechanismError::InvalidCharge(bad));
    }
    Ok(exact_sum(epsilons))
}

// Shewchuk's partials with a correctly rounded final step.
fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// One release by a client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Release {
    /// Sanitized release leaking `epsilon` within a ball of `radius`.
    Protected { epsilon: f64, radius: f64 },
    /// Raw release (noise disabled); no finite guarantee.
    Unprotected { radius: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    /// Participation count.
    pub rounds: u32,
    /// Per-release leakage of protected releases, in order.
    pub charges: Vec<f64>,
    /// `compose(charges)`.
    pub epsilon: f64,
    /// `‖δ‖₂` of every release, in order.
    pub radii: Vec<f64>,
    pub unprotected_releases: u32,
}

impl ClientRecord {
    /// Cumulative leakage, `None` once any raw release happened.
    pub fn bounded_epsilon(&self) -> Option<f64> {
        (self.unprotected_releases == 0).then_some(self.epsilon)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    clients: IndexMap<String, ClientRecord>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger with a zero record for each id, in the given order.
    pub fn with_clients<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ledger = Self::new();
        for id in ids {
            ledger.register(id);
        }
        ledger
    }

    pub fn register(&mut self, id: impl Into<String>) {
        self.clients.entry(id.into()).or_default();
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ClientRecord> {
        self.clients.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClientRecord)> {
        self.clients.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Records one release. Budget is charged at release time, whatever the
    /// server later does with the update.
    pub fn record(&mut self, id: &str, release: Release) -> Result<()> {
        let rec = self
            .clients
            .get_mut(id)
            .ok_or_else(|| MechanismError::UnknownClient(id.to_string()))?;
        match release {
            Release::Protected { epsilon, radius } => {
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(MechanismError::InvalidCharge(epsilon));
                }
                rec.charges.push(epsilon);
                rec.epsilon = compose(&rec.charges)?;
                rec.radii.push(radius);
            }
            Release::Unprotected { radius } => {
                rec.unprotected_releases += 1;
                rec.radii.push(radius);
            }
        }
        rec.rounds += 1;
        Ok(())
    }

    /// Median and max cumulative leakage over all registered clients,
    /// counting clients that never participated at zero. A raw release
    /// counts as unbounded, reported as `None` when it reaches the statistic.
    pub fn report(&self) -> Result<LedgerReport> {
        if self.clients.is_empty() {
            return Err(MechanismError::EmptyLedger);
        }
        let clients: Vec<ClientEntry> = self
            .clients
            .iter()
            .map(|(id, rec)| ClientEntry {
                id: id.clone(),
                rounds: rec.rounds,
                epsilon: rec.bounded_epsilon(),
                radii: rec.radii.clone(),
                unprotected_releases: rec.unprotected_releases,
            })
            .collect();
        let mut values: Vec<f64> = clients
            .iter()
            .map(|c| c.epsilon.unwrap_or(f64::INFINITY))
            .collect();
        values.sort_by(f64::total_cmp);
        let m = values.len();
        let median = if m % 2 == 1 {
            values[m / 2]
        } else {
            (values[m / 2 - 1] + values[m / 2]) / 2.0
        };
        let max = values[m - 1];
        Ok(LedgerReport {
            clients,
            median_epsilon: median.is_finite().then_some(median),
            max_epsilon: max.is_finite().then_some(max),
        })
    }

    /// `(median, max)` of the current report.
    pub fn summary(&self) -> Result<(Option<f64>, Option<f64>)> {
        let r = self.report()?;
        Ok((r.median_epsilon, r.max_epsilon))
    }
}

/// Serializable ledger report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub id: String,
    pub rounds: u32,
    /// `null` when the client made a raw release.
    pub epsilon: Option<f64>,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub unprotected_releases: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub clients: Vec<ClientEntry>,
    pub median_epsilon: Option<f64>,
    pub max_epsilon: Option<f64>,
}

impl LedgerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn protected(epsilon: f64) -> Release {
        Release::Protected { epsilon, radius: 1.0 }
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(&[]).unwrap(), 0.0);
        assert_eq!(compose(&[0.4; 10]).unwrap(), 4.0);
        assert_eq!(compose(&[0.25, 1.5]).unwrap(), 1.75);
        assert!(compose(&[1.0, -0.1]).is_err());
        assert!(compose(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn repeated_charges_equal_product() {
        for a in [0.4, 0.1, 2.0 / 3.0, 1e-3, 7.3] {
            for m in 1..200u32 {
                assert_eq!(compose(&vec![a; m as usize]).unwrap(), f64::from(m) * a, "a={a} m={m}");
            }
        }
    }

    #[test]
    fn report_examples() {
        let mut one = PrivacyLedger::with_clients(["a"]);
        for _ in 0..3 {
            one.record("a", protected(0.4)).unwrap();
        }
        let r = one.report().unwrap();
        assert_eq!(r.median_epsilon, Some(0.4 * 3.0));
        assert_eq!(r.max_epsilon, Some(0.4 * 3.0));
        assert_eq!(r.clients[0].rounds, 3);

        let mut three = PrivacyLedger::with_clients(["a", "b", "c"]);
        three.record("b", protected(2.0)).unwrap();
        three.record("c", protected(10.0)).unwrap();
        assert_eq!(three.summary().unwrap(), (Some(2.0), Some(10.0)));

        let idle = PrivacyLedger::with_clients(["a", "b"]);
        assert_eq!(idle.summary().unwrap(), (Some(0.0), Some(0.0)));

        assert_eq!(PrivacyLedger::new().report(), Err(MechanismError::EmptyLedger));
    }

    #[test]
    fn unprotected_releases_are_unbounded() {
        let mut l = PrivacyLedger::with_clients(["a", "b", "c"]);
        l.record("a", Release::Unprotected { radius: 0.3 }).unwrap();
        let r = l.report().unwrap();
        assert_eq!(r.clients[0].epsilon, None);
        assert_eq!(r.median_epsilon, Some(0.0));
        assert_eq!(r.max_epsilon, None);
        let json = r.to_json();
        assert!(json.contains("\"max_epsilon\": null"));
        assert_eq!(LedgerReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn unknown_client_rejected() {
        let mut l = PrivacyLedger::with_clients(["a"]);
        assert_eq!(
            l.record("z", protected(1.0)),
            Err(MechanismError::UnknownClient("z".into()))
        );
    }

    proptest! {
        #[test]
        fn compose_is_order_independent(mut v in proptest::collection::vec(0.0f64..100.0, 0..40), seed in any::<u64>()) {
            let a = compose(&v).unwrap();
            // rotate and reverse
            let k = if v.is_empty() { 0 } else { (seed as usize) % v.len() };
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(a, compose(&v).unwrap());
        }

        #[test]
        fn compose_is_associative(v in proptest::collection::vec(0.0f64..10.0, 0..30), split in 0usize..30) {
            let s = split.min(v.len());
            let whole = compose(&v).unwrap();
            let parts = compose(&[compose(&v[..s]).unwrap(), compose(&v[s..]).unwrap()]).unwrap();
            // correctly rounded sums of the parts may round once more
            prop_assert!((whole - parts).abs() <= f64::EPSILON * whole);
        }

        #[test]
        fn ledger_is_monotone(charges in proptest::collection::vec(0.0f64..3.0, 1..30)) {
            let mut l = PrivacyLedger::with_clients(["c"]);
            let mut last = 0.0;
            for (i, c) in charges.iter().enumerate() {
                l.record("c", protected(*c)).unwrap();
                let rec = l.get("c").unwrap();
                prop_assert!(rec.epsilon >= last);
                prop_assert_eq!(rec.epsilon, compose(&charges[..=i]).unwrap());
                last = rec.epsilon;
            }
        }
    }
}
