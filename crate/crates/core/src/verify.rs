//! Self-check battery run by `dpfl verify`.
//!
//! Every check runs at a fixed seed and reports its own timing. A fault can
//! be injected through [`Faults`] to confirm that the harness notices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::time::{Duration, Instant};

use crate::clustering::{self, nearest};
use crate::fairness::{self, LabeledPrediction};
use crate::mechanism::{self, compose, radius_pdf, sanitize_update, LaplaceParams, PrivacyLedger, Release};
use crate::models::{self, Batch, LossKind, ModelSpec, ParameterVector};
use crate::rng;

/// Environment variable read by [`Faults::from_env`]: a comma-separated list
/// of `name=value` pairs. Known names: `variance_scale`, `mean_scale`.
pub const FAULT_ENV: &str = "DPFL_VERIFY_FAULT";

/// Deliberate corruptions for exercising the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Faults {
    pub variance_scale: f64,
    pub mean_scale: f64,
}

impl Default for Faults {
    fn default() -> Self {
        Self {
            variance_scale: 1.0,
            mean_scale: 1.0,
        }
    }
}

impl Faults {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut f = Self::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| format!("fault {part:?} is not name=value"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("fault {name}: {value:?} is not a number"))?;
            match name.trim() {
                "variance_scale" => f.variance_scale = v,
                "mean_scale" => f.mean_scale = v,
                other => return Err(format!("unknown fault {other:?}")),
            }
        }
        Ok(f)
    }

    pub fn from_env() -> Result<Self, String> {
        match std::env::var(FAULT_ENV) {
            Ok(s) => Self::parse(&s),
            Err(_) => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<28} {:>9.3} ms  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64() * 1e3,
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Check = fn(&Faults) -> (bool, String);

const CHECKS: &[(&str, Check)] = &[
    ("radius_pdf_normalization", radius_normalization),
    ("d_privacy_density_ratio", density_ratio),
    ("sampler_moments", sampler_moments),
    ("sanitizer_calibration", sanitizer_calibration),
    ("rmse_bound_margin", rmse_bound),
    ("gradient_finite_differences", gradient_check),
    ("kmeans_fixed_point", kmeans_fixed_point),
    ("fairness_brute_force", fairness_brute_force),
    ("composition_exactness", composition),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check, in a fixed order. A check that panics counts as failed.
pub fn run_all(faults: &Faults) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let result = std::panic::catch_unwind(|| check(faults));
            let (passed, detail) = result.unwrap_or_else(|_| (false, "panicked".to_string()));
            CheckOutcome {
                name,
                passed,
                detail,
                elapsed: start.elapsed(),
            }
        })
        .collect();
    VerifyReport { checks }
}

fn finite_le(value: f64, bound: f64) -> bool {
    value.is_finite() && value <= bound
}

fn radius_normalization(_: &Faults) -> (bool, String) {
    let mut worst = 0.0f64;
    for (eps, n) in [(0.5, 1usize), (1.0, 2), (3.0, 16), (2.0, 64)] {
        let p = LaplaceParams::new(eps, n).unwrap();
        // composite Simpson on [0, 50 n/ε]
        let upper = 50.0 * n as f64 / eps;
        let m = 20_000;
        let h = upper / m as f64;
        let mut s = radius_pdf(0.0, &p) + radius_pdf(upper, &p);
        for i in 1..m {
            s += radius_pdf(i as f64 * h, &p) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        worst = worst.max((s * h / 3.0 - 1.0).abs());
    }
    (finite_le(worst, 1e-6), format!("max |integral - 1| = {worst:.2e}"))
}

fn density_ratio(_: &Faults) -> (bool, String) {
    let mut r = rng::derive(11, &[1]);
    let mut worst = f64::NEG_INFINITY;
    for n in [1usize, 2, 10] {
        for _ in 0..10_000 {
            let eps: f64 = r.random_range(0.05..5.0);
            let p = LaplaceParams::new(eps, n).unwrap();
            let mut v = || ParameterVector::new((0..n).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect());
            let (x1, x2, x) = (v(), v(), v());
            let lhs = mechanism::log_density(&x, &x1, &p).unwrap() - mechanism::log_density(&x, &x2, &p).unwrap();
            worst = worst.max(lhs - eps * x1.distance(&x2));
        }
    }
    (finite_le(worst, 1e-9), format!("max excess = {worst:.2e}"))
}

fn sampler_moments(f: &Faults) -> (bool, String) {
    let p = LaplaceParams::new(1.0, 2).unwrap();
    let mut r = rng::derive(12, &[1]);
    let count = 200_000;
    let (mut norms, mut squares) = (0.0, 0.0);
    for _ in 0..count {
        let v = mechanism::sample_noise(&p, &mut r);
        norms += v.norm();
        squares += v.as_slice().iter().map(|x| x * x).sum::<f64>();
    }
    let mean = f.mean_scale * norms / count as f64;
    let var = f.variance_scale * squares / (2 * count) as f64;
    let em = (mean - p.mean_radius()).abs() / p.mean_radius();
    let ev = (var - p.component_variance()).abs() / p.component_variance();
    (
        finite_le(em, 0.01) && finite_le(ev, 0.02),
        format!("mean norm {mean:.4} (rel {em:.2e}), component variance {var:.4} (rel {ev:.2e})"),
    )
}

fn sanitizer_calibration(_: &Faults) -> (bool, String) {
    let mut r = rng::derive(13, &[1]);
    let mut ok = true;
    for (n, nu) in [(2usize, 5.0), (10, 1.0), (3, 0.25)] {
        let h = ParameterVector::zeros(n);
        let local = ParameterVector::new((0..n).map(|_| r.sample(StandardNormal)).collect());
        let s = sanitize_update(&h, &local, nu, &mut r).unwrap();
        ok &= s.round_epsilon == n as f64 / nu;
        ok &= (s.mechanism_epsilon * s.neighbourhood_radius - n as f64 / nu).abs() < 1e-12;
    }
    (ok, "round epsilon = n/nu".to_string())
}

fn rmse_bound(_: &Faults) -> (bool, String) {
    let mut r = rng::derive(14, &[1]);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let d = r.random_range(1..6);
        let rows = r.random_range(1..12);
        let spec = ModelSpec::linear(d, 1, r.random());
        let x = DMatrix::from_fn(rows, d, |_, _| r.sample(StandardNormal));
        let y: Vec<f64> = (0..rows).map(|_| r.sample(StandardNormal)).collect();
        let batch = Batch::regression(x, &y).unwrap();
        let theta = spec.init_params(&mut r);
        let rho = spec.init_params(&mut r).scale(r.random_range(0.0..3.0));
        worst = worst.min(models::verify_rmse_bound(&spec, &batch, &theta, &rho).unwrap());
    }
    (worst.is_finite() && worst >= -1e-9, format!("min margin = {worst:.3e}"))
}

fn gradient_check(_: &Faults) -> (bool, String) {
    let mut r = rng::derive(15, &[1]);
    let mut worst = 0.0f64;
    let specs = [
        (ModelSpec::linear(4, 1, true), LossKind::Rmse),
        (ModelSpec::linear(3, 3, true), LossKind::CrossEntropy),
        (ModelSpec::feedforward(3, vec![5], 1, true), LossKind::Rmse),
        (ModelSpec::feedforward(3, vec![4], 2, true), LossKind::CrossEntropy),
    ];
    for (spec, kind) in specs {
        for _ in 0..5 {
            let x = DMatrix::from_fn(6, spec.input_dim, |_, _| r.sample(StandardNormal));
            let batch = match kind {
                LossKind::Rmse => {
                    Batch::regression(x, &(0..6).map(|_| r.sample(StandardNormal)).collect::<Vec<f64>>()).unwrap()
                }
                LossKind::CrossEntropy => {
                    let labels: Vec<usize> = (0..6).map(|_| r.random_range(0..spec.output_dim)).collect();
                    Batch::classification(x, &labels, spec.output_dim).unwrap()
                }
            };
            let theta = spec.init_params(&mut r);
            let g = models::gradient(&spec, &theta, &batch, kind).unwrap();
            let h = 1e-5;
            for i in 0..theta.dim() {
                let mut up = theta.clone();
                up.as_mut_slice()[i] += h;
                let mut down = theta.clone();
                down.as_mut_slice()[i] -= h;
                let fd = (models::loss(&spec, &up, &batch, kind).unwrap()
                    - models::loss(&spec, &down, &batch, kind).unwrap())
                    / (2.0 * h);
                worst = worst.max((fd - g[i]).abs());
            }
        }
    }
    (finite_le(worst, 1e-5), format!("max |analytic - finite difference| = {worst:.2e}"))
}

fn kmeans_fixed_point(_: &Faults) -> (bool, String) {
    let mut r = rng::derive(16, &[1]);
    let mut bad = 0;
    let cases = 200;
    for _ in 0..cases {
        let k = r.random_range(1..4);
        let pts: Vec<ParameterVector> = (0..r.random_range(k..20))
            .map(|_| ParameterVector::new((0..2).map(|_| 4.0 * r.sample::<f64, _>(StandardNormal)).collect()))
            .collect();
        let init: Vec<ParameterVector> = (0..k).map(|i| pts[i].clone()).collect();
        let res = clustering::kmeans(&pts, &init, 1000, 0.0).unwrap();
        let stable = res
            .assignments
            .iter()
            .zip(&pts)
            .all(|(&a, p)| nearest(p, &res.centers) == a);
        let centred = res.members().iter().zip(&res.centers).all(|(m, c)| {
            m.is_empty() || ParameterVector::mean(m.iter().map(|&i| &pts[i])).unwrap().distance(c) < 1e-12
        });
        if !(res.converged && stable && centred) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/{cases} results not Lloyd fixed points"))
}

fn reference_rates(preds: &[LabeledPrediction]) -> Option<[f64; 3]> {
    let rate = |s: bool, y: Option<bool>| -> Option<f64> {
        let sel: Vec<_> = preds
            .iter()
            .filter(|p| p.sensitive == s && y.is_none_or(|y| p.actual == y))
            .collect();
        (!sel.is_empty()).then(|| sel.iter().filter(|p| p.predicted).count() as f64 / sel.len() as f64)
    };
    let dp = (rate(true, None)? - rate(false, None)?).abs();
    let tpr = (rate(true, Some(true))? - rate(false, Some(true))?).abs();
    let fpr = (rate(true, Some(false))? - rate(false, Some(false))?).abs();
    Some([dp, tpr, tpr.max(fpr)])
}

fn fairness_brute_force(_: &Faults) -> (bool, String) {
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    let mut list = Vec::with_capacity(5);
    fn rec(list: &mut Vec<LabeledPrediction>, left: usize, checked: &mut u64, bad: &mut u64) {
        if let Some(r) = reference_rates(list) {
            *checked += 1;
            let got = [
                fairness::demographic_parity_diff(list),
                fairness::equal_opportunity_diff(list),
                fairness::equalized_odds_diff(list),
            ];
            if got.iter().zip(r).any(|(g, r)| g.as_ref().ok() != Some(&r)) {
                *bad += 1;
            }
        }
        if left == 0 {
            return;
        }
        for code in 0..8u8 {
            list.push(LabeledPrediction::new(code & 1 == 1, code & 2 == 2, code & 4 == 4));
            rec(list, left - 1, checked, bad);
            list.pop();
        }
    }
    rec(&mut list, 5, &mut checked, &mut mismatches);
    (
        mismatches == 0 && checked > 0,
        format!("{checked} lists with complete strata, {mismatches} mismatches"),
    )
}

fn composition(_: &Faults) -> (bool, String) {
    let mut ok = true;
    for m in 0..150u32 {
        let charges = vec![0.4; m as usize];
        ok &= compose(&charges).unwrap() == f64::from(m) * 0.4;
    }
    let mut ledger = PrivacyLedger::with_clients(["a"]);
    for _ in 0..37 {
        ledger
            .record("a", Release::Protected { epsilon: 0.4, radius: 1.0 })
            .unwrap();
    }
    ok &= ledger.get("a").unwrap().epsilon == 37.0 * 0.4;
    (ok, "m charges of a sum to m*a exactly".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes_every_check() {
        let report = run_all(&Faults::default());
        assert_eq!(report.checks.len(), CHECKS.len());
        for c in &report.checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn variance_fault_is_caught() {
        let report = run_all(&Faults::parse("variance_scale=1.1").unwrap());
        let failed: Vec<_> = report.failed().map(|c| c.name).collect();
        assert_eq!(failed, ["sampler_moments"]);
    }

    #[test]
    fn fault_parsing() {
        assert_eq!(Faults::parse("").unwrap(), Faults::default());
        assert_eq!(Faults::parse("mean_scale=2, variance_scale=0.5").unwrap().variance_scale, 0.5);
        assert!(Faults::parse("bogus=1").is_err());
        assert!(Faults::parse("variance_scale").is_err());
        assert!(Faults::parse("variance_scale=x").is_err());
    }

    #[test]
    fn nan_fault_fails() {
        let report = run_all(&Faults::parse("mean_scale=NaN").unwrap());
        assert!(!report.all_passed());
    }
}
