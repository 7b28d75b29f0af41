//! Config-driven runners behind the command line: a single training run,
//! the fairness sweep and the sampler moment report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, OutputFormat};
use crate::data::{self, ClientDataset, DataError};
use crate::fairness::{FairnessError, FairnessReport};
use crate::federation::{
    self, fairness_predictions, run_training, FederationConfig, FederationError, FederationState, RunSummary,
};
use crate::mechanism::{sample_noise, LaplaceParams, MechanismError};
use crate::models::ModelSpec;
use crate::rng::{self, tag};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample count must be at least 1")]
    EmptySample,
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Train and validation clients for `seed`.
pub fn load_data(cfg: &ExperimentConfig, base: &Path, seed: u64) -> Result<(Vec<ClientDataset>, Vec<ClientDataset>)> {
    let all = if let Some(spec) = &cfg.data.synthetic {
        data::gen_population(spec, "c", &mut rng::derive(seed, &[tag::DATA]))?
    } else {
        let src = cfg.data.tabular.as_ref().expect("validated: one data source");
        data::load_tabular(&base.join(&src.path), &src.schema)?
    };
    if cfg.data.holdout {
        let spec = cfg.data.synthetic.as_ref().expect("validated: holdout needs synthetic data");
        let val = data::gen_population(spec, "v", &mut rng::derive(seed, &[tag::HOLDOUT]))?;
        Ok((all, val))
    } else {
        let f = cfg.data.validation_fraction.expect("validated: one validation source");
        Ok(data::split_clients(all, f, &mut rng::derive(seed, &[tag::SPLIT]))?)
    }
}

/// What `run` produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub state: FederationState,
    pub files: Vec<PathBuf>,
}

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const RELEASES_FILE: &str = "releases.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LEDGER_FILE: &str = "ledger.json";

/// Trains once with `federation.seed` and writes the run artifacts into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let fed = &cfg.federation;
    let spec = &cfg.model.architecture;
    let (train, val) = load_data(cfg, base, fed.seed)?;
    let state = run_training(fed, &train, &val, spec, cfg.model.loss)?;
    let summary = RunSummary::new(&state, fed, spec, cfg.model.loss, train.len(), val.len());

    let mut files = Vec::new();
    if cfg.output.wants(OutputFormat::Csv) {
        let mut rounds = Vec::new();
        federation::write_rounds_csv(&state, fed.k, &mut rounds)?;
        let p = out_dir.join(ROUNDS_FILE);
        write_atomic(&p, &rounds)?;
        files.push(p);
        let mut releases = Vec::new();
        federation::write_releases_csv(&state, spec.param_count(), &mut releases)?;
        let p = out_dir.join(RELEASES_FILE);
        write_atomic(&p, &releases)?;
        files.push(p);
    }
    if cfg.output.wants(OutputFormat::Json) {
        let p = out_dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&p, json.as_bytes())?;
        files.push(p);
        let p = out_dir.join(LEDGER_FILE);
        write_atomic(&p, state.ledger.report()?.to_json().as_bytes())?;
        files.push(p);
    }
    Ok(RunOutcome { summary, state, files })
}

/// Trains on `train`, then scores the best-validation hypotheses on the
/// validation clients.
pub fn fairness_cell(
    fed: &FederationConfig,
    spec: &ModelSpec,
    train: &[ClientDataset],
    validation: &[ClientDataset],
) -> Result<FairnessReport> {
    let state = run_training(fed, train, validation, spec, crate::models::LossKind::CrossEntropy)?;
    let preds = fairness_predictions(&state.best_hypotheses, validation, spec)?;
    Ok(FairnessReport::compute(&preds)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k: usize,
    pub nu: f64,
    pub seed: u64,
    pub report: Option<FairnessReport>,
    pub error: Option<String>,
}

/// Mean and standard error of one metric over the seeds of a `(k, ν)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMean {
    pub k: usize,
    pub nu: f64,
    pub metric: String,
    pub mean: f64,
    pub std_err: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub means: Vec<MetricMean>,
}

impl SweepOutcome {
    pub fn mean(&self, k: usize, nu: f64, metric: &str) -> Option<&MetricMean> {
        self.means.iter().find(|m| m.k == k && m.nu == nu && m.metric == metric)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

pub const FAIRNESS_FILE: &str = "fairness.csv";
pub const FAIRNESS_MEANS_FILE: &str = "fairness_means.csv";
pub const FAIRNESS_ERRORS_FILE: &str = "fairness_errors.csv";

fn summarize(cells: &[CellResult], ks: &[usize], nus: &[f64]) -> Vec<MetricMean> {
    let mut out = Vec::new();
    for &k in ks {
        for &nu in nus {
            let reports: Vec<&FairnessReport> = cells
                .iter()
                .filter(|c| c.k == k && c.nu == nu)
                .filter_map(|c| c.report.as_ref())
                .collect();
            for (i, metric) in FairnessReport::METRICS.iter().enumerate() {
                let xs: Vec<f64> = reports.iter().map(|r| r.values()[i].1).collect();
                let m = xs.len();
                let mean = if m == 0 { f64::NAN } else { xs.iter().sum::<f64>() / m as f64 };
                let std_err = if m < 2 {
                    f64::NAN
                } else {
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                    (var / m as f64).sqrt()
                };
                out.push(MetricMean {
                    k,
                    nu,
                    metric: metric.to_string(),
                    mean,
                    std_err,
                    cells: m,
                });
            }
        }
    }
    out
}

/// Runs every `(k, ν, seed)` cell with `data_for(seed)` supplying the
/// clients. A failing cell is recorded and the sweep carries on.
pub fn sweep_with<F>(
    fed: &FederationConfig,
    spec: &ModelSpec,
    ks: &[usize],
    nus: &[f64],
    seeds: &[u64],
    data_for: F,
) -> SweepOutcome
where
    F: Fn(u64) -> Result<(Vec<ClientDataset>, Vec<ClientDataset>)> + Sync,
{
    let grid: Vec<(usize, f64, u64)> = ks
        .iter()
        .flat_map(|&k| nus.iter().flat_map(move |&nu| seeds.iter().map(move |&s| (k, nu, s))))
        .collect();
    let cells: Vec<CellResult> = grid
        .par_iter()
        .map(|&(k, nu, seed)| {
            let mut cfg = fed.clone();
            cfg.k = k;
            cfg.noise_multiplier = nu;
            cfg.seed = seed;
            let result = data_for(seed).and_then(|(train, val)| fairness_cell(&cfg, spec, &train, &val));
            match result {
                Ok(r) => CellResult {
                    k,
                    nu,
                    seed,
                    report: Some(r),
                    error: None,
                },
                Err(e) => CellResult {
                    k,
                    nu,
                    seed,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let means = summarize(&cells, ks, nus);
    SweepOutcome { cells, means }
}

/// The fairness sweep of a config, with its CSV outputs.
pub fn fairness_sweep(cfg: &ExperimentConfig, base: &Path, out_dir: &Path) -> Result<(SweepOutcome, Vec<PathBuf>)> {
    let f = cfg.fairness.as_ref().filter(|f| f.enabled).ok_or_else(|| {
        ConfigError::Invalid(vec![crate::config::Diagnostic {
            field: "fairness.enabled".into(),
            message: "the fairness section must be present and enabled".into(),
        }])
    })?;
    let outcome = sweep_with(
        &cfg.federation,
        &cfg.model.architecture,
        &f.k_values,
        &f.noise_multipliers,
        &f.seeds,
        |seed| load_data(cfg, base, seed),
    );
    let files = write_sweep(&outcome, out_dir)?;
    Ok((outcome, files))
}

/// `fairness.csv` (k, nu, seed, metric, value), `fairness_means.csv`
/// (k, nu, metric, mean, std_err, cells) and `fairness_errors.csv`.
pub fn write_sweep(outcome: &SweepOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["k", "nu", "seed", "metric", "value"])?;
    for c in &outcome.cells {
        if let Some(r) = &c.report {
            for (metric, value) in r.values() {
                rows.write_record([c.k.to_string(), c.nu.to_string(), c.seed.to_string(), metric.into(), value.to_string()])?;
            }
        }
    }
    let mut means = csv::Writer::from_writer(Vec::new());
    means.write_record(["k", "nu", "metric", "mean", "std_err", "cells"])?;
    for m in &outcome.means {
        means.write_record([
            m.k.to_string(),
            m.nu.to_string(),
            m.metric.clone(),
            m.mean.to_string(),
            m.std_err.to_string(),
            m.cells.to_string(),
        ])?;
    }
    let mut errors = csv::Writer::from_writer(Vec::new());
    errors.write_record(["k", "nu", "seed", "error"])?;
    for c in &outcome.cells {
        if let Some(e) = &c.error {
            errors.write_record([c.k.to_string(), c.nu.to_string(), c.seed.to_string(), e.clone()])?;
        }
    }
    let mut files = Vec::new();
    for (name, w) in [(FAIRNESS_FILE, rows), (FAIRNESS_MEANS_FILE, means), (FAIRNESS_ERRORS_FILE, errors)] {
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        let p = out_dir.join(name);
        write_atomic(&p, &bytes)?;
        files.push(p);
    }
    Ok(files)
}

/// Empirical moments of the sampler against their closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub dim: usize,
    pub epsilon: f64,
    pub count: usize,
    pub mean_norm: f64,
    pub expected_mean_norm: f64,
    /// Per-component variance, pooled over components; needs two samples.
    pub component_variance: Option<f64>,
    pub expected_component_variance: f64,
}

impl MomentReport {
    pub fn mean_norm_rel_err(&self) -> f64 {
        (self.mean_norm - self.expected_mean_norm).abs() / self.expected_mean_norm
    }

    pub fn variance_rel_err(&self) -> Option<f64> {
        self.component_variance
            .map(|v| (v - self.expected_component_variance).abs() / self.expected_component_variance)
    }
}

impl fmt::Display for MomentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples            {}", self.count)?;
        writeln!(f, "dimension          {}", self.dim)?;
        writeln!(f, "epsilon            {}", self.epsilon)?;
        writeln!(
            f,
            "mean norm          {:.6}  (expected n/eps = {:.6}, rel err {:.3e})",
            self.mean_norm,
            self.expected_mean_norm,
            self.mean_norm_rel_err()
        )?;
        match (self.component_variance, self.variance_rel_err()) {
            (Some(v), Some(e)) => writeln!(
                f,
                "component variance {:.6}  (expected (n+1)/eps^2 = {:.6}, rel err {:.3e})",
                v, self.expected_component_variance, e
            ),
            _ => writeln!(
                f,
                "component variance n/a     (expected (n+1)/eps^2 = {:.6}; needs at least 2 samples)",
                self.expected_component_variance
            ),
        }
    }
}

/// Draws `count` noise vectors and reports their moments. The population
/// mean is known to be zero, so the variance uses it rather than the
/// sample mean.
pub fn sample_report(dim: usize, epsilon: f64, count: usize, seed: u64) -> Result<MomentReport> {
    if count == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let params = LaplaceParams::new(epsilon, dim)?;
    const CHUNK: usize = 1 << 14;
    let chunks = count.div_ceil(CHUNK);
    let (norm_sum, sq_sum) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::derive(seed, &[tag::PROBE + 100, c as u64]);
            let n = CHUNK.min(count - c * CHUNK);
            let mut norms = 0.0;
            let mut squares = 0.0;
            for _ in 0..n {
                let v = sample_noise(&params, &mut r);
                norms += v.norm();
                squares += v.as_slice().iter().map(|x| x * x).sum::<f64>();
            }
            (norms, squares)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(MomentReport {
        dim,
        epsilon,
        count,
        mean_norm: norm_sum / count as f64,
        expected_mean_norm: params.mean_radius(),
        component_variance: (count >= 2).then(|| sq_sum / (count * dim) as f64),
        expected_component_variance: params.component_variance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PopulationSpec;

    #[test]
    fn moments_for_planar_noise() {
        let r = sample_report(2, 1.0, 200_000, 1).unwrap();
        assert!(r.mean_norm_rel_err() < 0.01, "{r}");
        assert!(r.variance_rel_err().unwrap() < 0.02, "{r}");
    }

    #[test]
    fn single_sample_has_no_variance() {
        let r = sample_report(3, 2.0, 1, 1).unwrap();
        assert_eq!(r.component_variance, None);
        assert!(r.to_string().contains("n/a"));
        assert!(matches!(sample_report(3, 2.0, 0, 1), Err(ExperimentError::EmptySample)));
    }

    #[test]
    fn sample_report_is_deterministic() {
        assert_eq!(sample_report(4, 0.5, 50_000, 9).unwrap(), sample_report(4, 0.5, 50_000, 9).unwrap());
    }

    fn small_fed() -> FederationConfig {
        FederationConfig {
            k: 1,
            rounds: 5,
            users_per_round: 10,
            local_epochs: 1,
            step_size: 0.1,
            batch_size: 10,
            noise_multiplier: 1.0,
            patience: None,
            seed: 0,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-8,
        }
    }

    #[test]
    fn sweep_counts_cells_and_rows() {
        let spec = ModelSpec::linear(2, 2, true);
        let pop = PopulationSpec::fairness(40, 10);
        let out = sweep_with(&small_fed(), &spec, &[1, 2], &[0.1, 1.0, 2.0, 4.0], &[0, 1, 2, 3, 4], |s| {
            Ok((
                data::gen_population(&pop, "c", &mut rng::derive(s, &[tag::DATA]))?,
                data::gen_population(&pop, "v", &mut rng::derive(s, &[tag::HOLDOUT]))?,
            ))
        });
        assert_eq!(out.cells.len(), 40);
        assert_eq!(out.failed_cells(), 0);
        let metric_rows: usize = out.cells.iter().filter(|c| c.report.is_some()).count() * 3;
        assert_eq!(metric_rows, 120);
        assert_eq!(out.means.len(), 2 * 4 * 3);
    }

    #[test]
    fn identical_groups_are_perfectly_fair() {
        // every client appears once per group with the same data
        let spec = ModelSpec::linear(2, 2, true);
        let pop = PopulationSpec::fairness(30, 0);
        let twin = |prefix: &str, s: u64| -> Result<Vec<ClientDataset>> {
            let base = data::gen_population(&pop, prefix, &mut rng::derive(s, &[tag::DATA]))?;
            let mut out = base.clone();
            for mut c in base {
                c.id.push('u');
                c.sensitive = Some(false);
                out.push(c);
            }
            Ok(out)
        };
        let out = sweep_with(&small_fed(), &spec, &[1, 2], &[1.0], &[0, 1], |s| Ok((twin("c", s)?, twin("v", s)?)));
        for c in &out.cells {
            let r = c.report.expect("cell succeeds");
            assert_eq!(r.values().map(|(_, v)| v), [0.0; 3]);
        }
    }

    #[test]
    fn degenerate_cell_is_recorded_and_sweep_continues() {
        // no unprivileged clients: every cell fails on the empty group
        let spec = ModelSpec::linear(2, 2, true);
        let pop = PopulationSpec::fairness(30, 0);
        let out = sweep_with(&small_fed(), &spec, &[1], &[1.0, 2.0], &[0], |s| {
            Ok((
                data::gen_population(&pop, "c", &mut rng::derive(s, &[tag::DATA]))?,
                data::gen_population(&pop, "v", &mut rng::derive(s, &[tag::HOLDOUT]))?,
            ))
        });
        assert_eq!(out.cells.len(), 2);
        assert_eq!(out.failed_cells(), 2);
        assert!(out.cells[0].error.as_ref().unwrap().contains("unprivileged"));
        assert!(out.means.iter().all(|m| m.cells == 0));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("nested").join("a.txt.tmp").exists());
    }

    #[test]
    fn holdout_population_differs_from_training() {
        let cfg: ExperimentConfig = crate::config::parse_config(&format!(
            r#"
[data]
holdout = true
[data.synthetic]
[[data.synthetic.generators]]
theta = [1.0]
clients = 3
samples_per_client = 2
[model]
loss = "rmse"
[model.architecture]
kind = "linear"
input_dim = 1
output_dim = 1
[federation]
k = 1
rounds = 1
users_per_round = 1
local_epochs = 1
step_size = 0.1
batch_size = 2
noise_multiplier = 1.0
seed = 4
[output]
directory = "{}"
"#,
            "x"
        ))
        .unwrap();
        let (train, val) = load_data(&cfg, Path::new("."), 4).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(val.len(), 3);
        assert!(val.iter().all(|c| c.id.starts_with('v')));
        assert_ne!(train[0].features, val[0].features);
    }
}
