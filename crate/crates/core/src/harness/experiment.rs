//! Monte-Carlo replicates: simulate, test a set of edges with the
//! de-correlated and oracle pipelines, and pool the decisions into
//! type-I error, power and coverage.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::inference::{self, InferenceConfig};
use crate::model::{integrated_process, HawkesModel, SpikeData};
use crate::simulator::{make_structure, simulate, SimConfig};

/// Which `(i, j)` pairs are tested in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSubset {
    All,
    /// Every true edge plus `k` zero entries drawn per replicate.
    TrueEdgesPlusSample(usize),
}

impl Default for EdgeSubset {
    fn default() -> Self {
        EdgeSubset::TrueEdgesPlusSample(50)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ds,
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ds => "ds",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSettings {
    pub alpha: f64,
    pub inference: InferenceConfig,
    pub edge_subset: EdgeSubset,
    pub oracle: bool,
    pub burn_in: usize,
    pub clip_bounds: (f64, f64),
    pub record_runtime: bool,
}

impl Default for TestSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            inference: InferenceConfig::default(),
            edge_subset: EdgeSubset::default(),
            oracle: false,
            burn_in: 500,
            clip_bounds: (0.001, 0.999),
            record_runtime: false,
        }
    }
}

/// Outcome of one test of one coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeRecord {
    pub replicate: usize,
    pub row: usize,
    pub col: usize,
    pub truth: f64,
    pub method: Method,
    pub u_hat: f64,
    pub p_value: f64,
    pub reject: bool,
    pub b_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub upsilon: f64,
}

impl EdgeRecord {
    pub fn covers_truth(&self) -> bool {
        self.ci_lo <= self.truth && self.truth <= self.ci_hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub records: Vec<EdgeRecord>,
    /// Method of every edge test that failed numerically and was excluded.
    pub failed: Vec<Method>,
    pub clip_count: usize,
    pub runtime_ms: Option<f64>,
}

/// Pooled metrics for one `(structure, T, method)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub structure: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub method: String,
    pub type1_rate: Option<f64>,
    pub power: Option<f64>,
    pub ci0_coverage: Option<f64>,
    pub cia_coverage: Option<f64>,
    pub n_tests_zero: usize,
    pub n_tests_nonzero: usize,
    pub mean_runtime_ms: Option<f64>,
    pub seed: u64,
    pub n_failed: usize,
}

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 12] = [
    "structure",
    "T",
    "method",
    "type1_rate",
    "power",
    "ci0_coverage",
    "cia_coverage",
    "n_tests_zero",
    "n_tests_nonzero",
    "mean_runtime_ms",
    "seed",
    "n_failed",
];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-replicate seed `seed ⊕ hash(index)`.
pub fn replicate_seed(base: u64, index: usize) -> u64 {
    base ^ splitmix64(index as u64)
}

/// Edges to test, sorted by `(row, col)`.
pub fn select_edges(theta: &Array2<f64>, subset: EdgeSubset, seed: u64) -> Vec<(usize, usize)> {
    let p = theta.nrows();
    let mut edges: Vec<(usize, usize)> = match subset {
        EdgeSubset::All => (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).collect(),
        EdgeSubset::TrueEdgesPlusSample(k) => {
            let zeros: Vec<(usize, usize)> = theta
                .indexed_iter()
                .filter(|(_, v)| **v == 0.0)
                .map(|(ij, _)| ij)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5eed_ed9e));
            let mut out: Vec<(usize, usize)> = theta
                .indexed_iter()
                .filter(|(_, v)| **v != 0.0)
                .map(|(ij, _)| ij)
                .collect();
            let take = k.min(zeros.len());
            out.extend(index::sample(&mut rng, zeros.len(), take).into_iter().map(|n| zeros[n]));
            out
        }
    };
    edges.sort_unstable();
    edges
}

/// Test each listed edge on fixed data. Row fits are shared across edges of
/// the same row. Returns the records and the method of each failed test.
pub fn scan_edges(
    spikes: &SpikeData,
    model: &HawkesModel,
    edges: &[(usize, usize)],
    settings: &TestSettings,
    replicate: usize,
) -> (Vec<EdgeRecord>, Vec<Method>) {
    let x = integrated_process(spikes, &model.kernel);
    let support = model.support();
    let cfg = &settings.inference;
    let mut by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(i, j) in edges {
        by_row.entry(i).or_default().push(j);
    }

    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (i, cols) in by_row {
        let row_fit = inference::fit_row(spikes, &x, i, cfg);
        for j in cols {
            let truth = model.theta[[i, j]];
            let ds = row_fit.as_ref().map_err(|e| Error::DegenerateDesign(e.to_string())).and_then(|row| {
                let fit = inference::nuisance_from_row(row.clone(), &[j], cfg)?;
                record(&fit, spikes, &x, settings.alpha, replicate, truth, Method::Ds)
            });
            match ds {
                Ok(r) => records.push(r),
                Err(_) => failed.push(Method::Ds),
            }
            if settings.oracle {
                let or = inference::oracle_null_nuisance(spikes, &x, i, &[j], &support, cfg).and_then(|null| {
                    let full = inference::oracle_nuisance(spikes, &x, i, &[j], &support, cfg)?;
                    record_split(&null, &full, spikes, &x, settings.alpha, replicate, truth, Method::Oracle)
                });
                match or {
                    Ok(r) => records.push(r),
                    Err(_) => failed.push(Method::Oracle),
                }
            }
        }
    }
    (records, failed)
}

fn record(
    fit: &inference::NuisanceFit,
    spikes: &SpikeData,
    x: &Array2<f64>,
    alpha: f64,
    replicate: usize,
    truth: f64,
    method: Method,
) -> Result<EdgeRecord> {
    record_split(fit, fit, spikes, x, alpha, replicate, truth, method)
}

/// Test from `test_fit`, interval from `ci_fit`.
#[allow(clippy::too_many_arguments)]
fn record_split(
    test_fit: &inference::NuisanceFit,
    ci_fit: &inference::NuisanceFit,
    spikes: &SpikeData,
    x: &Array2<f64>,
    alpha: f64,
    replicate: usize,
    truth: f64,
    method: Method,
) -> Result<EdgeRecord> {
    let test = inference::score_test(test_fit, spikes, x, alpha)?;
    let ci = inference::one_step_ci(ci_fit, spikes, x, alpha)?;
    let (lo, hi) = ci.interval.expect("single-coefficient region is an interval");
    Ok(EdgeRecord {
        replicate,
        row: test.row,
        col: test.cols[0],
        truth,
        method,
        u_hat: test.u_hat,
        p_value: test.p_value,
        reject: test.reject,
        b_hat: ci.b_hat[0],
        ci_lo: lo,
        ci_hi: hi,
        upsilon: test.upsilon_hat[0][0],
    })
}

/// Simulate replicate `replicate` of `model` at length `steps` and test it.
pub fn run_replicate(model: &HawkesModel, steps: usize, replicate: usize, base_seed: u64, settings: &TestSettings) -> Result<ReplicateOutcome> {
    let start = settings.record_runtime.then(Instant::now);
    let seed = replicate_seed(base_seed, replicate);
    let sim = SimConfig {
        steps,
        burn_in: settings.burn_in,
        seed,
        clip_bounds: settings.clip_bounds,
    };
    let (spikes, state) = simulate(model, &sim)?;
    let edges = select_edges(&model.theta, settings.edge_subset, seed);
    let (records, failed) = scan_edges(&spikes, model, &edges, settings, replicate);
    Ok(ReplicateOutcome {
        replicate,
        seed,
        records,
        failed,
        clip_count: state.clip_count,
        runtime_ms: start.map(|s| s.elapsed().as_secs_f64() * 1e3),
    })
}

/// Replicates `0..n_replicates`, run in parallel and returned in order.
pub fn run_cell(model: &HawkesModel, steps: usize, n_replicates: usize, base_seed: u64, settings: &TestSettings) -> Result<Vec<ReplicateOutcome>> {
    (0..n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(model, steps, r, base_seed, settings))
        .collect()
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Pool the records of one method across replicates.
pub fn summarize(structure: &str, steps: usize, method: Method, outcomes: &[ReplicateOutcome], seed: u64) -> MetricsRow {
    let recs = outcomes
        .iter()
        .flat_map(|o| o.records.iter())
        .filter(|r| r.method == method);
    let (mut nz, mut nn, mut rej_z, mut rej_n, mut cov_z, mut cov_n) = (0, 0, 0, 0, 0, 0);
    for r in recs {
        if r.truth == 0.0 {
            nz += 1;
            rej_z += r.reject as usize;
            cov_z += r.covers_truth() as usize;
        } else {
            nn += 1;
            rej_n += r.reject as usize;
            cov_n += r.covers_truth() as usize;
        }
    }
    let times: Vec<f64> = outcomes.iter().filter_map(|o| o.runtime_ms).collect();
    MetricsRow {
        structure: structure.to_string(),
        steps,
        method: method.name().to_string(),
        type1_rate: rate(rej_z, nz),
        power: rate(rej_n, nn),
        ci0_coverage: rate(cov_z, nz),
        cia_coverage: rate(cov_n, nn),
        n_tests_zero: nz,
        n_tests_nonzero: nn,
        mean_runtime_ms: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        seed,
        n_failed: outcomes.iter().map(|o| o.failed.iter().filter(|&&m| m == method).count()).sum(),
    }
}

/// Every `T` in the configuration, both methods when the oracle is enabled.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let model = make_structure(&cfg.structure)?;
    let settings = cfg.test_settings();
    let mut rows = Vec::new();
    for &steps in &cfg.t_list {
        let outcomes = run_cell(&model, steps, cfg.n_replicates, cfg.seed, &settings)?;
        rows.push(summarize(cfg.structure.kind.name(), steps, Method::Ds, &outcomes, cfg.seed));
        if cfg.oracle {
            rows.push(summarize(cfg.structure.kind.name(), steps, Method::Oracle, &outcomes, cfg.seed));
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let expected = &METRICS_COLUMNS[..];
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse(format!("unexpected metrics header {:?}", headers)));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
