//! De-correlated score tests and one-step confidence regions for the
//! connectivity coefficients `β_iJ` of a single target unit `i`.
//!
//! The pipeline for a target row `i` and tested columns `J`:
//!
//! 1. lasso of `Y_i` on `(1, x)` gives `μ̂_i, β̂_i`, the fitted intensity and
//!    the residual scale `σ̂_i²(t)`;
//! 2. for each `j ∈ J`, a lasso of `ẑ_j = x_j / σ̂_i` on `(1, ẑ_{−j})` gives
//!    the projection weights `ŵ_j` and the de-correlated column
//!    `ẑ*_j = ẑ_j − (1, ẑ_{−j}) ŵ_j`;
//! 3. the score `Ŝ = (1/T) Σ ε̂/σ̂ · ẑ*_J` with `ε̂` excluding the columns in
//!    `J`, its covariance `Υ̂ = (1/T) Σ ẑ*ẑ*ᵀ`, and `Û = T Ŝᵀ Υ̂⁻¹ Ŝ`,
//!    compared against `χ²_d`.
//!
//! Step 1 depends only on `i`, so [`fit_row`] results can be shared across
//! all tested columns of the same row.

pub mod chi2;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{residual_scale, SpikeData, DEFAULT_SIGMA_FLOOR};
use crate::solver::{self, fit_lasso, fit_lasso_cv, LassoProblem, SeqCVSpec};

pub use chi2::{chi2_cdf, chi2_quantile, chi2_sf, noncentral_chi2_cdf};

/// Relative jitter added to a near-singular `Υ̂`.
pub const RIDGE_JITTER: f64 = 1e-8;
const MIN_PIVOT_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub cv: SeqCVSpec,
    pub sigma_floor: f64,
    /// Fitted intensity without the intercept, `λ̂ = xᵀβ̂`.
    #[serde(default)]
    pub sigma_without_intercept: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            cv: SeqCVSpec::default(),
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            sigma_without_intercept: false,
            tol: solver::DEFAULT_TOL,
            max_iter: solver::DEFAULT_MAX_ITER,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_floor > 0.0 && self.sigma_floor < 0.25) {
            return Err(Error::InvalidParameter(format!(
                "sigma floor must lie in (0, 0.25), got {}",
                self.sigma_floor
            )));
        }
        self.cv.validate()
    }
}

/// Step-1 output for one target row.
#[derive(Debug, Clone)]
pub struct RowFit {
    pub target_row: usize,
    pub mu_hat: f64,
    pub beta_hat: Array1<f64>,
    pub lambda_hat: Array1<f64>,
    pub sigma2_hat: Array1<f64>,
    /// Penalty used for the row regression (0 for least squares).
    pub penalty: f64,
    /// `x / σ̂` rowwise.
    pub z_hat: Array2<f64>,
}

/// Step-2 output for one tested column.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionFit {
    pub col: usize,
    pub intercept: f64,
    /// Weights on `ẑ_{−j}`, stored at full width with entry `col` equal to 0.
    pub weights: Array1<f64>,
    pub penalty: f64,
    /// `(1/T) Σ ẑ*_j²`.
    pub residual_second_moment: f64,
    /// Residual vanishes relative to `ẑ_j`: the column is (close to) a
    /// linear combination of the others.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub row: RowFit,
    pub target_cols: Vec<usize>,
    pub w_hat: Vec<ProjectionFit>,
}

impl NuisanceFit {
    pub fn target_row(&self) -> usize {
        self.row.target_row
    }

    pub fn dof(&self) -> usize {
        self.target_cols.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreDiagnostics {
    pub condition_number: f64,
    pub ridge_jitter: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreTestResult {
    pub row: usize,
    pub cols: Vec<usize>,
    pub s_hat: Vec<f64>,
    pub upsilon_hat: Vec<Vec<f64>>,
    pub u_hat: f64,
    pub dof: usize,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub diagnostics: ScoreDiagnostics,
}

/// Region `{θ : T (b̂ − θ)ᵀ Υ̂ (b̂ − θ) ≤ χ²_d(1 − α)}` around the one-step estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceRegion {
    pub row: usize,
    pub cols: Vec<usize>,
    pub b_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub upsilon_hat: Vec<Vec<f64>>,
    pub upsilon_tilde: Vec<Vec<f64>>,
    pub level: f64,
    pub critical_value: f64,
    pub steps: usize,
    /// `χ²_d(1 − α) / T`.
    pub region_radius: f64,
    /// Endpoints for `d = 1`.
    pub interval: Option<(f64, f64)>,
}

impl ConfidenceRegion {
    pub fn contains(&self, theta: &[f64]) -> bool {
        let d = self.b_hat.len();
        if theta.len() != d {
            return false;
        }
        let diff: Vec<f64> = self.b_hat.iter().zip(theta).map(|(b, t)| b - t).collect();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += diff[a] * self.upsilon_hat[a][b] * diff[b];
            }
        }
        q <= self.region_radius
    }

    pub fn half_width(&self) -> Option<f64> {
        self.interval.map(|(lo, hi)| 0.5 * (hi - lo))
    }
}

enum Regression<'a> {
    Lasso(&'a SeqCVSpec),
    LeastSquares,
}

/// Regress `response` on `(1, design[:, cols])`; returns the intercept, the
/// weights scattered to full width, and the penalty used.
fn regress(
    response: Array1<f64>,
    design: &Array2<f64>,
    cols: &[usize],
    mode: Regression<'_>,
    cfg: &InferenceConfig,
) -> Result<(f64, Array1<f64>, f64)> {
    let sub = design.select(Axis(1), cols);
    let mut problem = LassoProblem::with_intercept(response, sub.view())?;
    problem.tol = cfg.tol;
    problem.max_iter = cfg.max_iter;
    let fit = match mode {
        Regression::Lasso(cv) => fit_lasso_cv(&problem, cv)?,
        Regression::LeastSquares => fit_lasso(&problem.with_lambda(0.0))?,
    };
    let mut weights = Array1::<f64>::zeros(design.ncols());
    for (k, &c) in cols.iter().enumerate() {
        weights[c] = fit.coefficients[k + 1];
    }
    Ok((fit.coefficients[0], weights, fit.lambda_used))
}

fn check_inputs(spikes: &SpikeData, x: &Array2<f64>, i: usize, cols: &[usize]) -> Result<()> {
    let p = spikes.units();
    if x.dim() != (spikes.steps(), p) {
        return Err(Error::Dimension(format!(
            "design is {:?}, spikes are ({}, {p})",
            x.dim(),
            spikes.steps()
        )));
    }
    if i >= p {
        return Err(Error::InvalidParameter(format!("target row {i} out of range (p = {p})")));
    }
    if cols.is_empty() {
        return Err(Error::InvalidParameter("tested column set is empty".into()));
    }
    if let Some(j) = cols.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidParameter(format!("tested column {j} out of range (p = {p})")));
    }
    let mut sorted = cols.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != cols.len() {
        return Err(Error::InvalidParameter("tested columns contain duplicates".into()));
    }
    Ok(())
}

fn finish_row(x: &Array2<f64>, i: usize, mu_hat: f64, beta_hat: Array1<f64>, penalty: f64, cfg: &InferenceConfig) -> Result<RowFit> {
    let mut lambda_hat = x.dot(&beta_hat);
    if !cfg.sigma_without_intercept {
        lambda_hat += mu_hat;
    }
    let sigma2_hat = lambda_hat.mapv(|l| residual_scale(l, cfg.sigma_floor));
    let sigma = sigma2_hat.mapv(f64::sqrt);
    let z_hat = solver::scale_design(x.view(), &sigma)?;
    Ok(RowFit {
        target_row: i,
        mu_hat,
        beta_hat,
        lambda_hat,
        sigma2_hat,
        penalty,
        z_hat,
    })
}

/// Step 1: lasso of `Y_i` on `(1, x)` with cross-validated penalty.
pub fn fit_row(spikes: &SpikeData, x: &Array2<f64>, i: usize, cfg: &InferenceConfig) -> Result<RowFit> {
    cfg.validate()?;
    check_inputs(spikes, x, i, &[0])?;
    let all: Vec<usize> = (0..spikes.units()).collect();
    let (mu, beta, penalty) = regress(spikes.response(i), x, &all, Regression::Lasso(&cfg.cv), cfg)?;
    finish_row(x, i, mu, beta, penalty, cfg)
}

fn projection(row: &RowFit, j: usize, cols: &[usize], mode: Regression<'_>, cfg: &InferenceConfig) -> Result<ProjectionFit> {
    let zj = row.z_hat.column(j).to_owned();
    let (intercept, weights, penalty) = regress(zj.clone(), &row.z_hat, cols, mode, cfg)?;
    let zstar = &zj - &(row.z_hat.dot(&weights) + intercept);
    let n = zj.len() as f64;
    let residual_second_moment = zstar.dot(&zstar) / n;
    let raw = zj.dot(&zj) / n;
    Ok(ProjectionFit {
        col: j,
        intercept,
        weights,
        penalty,
        residual_second_moment,
        degenerate: !(residual_second_moment > 1e-10 * raw),
    })
}

/// Step 2 for column `j`: lasso of `ẑ_j` on `(1, ẑ_{−j})`.
pub fn fit_projection(row: &RowFit, j: usize, cfg: &InferenceConfig) -> Result<ProjectionFit> {
    let p = row.beta_hat.len();
    if j >= p {
        return Err(Error::InvalidParameter(format!("column {j} out of range (p = {p})")));
    }
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    projection(row, j, &others, Regression::Lasso(&cfg.cv), cfg)
}

/// Steps 1 and 2 for target row `i` and tested columns `cols`.
pub fn fit_nuisance(spikes: &SpikeData, x: &Array2<f64>, i: usize, cols: &[usize], cfg: &InferenceConfig) -> Result<NuisanceFit> {
    check_inputs(spikes, x, i, cols)?;
    let row = fit_row(spikes, x, i, cfg)?;
    nuisance_from_row(row, cols, cfg)
}

/// Step 2 on top of an existing row fit.
pub fn nuisance_from_row(row: RowFit, cols: &[usize], cfg: &InferenceConfig) -> Result<NuisanceFit> {
    let w_hat = cols
        .iter()
        .map(|&j| fit_projection(&row, j, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceFit {
        row,
        target_cols: cols.to_vec(),
        w_hat,
    })
}

/// Nuisance fit with the true sparsity pattern known: unpenalized least
/// squares of `Y_i` on `(1, x_S)` with `S` the true support of row `i` plus
/// the tested columns, and of `ẑ_j` on `(1, ẑ_{S∖j})`. This is the fit the
/// oracle confidence region starts from.
pub fn oracle_nuisance(
    spikes: &SpikeData,
    x: &Array2<f64>,
    i: usize,
    cols: &[usize],
    support: &Array2<bool>,
    cfg: &InferenceConfig,
) -> Result<NuisanceFit> {
    oracle_fit(spikes, x, i, cols, support, cfg, false)
}

/// Oracle nuisance fit under `H0: β_iJ = 0`: the response regression uses
/// the true support with `J` removed, so `β̂_J = 0` and `μ̂` carries no
/// offset from the dropped columns. The projections are as in
/// [`oracle_nuisance`]. This is the fit the oracle score test uses.
pub fn oracle_null_nuisance(
    spikes: &SpikeData,
    x: &Array2<f64>,
    i: usize,
    cols: &[usize],
    support: &Array2<bool>,
    cfg: &InferenceConfig,
) -> Result<NuisanceFit> {
    oracle_fit(spikes, x, i, cols, support, cfg, true)
}

fn oracle_fit(
    spikes: &SpikeData,
    x: &Array2<f64>,
    i: usize,
    cols: &[usize],
    support: &Array2<bool>,
    cfg: &InferenceConfig,
    under_null: bool,
) -> Result<NuisanceFit> {
    cfg.validate()?;
    check_inputs(spikes, x, i, cols)?;
    let p = spikes.units();
    if support.dim() != (p, p) {
        return Err(Error::Dimension(format!("support is {:?}, expected ({p}, {p})", support.dim())));
    }
    let mut active: Vec<usize> = (0..p).filter(|&k| support[[i, k]] || cols.contains(&k)).collect();
    active.sort_unstable();
    let step1: Vec<usize> = active.iter().copied().filter(|k| !under_null || !cols.contains(k)).collect();
    let (mu, beta, _) = regress(spikes.response(i), x, &step1, Regression::LeastSquares, cfg)?;
    let row = finish_row(x, i, mu, beta, 0.0, cfg)?;
    let w_hat = cols
        .iter()
        .map(|&j| {
            let others: Vec<usize> = active.iter().copied().filter(|&k| k != j).collect();
            projection(&row, j, &others, Regression::LeastSquares, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceFit {
        row,
        target_cols: cols.to_vec(),
        w_hat,
    })
}

/// Scaled columns, de-correlated columns and the residual scale.
struct ScoreParts {
    z_j: Array2<f64>,
    z_star: Array2<f64>,
    sigma: Array1<f64>,
}

fn score_parts(fit: &NuisanceFit) -> ScoreParts {
    let row = &fit.row;
    let steps = row.z_hat.nrows();
    let d = fit.target_cols.len();
    let mut z_j = Array2::<f64>::zeros((steps, d));
    let mut z_star = Array2::<f64>::zeros((steps, d));
    for (a, w) in fit.w_hat.iter().enumerate() {
        let col = row.z_hat.column(w.col);
        let proj = row.z_hat.dot(&w.weights) + w.intercept;
        z_j.column_mut(a).assign(&col);
        z_star.column_mut(a).assign(&(&col - &proj));
    }
    ScoreParts {
        z_j,
        z_star,
        sigma: row.sigma2_hat.mapv(f64::sqrt),
    }
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn check_fit(fit: &NuisanceFit, spikes: &SpikeData, x: &Array2<f64>) -> Result<()> {
    check_inputs(spikes, x, fit.target_row(), &fit.target_cols)?;
    if fit.row.z_hat.dim() != x.dim() {
        return Err(Error::Dimension("nuisance fit does not match the design".into()));
    }
    if fit.w_hat.len() != fit.target_cols.len() {
        return Err(Error::Dimension("one projection per tested column is required".into()));
    }
    Ok(())
}

/// Factor `Υ̂`, adding the relative ridge jitter when it is not numerically
/// positive definite.
fn factor_upsilon(upsilon: &Array2<f64>) -> Result<(Cholesky, f64, Array2<f64>)> {
    let d = upsilon.nrows();
    let scale = upsilon.diag().sum() / d as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularUpsilon(format!(
            "score covariance has trace {:.3e}; the de-correlated column carries no variation",
            scale * d as f64
        )));
    }
    let min_pivot = MIN_PIVOT_REL * scale;
    if let Some(ch) = Cholesky::factor(upsilon, min_pivot) {
        return Ok((ch, 0.0, upsilon.clone()));
    }
    let jitter = RIDGE_JITTER * scale;
    let mut ridged = upsilon.clone();
    for k in 0..d {
        ridged[[k, k]] += jitter;
    }
    match Cholesky::factor(&ridged, min_pivot) {
        Some(ch) => Ok((ch, jitter, ridged)),
        None => Err(Error::SingularUpsilon(format!(
            "score covariance is singular even after ridge jitter {jitter:.3e}"
        ))),
    }
}

/// Steps 3 and 4: de-correlated score statistic and its χ²_d test.
pub fn score_test(fit: &NuisanceFit, spikes: &SpikeData, x: &Array2<f64>, alpha: f64) -> Result<ScoreTestResult> {
    check_fit(fit, spikes, x)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let row = &fit.row;
    let steps = spikes.steps();
    let n = steps as f64;
    let d = fit.dof();
    let parts = score_parts(fit);

    let mut beta_rest = row.beta_hat.clone();
    for &j in &fit.target_cols {
        beta_rest[j] = 0.0;
    }
    let eps = spikes.response(row.target_row) - row.mu_hat - x.dot(&beta_rest);
    let scaled = &eps / &parts.sigma;

    let s_hat = parts.z_star.t().dot(&scaled) / n;
    let upsilon = parts.z_star.t().dot(&parts.z_star) / n;
    debug_assert!((0..d).all(|a| (0..d).all(|b| (upsilon[[a, b]] - upsilon[[b, a]]).abs() <= 1e-12 * (1.0 + upsilon[[a, a]].abs()))));

    let (chol, jitter, used) = factor_upsilon(&upsilon)?;
    let u_hat = (n * chol.inv_quad_form(&s_hat)).max(0.0);
    let eig = linalg::symmetric_eigenvalues(&used);
    let condition_number = eig.last().unwrap() / eig[0];
    let critical_value = chi2_quantile(1.0 - alpha, d)?;

    Ok(ScoreTestResult {
        row: row.target_row,
        cols: fit.target_cols.clone(),
        s_hat: s_hat.to_vec(),
        upsilon_hat: to_rows(&upsilon),
        u_hat,
        dof: d,
        p_value: chi2_sf(u_hat, d)?,
        critical_value,
        reject: u_hat >= critical_value,
        alpha,
        diagnostics: ScoreDiagnostics {
            condition_number,
            ridge_jitter: jitter,
        },
    })
}

/// Score test with the nuisance regressions restricted to the true support.
pub fn oracle_score_test(
    spikes: &SpikeData,
    x: &Array2<f64>,
    i: usize,
    cols: &[usize],
    support: &Array2<bool>,
    cfg: &InferenceConfig,
    alpha: f64,
) -> Result<ScoreTestResult> {
    let fit = oracle_null_nuisance(spikes, x, i, cols, support, cfg)?;
    score_test(&fit, spikes, x, alpha)
}

/// One-step estimator `b̂_J = β̂_J + Υ̃_J⁻¹ S̃_J` and its χ²_d confidence region.
///
/// `S̃` is the normalized residual–column inner product built from the full
/// `β̂_i`; the correction is added, which removes the lasso's shrinkage to
/// first order (`S̃ ≈ Υ̃ (β − β̂)`).
pub fn one_step_ci(fit: &NuisanceFit, spikes: &SpikeData, x: &Array2<f64>, alpha: f64) -> Result<ConfidenceRegion> {
    check_fit(fit, spikes, x)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let row = &fit.row;
    let n = spikes.steps() as f64;
    let d = fit.dof();
    let parts = score_parts(fit);

    let resid = spikes.response(row.target_row) - row.mu_hat - x.dot(&row.beta_hat);
    let scaled = &resid / &parts.sigma;
    let s_tilde = parts.z_star.t().dot(&scaled) / n;
    let upsilon_tilde = parts.z_star.t().dot(&parts.z_j) / n;
    let upsilon = parts.z_star.t().dot(&parts.z_star) / n;

    let scale = upsilon_tilde.diag().iter().map(|v| v.abs()).sum::<f64>() / d as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularUpsilonTilde(format!(
            "one-step curvature vanishes (mean |diag| = {scale:.3e})"
        )));
    }
    let correction = linalg::lu_solve(&upsilon_tilde, &s_tilde, MIN_PIVOT_REL * scale)
        .ok_or_else(|| Error::SingularUpsilonTilde("one-step curvature matrix is singular".into()))?;

    let beta_j: Vec<f64> = fit.target_cols.iter().map(|&j| row.beta_hat[j]).collect();
    let b_hat: Vec<f64> = beta_j.iter().zip(correction.iter()).map(|(b, c)| b + c).collect();
    let critical_value = chi2_quantile(1.0 - alpha, d)?;
    let region_radius = critical_value / n;
    let interval = if d == 1 {
        let u = upsilon[[0, 0]];
        if !(u > 0.0) {
            return Err(Error::SingularUpsilon("score variance is zero".into()));
        }
        let half = (region_radius / u).sqrt();
        Some((b_hat[0] - half, b_hat[0] + half))
    } else {
        None
    };

    Ok(ConfidenceRegion {
        row: row.target_row,
        cols: fit.target_cols.clone(),
        b_hat,
        beta_hat: beta_j,
        s_tilde: s_tilde.to_vec(),
        upsilon_hat: to_rows(&upsilon),
        upsilon_tilde: to_rows(&upsilon_tilde),
        level: 1.0 - alpha,
        critical_value,
        steps: spikes.steps(),
        region_radius,
        interval,
    })
}
