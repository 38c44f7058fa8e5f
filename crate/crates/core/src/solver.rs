//! Penalized least squares by cyclic coordinate descent, with chronological
//! cross-validation for the penalty level.
//!
//! The objective is
//!
//! ```text
//! (1/T) Σ_t (y_t − d_tᵀ b)² + λ Σ_{k penalized} |b_k|
//! ```
//!
//! Updates run on the Gram system `(DᵀD, Dᵀy, yᵀy)`, so one sweep costs
//! `O(q²)` regardless of `T` and cross-validation folds reuse block Grams.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for the returned KKT certificate.
pub const KKT_TOL: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Number of automatically generated penalty levels.
pub const GRID_SIZE: usize = 50;
/// Smallest automatic penalty as a fraction of `λ_max`.
pub const GRID_RATIO: f64 = 1e-3;

/// `sign(a) · max(|a| − λ, 0)`.
#[inline]
pub fn soft_threshold(a: f64, lambda: f64) -> f64 {
    if a > lambda {
        a - lambda
    } else if a < -lambda {
        a + lambda
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub response: Array1<f64>,
    pub design: Array2<f64>,
    pub penalized_mask: Vec<bool>,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl LassoProblem {
    pub fn new(response: Array1<f64>, design: Array2<f64>, penalized_mask: Vec<bool>) -> Result<Self> {
        let p = Self {
            response,
            design,
            penalized_mask,
            lambda: 0.0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unpenalized intercept in column 0 followed by the penalized columns of `x`.
    pub fn with_intercept(response: Array1<f64>, x: ArrayView2<f64>) -> Result<Self> {
        let (n, q) = x.dim();
        let mut design = Array2::<f64>::ones((n, q + 1));
        design.slice_mut(s![.., 1..]).assign(&x);
        let mut mask = vec![true; q + 1];
        mask[0] = false;
        Self::new(response, design, mask)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q) = self.design.dim();
        if self.response.len() != n {
            return Err(Error::Dimension(format!(
                "response has {} rows, design has {n}",
                self.response.len()
            )));
        }
        if self.penalized_mask.len() != q {
            return Err(Error::Dimension(format!(
                "penalized mask has {} entries, design has {q} columns",
                self.penalized_mask.len()
            )));
        }
        if n == 0 {
            return Err(Error::Dimension("lasso problem has no rows".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("tol must be > 0 and max_iter >= 1".into()));
        }
        if self.design.iter().chain(self.response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("lasso data contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn cols(&self) -> usize {
        self.design.ncols()
    }

    /// Unpenalized column of exact ones, if present.
    fn intercept_col(&self) -> Option<usize> {
        (0..self.cols()).find(|&k| {
            !self.penalized_mask[k] && self.design.column(k).iter().all(|&v| v == 1.0)
        })
    }

    /// `(1/T)‖y − D b‖² + λ‖b_pen‖₁` evaluated directly from residuals.
    pub fn objective(&self, coefficients: &Array1<f64>) -> f64 {
        let resid = &self.response - &self.design.dot(coefficients);
        let n = self.rows() as f64;
        resid.dot(&resid) / n + self.lambda * self.penalty_norm(coefficients)
    }

    fn penalty_norm(&self, b: &Array1<f64>) -> f64 {
        b.iter()
            .zip(&self.penalized_mask)
            .filter(|(_, &pen)| pen)
            .map(|(v, _)| v.abs())
            .sum()
    }

    /// Largest KKT violation of `coefficients`, from residuals.
    pub fn kkt_violation(&self, coefficients: &Array1<f64>) -> f64 {
        let resid = &self.response - &self.design.dot(coefficients);
        let grad = self.design.t().dot(&resid) * (2.0 / self.rows() as f64);
        kkt_from_gradient(&grad, coefficients, &self.penalized_mask, self.lambda, None)
    }

    /// Smallest λ at which every penalized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let gram = Gram::from_rows(self, 0, self.rows());
        let fixed = degenerate_columns(&gram, self.intercept_col());
        lambda_max_from_gram(&gram, &self.penalized_mask, &fixed, self.tol, self.max_iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LassoFit {
    pub coefficients: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_used: f64,
    pub cv_table: Option<Vec<CvPoint>>,
}

/// Rolling-origin validation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqCVSpec {
    pub n_folds: usize,
    /// Descending penalty levels; generated from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    pub min_train_frac: f64,
}

impl Default for SeqCVSpec {
    fn default() -> Self {
        Self {
            n_folds: 5,
            lambda_grid: None,
            min_train_frac: 0.5,
        }
    }
}

impl SeqCVSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidParameter("n_folds must be >= 2".into()));
        }
        if !(self.min_train_frac > 0.0 && self.min_train_frac < 1.0) {
            return Err(Error::InvalidParameter("min_train_frac must lie in (0, 1)".into()));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::InvalidParameter("lambda grid must be positive and nonempty".into()));
            }
            if grid.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(Error::InvalidParameter("lambda grid must be strictly descending".into()));
            }
        }
        Ok(())
    }

    /// Validation block boundaries `[t_1, …, t_K, T]`: fold `k` trains on
    /// rows `[0, t_k)` and validates on `[t_k, t_{k+1})`.
    pub fn fold_boundaries(&self, rows: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let first = (self.min_train_frac * rows as f64).floor() as usize;
        if first == 0 {
            return Err(Error::EmptyFold(format!("first training fold is empty (T = {rows})")));
        }
        let span = (rows - first) / self.n_folds;
        if span == 0 {
            return Err(Error::EmptyFold(format!(
                "{} validation folds do not fit in {} rows",
                self.n_folds,
                rows - first
            )));
        }
        let mut b: Vec<usize> = (0..self.n_folds).map(|k| first + k * span).collect();
        b.push(rows);
        Ok(b)
    }
}

/// `n` log-spaced values from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if !(lambda_max > 0.0) {
        return vec![0.0];
    }
    if n == 1 {
        return vec![lambda_max];
    }
    let lo = (lambda_max * ratio).ln();
    let hi = lambda_max.ln();
    (0..n)
        .map(|k| (hi + (lo - hi) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Rowwise scaling `z_j(t) = x_j(t) / σ(t)`.
pub fn scale_design(x: ArrayView2<f64>, sigma: &Array1<f64>) -> Result<Array2<f64>> {
    if x.nrows() != sigma.len() {
        return Err(Error::Dimension(format!(
            "sigma has {} entries, design has {} rows",
            sigma.len(),
            x.nrows()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidParameter(format!("nonpositive scale {s}")));
    }
    let mut z = x.to_owned();
    for (mut row, s) in z.rows_mut().into_iter().zip(sigma) {
        row.mapv_inplace(|v| v / s);
    }
    Ok(z)
}

pub fn fit_lasso(problem: &LassoProblem) -> Result<LassoFit> {
    problem.validate()?;
    let gram = Gram::from_rows(problem, 0, problem.rows());
    let fixed = degenerate_columns(&gram, problem.intercept_col());
    let mut b = Array1::<f64>::zeros(problem.cols());
    let (iterations, converged) = coordinate_descent(
        &gram,
        &problem.penalized_mask,
        &fixed,
        problem.lambda,
        &mut b,
        problem.tol,
        problem.max_iter,
    );
    Ok(LassoFit {
        objective: problem.objective(&b),
        coefficients: b,
        iterations,
        converged,
        lambda_used: problem.lambda,
        cv_table: None,
    })
}

/// Rolling-origin cross-validation over the penalty grid. The problem's own
/// `lambda` is ignored. Returns the selected λ and the mean validation MSE
/// per grid value; ties go to the larger λ.
pub fn sequential_cv(problem: &LassoProblem, spec: &SeqCVSpec) -> Result<(f64, Vec<CvPoint>)> {
    problem.validate()?;
    let bounds = spec.fold_boundaries(problem.rows())?;
    let intercept = problem.intercept_col();
    let grid = match &spec.lambda_grid {
        Some(g) => g.clone(),
        None => lambda_grid(problem.lambda_max(), GRID_SIZE, GRID_RATIO),
    };

    let mut block_grams = Vec::with_capacity(bounds.len());
    let mut start = 0;
    for &end in &bounds {
        block_grams.push(Gram::from_rows(problem, start, end));
        start = end;
    }

    let q = problem.cols();
    let mut mse_sum = vec![0.0; grid.len()];
    let mut train = Gram::zeros(q);
    for k in 0..spec.n_folds {
        train.add(&block_grams[k]);
        let valid = &block_grams[k + 1];
        let fixed = degenerate_columns(&train, intercept);
        let mut b = Array1::<f64>::zeros(q);
        for (g, &lambda) in grid.iter().enumerate() {
            coordinate_descent(
                &train,
                &problem.penalized_mask,
                &fixed,
                lambda,
                &mut b,
                problem.tol,
                problem.max_iter,
            );
            mse_sum[g] += valid.mse(&b);
        }
    }

    let table: Vec<CvPoint> = grid
        .iter()
        .zip(&mse_sum)
        .map(|(&lambda, &s)| CvPoint {
            lambda,
            validation_mse: s / spec.n_folds as f64,
        })
        .collect();
    let mut best = 0;
    for (g, pt) in table.iter().enumerate().skip(1) {
        let cur = table[best].validation_mse;
        if pt.validation_mse < cur - 1e-12 * cur.abs() {
            best = g;
        }
    }
    Ok((table[best].lambda, table))
}

/// Cross-validate λ, then refit on all rows.
pub fn fit_lasso_cv(problem: &LassoProblem, spec: &SeqCVSpec) -> Result<LassoFit> {
    let (best, table) = sequential_cv(problem, spec)?;
    let refit = problem.clone().with_lambda(best);
    let mut fit = fit_lasso(&refit)?;
    fit.cv_table = Some(table);
    Ok(fit)
}

/// Sufficient statistics of a row block.
#[derive(Debug, Clone)]
struct Gram {
    g: Array2<f64>,
    c: Array1<f64>,
    yty: f64,
    n: usize,
}

impl Gram {
    fn zeros(q: usize) -> Self {
        Self {
            g: Array2::zeros((q, q)),
            c: Array1::zeros(q),
            yty: 0.0,
            n: 0,
        }
    }

    fn from_rows(problem: &LassoProblem, start: usize, end: usize) -> Self {
        let d = problem.design.slice(s![start..end, ..]);
        let y = problem.response.slice(s![start..end]);
        Self {
            g: d.t().dot(&d),
            c: d.t().dot(&y),
            yty: y.dot(&y),
            n: end - start,
        }
    }

    fn add(&mut self, other: &Gram) {
        self.g += &other.g;
        self.c += &other.c;
        self.yty += other.yty;
        self.n += other.n;
    }

    fn rss(&self, b: &Array1<f64>) -> f64 {
        (self.yty - 2.0 * b.dot(&self.c) + b.dot(&self.g.dot(b))).max(0.0)
    }

    fn mse(&self, b: &Array1<f64>) -> f64 {
        self.rss(b) / self.n as f64
    }

    #[cfg(debug_assertions)]
    fn objective(&self, b: &Array1<f64>, mask: &[bool], lambda: f64) -> f64 {
        let pen: f64 = b.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.abs()).sum();
        self.mse(b) + lambda * pen
    }

    fn gradient(&self, b: &Array1<f64>) -> Array1<f64> {
        (&self.c - &self.g.dot(b)) * (2.0 / self.n as f64)
    }
}

/// Columns pinned at zero: empty columns, and penalized columns that are
/// constant and therefore duplicate the intercept.
fn degenerate_columns(gram: &Gram, intercept: Option<usize>) -> Vec<bool> {
    let q = gram.c.len();
    let n = gram.n as f64;
    (0..q)
        .map(|k| {
            let gkk = gram.g[[k, k]];
            if !(gkk > 1e-300) {
                return true;
            }
            match intercept {
                Some(c0) if c0 != k && n > 0.0 => {
                    let centered = gkk - gram.g[[k, c0]] * gram.g[[k, c0]] / n;
                    centered <= 1e-10 * gkk
                }
                _ => false,
            }
        })
        .collect()
}

fn kkt_from_gradient(grad: &Array1<f64>, b: &Array1<f64>, mask: &[bool], lambda: f64, fixed: Option<&[bool]>) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..b.len() {
        if fixed.is_some_and(|f| f[k]) {
            continue;
        }
        let v = if !mask[k] {
            grad[k].abs()
        } else if b[k] == 0.0 {
            (grad[k].abs() - lambda).max(0.0)
        } else {
            (grad[k] - lambda * b[k].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn lambda_max_from_gram(gram: &Gram, mask: &[bool], fixed: &[bool], tol: f64, max_iter: usize) -> f64 {
    let q = gram.c.len();
    // Fit the unpenalized coordinates alone.
    let only_free: Vec<bool> = (0..q).map(|k| fixed[k] || mask[k]).collect();
    let mut b = Array1::<f64>::zeros(q);
    coordinate_descent(gram, mask, &only_free, 0.0, &mut b, tol, max_iter);
    let grad = gram.gradient(&b);
    (0..q)
        .filter(|&k| mask[k] && !fixed[k])
        .map(|k| grad[k].abs())
        .fold(0.0, f64::max)
}

/// Cyclic coordinate descent from the warm start in `b`. Returns
/// `(sweeps, converged)`; convergence needs both a small coefficient change
/// and a valid KKT certificate.
fn coordinate_descent(
    gram: &Gram,
    mask: &[bool],
    fixed: &[bool],
    lambda: f64,
    b: &mut Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> (usize, bool) {
    let q = b.len();
    let n = gram.n as f64;
    let threshold = lambda * n / 2.0;
    for k in 0..q {
        if fixed[k] {
            b[k] = 0.0;
        }
    }
    #[cfg(debug_assertions)]
    let mut last_obj = gram.objective(b, mask, lambda);

    for sweep in 1..=max_iter {
        let mut gb = gram.g.dot(&*b);
        let mut max_delta: f64 = 0.0;
        for k in 0..q {
            if fixed[k] {
                continue;
            }
            let gkk = gram.g[[k, k]];
            let rho = gram.c[k] - gb[k] + gkk * b[k];
            let new = if mask[k] {
                soft_threshold(rho, threshold) / gkk
            } else {
                rho / gkk
            };
            let delta = new - b[k];
            if delta != 0.0 {
                for l in 0..q {
                    gb[l] += delta * gram.g[[l, k]];
                }
                b[k] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }

        #[cfg(debug_assertions)]
        {
            let obj = gram.objective(b, mask, lambda);
            debug_assert!(
                obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()),
                "objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }

        if max_delta < tol {
            let grad = gram.gradient(b);
            if kkt_from_gradient(&grad, b, mask, lambda, Some(fixed)) <= KKT_TOL {
                return (sweep, true);
            }
        }
    }
    (max_iter, false)
}
