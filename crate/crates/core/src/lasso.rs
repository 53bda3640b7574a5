//! Cyclic coordinate-descent Lasso.
//!
//! Minimizes `(1/n)||y - X b||^2 + lambda ||b||_1`. Used for the initial
//! estimators that feed the SCAD weights and as the plain Lasso baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    /// Candidate penalties, sorted descending. `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub n_folds: usize,
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
    pub seed: u64,
    /// Rescale columns to unit standard deviation before fitting; coefficients
    /// are always reported on the original scale.
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            lambda_grid: None,
            n_folds: 5,
            max_iter: 10_000,
            tol: 1e-7,
            seed: 0,
            standardize: false,
        }
    }
}

impl LassoConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be > 0"));
        }
        if self.n_folds < 2 {
            return Err(Error::invalid("n_folds", "must be >= 2"));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                return Err(Error::invalid("lambda_grid", "entries must be finite and >= 0"));
            }
            if grid.windows(2).any(|w| w[0] < w[1]) {
                return Err(Error::invalid("lambda_grid", "must be sorted descending"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: CoefficientVector,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep (on the scale the solver worked on).
    pub objective_history: Vec<f64>,
}

/// Smallest penalty at which the all-zero vector is optimal: `(2/n)||X^T y||_inf`.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows().max(1) as f64;
    (x.transpose() * y).amax() * 2.0 / n
}

/// 50 log-spaced values from `lambda_max` down to `0.001 * lambda_max`.
pub fn default_lambda_grid(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let top = lambda_max(x, y);
    let top = if top > 0.0 { top } else { 1e-12 };
    log_spaced(top, top * 1e-3, 50)
}

/// `len` log-spaced values from `hi` down to `lo` (both included).
pub fn log_spaced(hi: f64, lo: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (hi.ln(), lo.ln());
            (0..len)
                .map(|i| (a + (b - a) * i as f64 / (len - 1) as f64).exp())
                .collect()
        }
    }
}

fn column_scales(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn objective(resid: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    resid.norm_squared() / resid.len().max(1) as f64 + lambda * b.abs().sum()
}

/// Coordinate descent from `start`. `x` is already on the working scale.
fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    start: DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> (DVector<f64>, usize, bool, Vec<f64>) {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut b = start;
    let mut resid = y - x * &b;
    let curv: Vec<f64> = x.column_iter().map(|c| 2.0 * c.norm_squared() / n).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            if curv[j] == 0.0 {
                if b[j] != 0.0 {
                    max_change = max_change.max(b[j].abs());
                    b[j] = 0.0;
                }
                continue;
            }
            let col = x.column(j);
            let old = b[j];
            let rho = 2.0 * col.dot(&resid) / n + curv[j] * old;
            let new = soft_threshold(rho, lambda) / curv[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                b[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        history.push(objective(&resid, &b, lambda));
        if max_change <= tol {
            converged = true;
            break;
        }
    }
    (b, sweeps, converged, history)
}

fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

struct Scaled {
    x: DMatrix<f64>,
    scales: Option<Vec<f64>>,
}

fn working_design(x: &DMatrix<f64>, standardize: bool) -> Scaled {
    if !standardize {
        return Scaled {
            x: x.clone(),
            scales: None,
        };
    }
    let scales = column_scales(x);
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).unscale_mut(*s);
    }
    Scaled {
        x: xs,
        scales: Some(scales),
    }
}

fn to_original_scale(mut b: DVector<f64>, scales: &Option<Vec<f64>>) -> DVector<f64> {
    if let Some(s) = scales {
        for (bj, sj) in b.iter_mut().zip(s) {
            *bj /= sj;
        }
    }
    b
}

/// Fits the Lasso at a single penalty. `lambda = 0` gives least squares
/// when the design has full column rank.
pub fn lasso_fit(ds: &Dataset, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(
            "lambda",
            format!("must be finite and >= 0, got {lambda}"),
        ));
    }
    cfg.validate()?;
    let scaled = working_design(&ds.design, cfg.standardize);
    let (b, sweeps, converged, objective_history) = coordinate_descent(
        &scaled.x,
        &ds.response,
        lambda,
        DVector::zeros(ds.d()),
        cfg.max_iter,
        cfg.tol,
    );
    Ok(LassoFit {
        coefficients: CoefficientVector::new(to_original_scale(b, &scaled.scales), ds.domain),
        sweeps,
        converged,
        objective_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoCvFit {
    pub fit: LassoFit,
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out squared error per grid value.
    pub cv_error: Vec<f64>,
}

/// Deterministic fold label for every row.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % n_folds;
    }
    folds
}

/// k-fold cross-validated Lasso. Returns the full-data fit at the penalty
/// with the smallest mean held-out squared error (ties go to the larger penalty).
pub fn lasso_cv(ds: &Dataset, cfg: &LassoConfig) -> Result<LassoCvFit> {
    cfg.validate()?;
    let n = ds.n();
    if n < cfg.n_folds {
        return Err(Error::invalid(
            "n_folds",
            format!("{} folds requested but only {n} rows", cfg.n_folds),
        ));
    }
    let scaled = working_design(&ds.design, cfg.standardize);
    let grid = match &cfg.lambda_grid {
        Some(g) if g.is_empty() => return Err(Error::invalid("lambda_grid", "grid is empty")),
        Some(g) => g.clone(),
        None => default_lambda_grid(&scaled.x, &ds.response),
    };

    let folds = fold_assignment(n, cfg.n_folds, cfg.seed);
    let mut cv_error = vec![0.0; grid.len()];
    for k in 0..cfg.n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
        let xtr = scaled.x.select_rows(train.iter());
        let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| ds.response[i]));
        let xte = scaled.x.select_rows(test.iter());
        let yte = DVector::from_iterator(test.len(), test.iter().map(|&i| ds.response[i]));
        let mut b = DVector::zeros(ds.d());
        for (g, &lambda) in grid.iter().enumerate() {
            b = coordinate_descent(&xtr, &ytr, lambda, b, cfg.max_iter, cfg.tol).0;
            let err = (&yte - &xte * &b).norm_squared() / test.len() as f64;
            cv_error[g] += err / cfg.n_folds as f64;
        }
    }

    let best = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (g, e)| if *e < cv_error[best] { g } else { best });

    // Walk the path down to the chosen penalty for warm starts.
    let mut b = DVector::zeros(ds.d());
    let mut last = None;
    for &lambda in &grid[..=best] {
        let out = coordinate_descent(&scaled.x, &ds.response, lambda, b, cfg.max_iter, cfg.tol);
        b = out.0.clone();
        last = Some(out);
    }
    let (b, sweeps, converged, objective_history) = last.expect("grid is nonempty");
    Ok(LassoCvFit {
        fit: LassoFit {
            coefficients: CoefficientVector::new(to_original_scale(b, &scaled.scales), ds.domain),
            sweeps,
            converged,
            objective_history,
        },
        lambda: grid[best],
        grid,
        cv_error,
    })
}
