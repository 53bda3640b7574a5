//! BIC tuning of `(lambda0, lambda1)`, fused degrees of freedom, and the
//! SSE / MSE evaluation metrics.

use nalgebra::DVector;

use crate::admm::{admm_solve, build_factored_system, AdmmOptions, AdmmState, FactoredSystem, PooledSystem};
use crate::error::{Error, Result};
use crate::lasso::{lasso_cv, log_spaced, LassoConfig, LassoCvFit};
use crate::model::{CoefficientVector, Dataset};
use crate::scad::{scad_weight_scheme, DEFAULT_SCAD_A};

pub const DEFAULT_EPS_FUSE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub lambda0_grid: Vec<f64>,
    pub lambda1_grid: Vec<f64>,
    pub eps_fuse: f64,
}

impl TuningGrid {
    /// Ten log-spaced values in `[0.3, 3] * sqrt(max(ln d_t, 1) / n_t)` for both penalties.
    pub fn default_for(d_t: usize, n_t: usize) -> Self {
        let scale = default_grid_scale(d_t, n_t);
        let grid = log_spaced(3.0 * scale, 0.3 * scale, 10);
        TuningGrid {
            lambda0_grid: grid.clone(),
            lambda1_grid: grid,
            eps_fuse: DEFAULT_EPS_FUSE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [
            ("lambda0_grid", &self.lambda0_grid),
            ("lambda1_grid", &self.lambda1_grid),
        ] {
            if grid.is_empty() {
                return Err(Error::invalid(name, "grid is empty"));
            }
            if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                return Err(Error::invalid(name, "entries must be finite and > 0"));
            }
            if grid.windows(2).any(|w| w[0] < w[1]) {
                return Err(Error::invalid(name, "must be sorted descending"));
            }
        }
        if !(self.eps_fuse >= 0.0) {
            return Err(Error::invalid("eps_fuse", "must be >= 0"));
        }
        Ok(())
    }
}

/// ADMM penalty parameters `(min(1, 10/d), min(1, 3/d))` with `d = max(d_t, d_s)`.
///
/// The fusion block of the linear system grows like `rho1 * d`, so a fixed
/// `rho1` swamps the loss curvature in high dimensions and slows convergence.
/// For `d <= 3` both are 1. The choice affects speed only, not the minimizer.
pub fn default_rho(d_t: usize, d_s: usize) -> (f64, f64) {
    let d = d_t.max(d_s).max(1) as f64;
    ((10.0 / d).min(1.0), (3.0 / d).min(1.0))
}

/// `sqrt(max(ln d_t, 1) / n_t)`.
pub fn default_grid_scale(d_t: usize, n_t: usize) -> f64 {
    ((d_t as f64).ln().max(1.0) / n_t.max(1) as f64).sqrt()
}

/// Number of distinct nonzero values in `eta`.
///
/// Sorted values are chained into clusters whenever consecutive gaps are at
/// most `eps_fuse`; a cluster whose member closest to zero lies within
/// `eps_fuse` of zero counts as the zero cluster and contributes nothing.
pub fn degrees_of_freedom(eta: &[f64], eps_fuse: f64) -> usize {
    let mut sorted: Vec<f64> = eta.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut df = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut closest = sorted[i].abs();
        let mut k = i + 1;
        while k < sorted.len() && sorted[k] - sorted[k - 1] <= eps_fuse {
            closest = closest.min(sorted[k].abs());
            k += 1;
        }
        if closest > eps_fuse {
            df += 1;
        }
        i = k;
    }
    df
}

/// Stacks `beta` over `theta`.
pub fn stack(beta: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
    beta.iter().chain(theta.iter()).copied().collect()
}

/// `(N/2)[ln((1/n_t) RSS_t) + ln((1/n_s) RSS_s)] + df ln N` with `N = n_t + n_s`.
pub fn bic(ps: &PooledSystem, beta: &DVector<f64>, theta: &DVector<f64>, eps_fuse: f64) -> Result<f64> {
    let (mse_t, mse_s) = ps.mean_squared_residuals(beta, theta);
    let df = degrees_of_freedom(&stack(beta, theta), eps_fuse);
    bic_from_parts(mse_t, mse_s, df, ps.n_t() + ps.n_s())
}

pub fn bic_from_parts(mse_t: f64, mse_s: f64, df: usize, n_total: usize) -> Result<f64> {
    if !(mse_t > 0.0) {
        return Err(Error::ZeroResidual("target"));
    }
    if !(mse_s > 0.0) {
        return Err(Error::ZeroResidual("source"));
    }
    let n = n_total as f64;
    Ok(n / 2.0 * (mse_t.ln() + mse_s.ln()) + df as f64 * n.ln())
}

/// `||beta_hat - beta_true||^2`.
pub fn sse(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {} but truth has length {}",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    Ok((beta_hat - beta_true).norm_squared())
}

/// Mean squared prediction error on a held-out set.
pub fn mse(beta_hat: &DVector<f64>, test: &Dataset) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::invalid("test", "test set is empty"));
    }
    if test.d() != beta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "test design has {} columns but estimate has length {}",
            test.d(),
            beta_hat.len()
        )));
    }
    Ok((&test.response - &test.design * beta_hat).norm_squared() / test.n() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sse: f64,
    pub mse: f64,
    pub method_tag: String,
    pub replicate_id: usize,
}

#[derive(Debug, Clone)]
pub struct CstlConfig {
    /// `None` picks [`TuningGrid::default_for`] from the target dimensions.
    pub grid: Option<TuningGrid>,
    pub eps_fuse: f64,
    /// `None` picks [`default_rho`] from the dimensions.
    pub rho0: Option<f64>,
    pub rho1: Option<f64>,
    pub scad_a: f64,
    /// `None` picks [`AdmmOptions::for_dims`].
    pub admm: Option<AdmmOptions>,
    pub lasso: LassoConfig,
}

impl Default for CstlConfig {
    fn default() -> Self {
        CstlConfig {
            grid: None,
            eps_fuse: DEFAULT_EPS_FUSE,
            rho0: None,
            rho1: None,
            scad_a: DEFAULT_SCAD_A,
            admm: None,
            lasso: LassoConfig::default(),
        }
    }
}

impl CstlConfig {
    pub fn resolved_grid(&self, d_t: usize, n_t: usize) -> TuningGrid {
        let mut grid = self.grid.clone().unwrap_or_else(|| TuningGrid::default_for(d_t, n_t));
        grid.eps_fuse = self.eps_fuse;
        grid
    }

    pub fn resolved_rho(&self, d_t: usize, d_s: usize) -> (f64, f64) {
        let (r0, r1) = default_rho(d_t, d_s);
        (self.rho0.unwrap_or(r0), self.rho1.unwrap_or(r1))
    }

    pub fn resolved_admm(&self, d_t: usize, d_s: usize) -> AdmmOptions {
        self.admm.unwrap_or_else(|| AdmmOptions::for_dims(d_t, d_s))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: CoefficientVector,
    pub theta: CoefficientVector,
    pub lambda0: f64,
    pub lambda1: f64,
    pub bic: f64,
    pub df: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One cell of the BIC surface.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub lambda0: f64,
    pub lambda1: f64,
    /// `None` when the BIC is undefined at this point.
    pub bic: Option<f64>,
    pub df: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CstlFit {
    pub best: FitResult,
    /// Every grid point, ordered by `lambda0` then `lambda1`, both descending.
    pub surface: Vec<GridPoint>,
    pub beta_init: CoefficientVector,
    pub theta_init: CoefficientVector,
}

/// Separate cross-validated Lasso fits on target and source.
pub fn initial_estimates(target: &Dataset, source: &Dataset, lasso: &LassoConfig) -> Result<(LassoCvFit, LassoCvFit)> {
    Ok((lasso_cv(target, lasso)?, lasso_cv(source, lasso)?))
}

/// Full procedure: Lasso initial estimates, then SCAD weights, ADMM and BIC
/// over the grid.
pub fn grid_search_cstl(target: &Dataset, source: &Dataset, cfg: &CstlConfig) -> Result<CstlFit> {
    let (bt, st) = initial_estimates(target, source, &cfg.lasso)?;
    let ps = PooledSystem::new(target, source)?;
    let (rho0, rho1) = cfg.resolved_rho(ps.d_t(), ps.d_s());
    let fs = build_factored_system(&ps, rho0, rho1)?;
    grid_search_with_init(&ps, &fs, &bt.fit.coefficients, &st.fit.coefficients, cfg)
}

fn better(candidate: &FitResult, incumbent: &FitResult) -> bool {
    if candidate.bic != incumbent.bic {
        return candidate.bic < incumbent.bic;
    }
    // Ties go to the sparser model.
    (candidate.lambda0, candidate.lambda1) > (incumbent.lambda0, incumbent.lambda1)
}

/// Grid search from given initial estimates. Grid points are visited in a
/// serpentine order so each solve warm-starts from a neighbouring point.
pub fn grid_search_with_init(
    ps: &PooledSystem,
    fs: &FactoredSystem,
    beta_init: &CoefficientVector,
    theta_init: &CoefficientVector,
    cfg: &CstlConfig,
) -> Result<CstlFit> {
    if beta_init.len() != ps.d_t() || theta_init.len() != ps.d_s() {
        return Err(Error::DimensionMismatch(
            "initial estimates do not match the data dimensions".into(),
        ));
    }
    let grid = cfg.resolved_grid(ps.d_t(), ps.n_t());
    grid.validate()?;
    let opts = cfg.resolved_admm(ps.d_t(), ps.d_s());
    let n_total = ps.n_t() + ps.n_s();

    let (g0, g1) = (&grid.lambda0_grid, &grid.lambda1_grid);
    let mut surface: Vec<Option<GridPoint>> = vec![None; g0.len() * g1.len()];
    let mut best: Option<FitResult> = None;
    let mut first_error: Option<Error> = None;
    let mut state = AdmmState::from_initial(beta_init, theta_init);

    for (a, &lambda0) in g0.iter().enumerate() {
        let order: Box<dyn Iterator<Item = usize>> = if a % 2 == 0 {
            Box::new(0..g1.len())
        } else {
            Box::new((0..g1.len()).rev())
        };
        for b in order {
            let lambda1 = g1[b];
            let ws = scad_weight_scheme(beta_init, theta_init, lambda0, lambda1, cfg.scad_a)?;
            let out = admm_solve(ps, fs, &ws, lambda0, lambda1, &opts, Some(&state))?;
            let (mse_t, mse_s) = ps.mean_squared_residuals(&out.beta.values, &out.theta.values);
            let df = degrees_of_freedom(&stack(&out.beta.values, &out.theta.values), grid.eps_fuse);
            let score = bic_from_parts(mse_t, mse_s, df, n_total);
            surface[a * g1.len() + b] = Some(GridPoint {
                lambda0,
                lambda1,
                bic: score.as_ref().ok().copied(),
                df,
                objective: out.objective,
                iterations: out.iterations,
                converged: out.converged,
            });
            match score {
                Ok(bic) => {
                    let fit = FitResult {
                        beta: out.beta,
                        theta: out.theta,
                        lambda0,
                        lambda1,
                        bic,
                        df,
                        objective: out.objective,
                        iterations: out.iterations,
                        converged: out.converged,
                    };
                    if best.as_ref().is_none_or(|inc| better(&fit, inc)) {
                        best = Some(fit);
                    }
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
            state = out.state;
        }
    }

    let surface: Vec<GridPoint> = surface.into_iter().map(|p| p.expect("every cell visited")).collect();
    match best {
        Some(best) => Ok(CstlFit {
            best,
            surface,
            beta_init: beta_init.clone(),
            theta_init: theta_init.clone(),
        }),
        None => Err(Error::AllGridPointsFailed {
            first: first_error.map(|e| e.to_string()).unwrap_or_default(),
            count: surface.len(),
        }),
    }
}
