//! Simulation designs and replicated method comparisons.
//!
//! Settings 1 to 4 are the high-dimensional designs with AR(1) covariates;
//! `Ex1` and `Ex2` are the three-variable examples with identity covariance.
//! Replicate `r` draws everything from a ChaCha8 generator seeded with the
//! study seed on stream `r`, so replicates are independent and a run is
//! reproducible bit for bit.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;

use crate::admm::{build_factored_system, PooledSystem};
use crate::error::{Error, Result};
use crate::io::{ResultRow, ResultsTable};
use crate::lasso::lasso_cv;
use crate::model::{build_transfer_structure, CoefficientVector, Dataset, Domain, TransferStructure};
use crate::oracle::{oracle_fit, OracleFit};
use crate::tuning::{grid_search_with_init, mse, sse, CstlConfig, FitResult};

pub const AR1_RHO: f64 = 0.5;
pub const TEST_ROWS: usize = 100;
/// Fraction of failed replicates at which a run is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    S1,
    S2,
    S3NoPerm,
    S3Perm,
    S4,
    Ex1,
    Ex2,
}

impl Setting {
    pub const ALL: [Setting; 7] = [
        Setting::S1,
        Setting::S2,
        Setting::S3NoPerm,
        Setting::S3Perm,
        Setting::S4,
        Setting::Ex1,
        Setting::Ex2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::S1 => "S1",
            Setting::S2 => "S2",
            Setting::S3NoPerm => "S3_noperm",
            Setting::S3Perm => "S3_perm",
            Setting::S4 => "S4",
            Setting::Ex1 => "EX1",
            Setting::Ex2 => "EX2",
        }
    }

    fn is_example(self) -> bool {
        matches!(self, Setting::Ex1 | Setting::Ex2)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                Error::invalid(
                    "setting",
                    format!("unknown setting `{s}`; expected one of S1, S2, S3_noperm, S3_perm, S4, EX1, EX2"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub setting: Setting,
    pub n_t: usize,
    pub n_s: usize,
    pub d_t: usize,
    pub d_s: usize,
    pub m_overlap: usize,
    pub h: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl ScenarioSpec {
    /// d = 100, n_t = 100, n_s = 200, 20 replicates; the examples use d = 3.
    pub fn desk(setting: Setting) -> Self {
        let d = if setting.is_example() { 3 } else { 100 };
        ScenarioSpec {
            setting,
            n_t: 100,
            n_s: 200,
            d_t: d,
            d_s: d,
            m_overlap: 0,
            h: 0.0,
            seed: 1,
            replicates: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_s == 0 {
            return Err(Error::invalid("n_t/n_s", "sample sizes must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", "must be at least 1"));
        }
        let same_dims = |min: usize| -> Result<()> {
            if self.d_t != self.d_s {
                return Err(Error::invalid(
                    "d_s",
                    format!("{} requires d_t = d_s, got {} and {}", self.setting, self.d_t, self.d_s),
                ));
            }
            if self.d_t < min {
                return Err(Error::invalid("d_t", format!("{} requires d_t >= {min}", self.setting)));
            }
            Ok(())
        };
        match self.setting {
            Setting::S1 | Setting::S2 => {
                let support = if self.setting == Setting::S1 { 30 } else { 8 };
                same_dims(support)?;
                if self.m_overlap > support || self.m_overlap > self.d_t - support {
                    return Err(Error::invalid(
                        "m",
                        format!(
                            "m = {} exceeds the support size {support} or the null size {}",
                            self.m_overlap,
                            self.d_t - support
                        ),
                    ));
                }
            }
            Setting::S3NoPerm | Setting::S3Perm => {
                same_dims(8)?;
                if !(self.h >= 0.0) || !self.h.is_finite() {
                    return Err(Error::invalid("h", "must be finite and >= 0"));
                }
            }
            Setting::S4 => {
                if self.d_t < 8 || self.d_s < 8 {
                    return Err(Error::invalid("d_t/d_s", "S4 requires both dimensions >= 8"));
                }
            }
            Setting::Ex1 | Setting::Ex2 => {
                if self.d_t != 3 || self.d_s != 3 {
                    return Err(Error::invalid("d_t/d_s", format!("{} has d_t = d_s = 3", self.setting)));
                }
            }
        }
        Ok(())
    }

    /// Parameters that are legal but outside the ranges studied in the paper designs.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if matches!(self.setting, Setting::S1 | Setting::S2) && self.m_overlap > 4 {
            out.push(format!("m = {} is outside the studied range 0..=4", self.m_overlap));
        }
        if matches!(self.setting, Setting::S3NoPerm | Setting::S3Perm) && self.h > 0.5 {
            out.push(format!("h = {} is outside the studied range [0, 0.5]", self.h));
        }
        out
    }

    /// Whether the true coefficients are the same on every replicate.
    pub fn fixed_truth(&self) -> bool {
        match self.setting {
            Setting::Ex1 | Setting::Ex2 => true,
            Setting::S1 | Setting::S2 => self.m_overlap == 0,
            Setting::S3NoPerm => self.h == 0.0,
            Setting::S3Perm | Setting::S4 => false,
        }
    }

    pub fn replicate_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub beta_true: CoefficientVector,
    pub theta_true: CoefficientVector,
    pub target: Dataset,
    pub source: Dataset,
    pub test: Dataset,
    pub structure: TransferStructure,
    /// Seed for cross-validation fold assignment in this replicate.
    pub fold_seed: u64,
}

/// Rows from `N(0, Sigma)` with `Sigma_{jk} = rho^|j-k|`.
pub fn ar1_rows<R: Rng + ?Sized>(n: usize, d: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { xi } else { rho * prev + innov * xi };
            x[(i, j)] = v;
            prev = v;
        }
    }
    x
}

pub fn gen_ar1_gaussian(n: usize, d: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid("rho", format!("need |rho| < 1, got {rho}")));
    }
    Ok(ar1_rows(n, d, rho, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn draw_dataset<R: Rng + ?Sized>(
    n: usize,
    coef: &DVector<f64>,
    rho: f64,
    domain: Domain,
    rng: &mut R,
) -> Result<Dataset> {
    let x = ar1_rows(n, coef.len(), rho, rng);
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * coef + noise;
    Dataset::new(x, y, domain)
}

fn true_coefficients<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
    let (d_t, d_s, m) = (spec.d_t, spec.d_s, spec.m_overlap);
    match spec.setting {
        Setting::S1 | Setting::S2 => {
            let support = if spec.setting == Setting::S1 { 30 } else { 8 };
            let beta = DVector::from_fn(d_t, |j, _| match spec.setting {
                Setting::S1 if j < 30 => 1.0,
                Setting::S2 if j < 4 => j as f64 - 4.0,
                Setting::S2 if j < 8 => j as f64 - 3.0,
                _ => 0.0,
            });
            let i0 = index::sample(rng, support, m).into_vec();
            let i1: Vec<usize> = index::sample(rng, d_t - support, m)
                .into_iter()
                .map(|k| k + support)
                .collect();
            let mut theta = beta.clone();
            for (&a, &b) in i0.iter().zip(&i1) {
                theta[a] = 0.0;
                theta[b] = if spec.setting == Setting::S1 { 1.0 } else { beta[a] };
            }
            (beta, theta)
        }
        Setting::S3NoPerm | Setting::S3Perm => {
            let beta = DVector::from_fn(d_t, |j, _| if j < 8 { 1.0 } else { 0.0 });
            let shifted = perturb_first_four(&beta, spec.h, rng);
            let theta = if spec.setting == Setting::S3Perm {
                let mut perm: Vec<usize> = (0..d_t).collect();
                perm.shuffle(rng);
                DVector::from_fn(d_t, |i, _| shifted[perm[i]])
            } else {
                shifted
            };
            (beta, theta)
        }
        Setting::S4 => {
            let beta = DVector::from_fn(d_t, |j, _| if j < 8 { 1.0 } else { 0.0 });
            let base = DVector::from_fn(d_s, |l, _| if l < 8 { 1.0 } else { 0.0 });
            (beta, perturb_first_four(&base, 0.5, rng))
        }
        Setting::Ex1 => (
            DVector::from_column_slice(&[1.0, 2.0, 3.0]),
            DVector::from_column_slice(&[2.0, 3.0, 1.0]),
        ),
        Setting::Ex2 => (
            DVector::from_column_slice(&[1.0, 2.0, 3.0]),
            DVector::from_column_slice(&[1.0, 1.0, 2.0]),
        ),
    }
}

/// Adds `N(h, (h/3)^2)` draws to the first four entries.
fn perturb_first_four<R: Rng + ?Sized>(base: &DVector<f64>, h: f64, rng: &mut R) -> DVector<f64> {
    let mut out = base.clone();
    if h == 0.0 {
        return out;
    }
    let dist = Normal::new(h, h / 3.0).expect("h is finite and positive");
    for j in 0..4 {
        out[j] += rng.sample(dist);
    }
    out
}

pub fn make_scenario(spec: &ScenarioSpec, rep: usize) -> Result<ScenarioInstance> {
    spec.validate()?;
    let mut rng = spec.replicate_rng(rep);
    let (beta, theta) = true_coefficients(spec, &mut rng);
    let rho = if spec.setting.is_example() { 0.0 } else { AR1_RHO };
    let target = draw_dataset(spec.n_t, &beta, rho, Domain::Target, &mut rng)?;
    let source = draw_dataset(spec.n_s, &theta, rho, Domain::Source, &mut rng)?;
    let test = draw_dataset(TEST_ROWS, &beta, rho, Domain::Target, &mut rng)?;
    let fold_seed = rng.random();
    let beta_true = CoefficientVector::new(beta, Domain::Target);
    let theta_true = CoefficientVector::new(theta, Domain::Source);
    let structure = build_transfer_structure(&beta_true, &theta_true, 0.0)?;
    Ok(ScenarioInstance {
        beta_true,
        theta_true,
        target,
        source,
        test,
        structure,
        fold_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Target-only least squares; low-dimensional designs only.
    Ols,
    Lasso,
    Cstl,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Lasso => "lasso",
            Method::Cstl => "cstl",
            Method::Oracle => "oracle",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(Method::Ols),
            "lasso" => Ok(Method::Lasso),
            "cstl" => Ok(Method::Cstl),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::invalid(
                "methods",
                format!("unknown method `{other}`; expected ols, lasso, cstl or oracle"),
            )),
        }
    }
}

/// Target-only least squares.
pub fn ols(ds: &Dataset) -> Result<DVector<f64>> {
    if ds.n() <= ds.d() {
        return Err(Error::RankCondition(format!(
            "least squares needs n > d, got n = {} and d = {}",
            ds.n(),
            ds.d()
        )));
    }
    let gram = ds.design.tr_mul(&ds.design);
    let rhs = ds.design.tr_mul(&ds.response);
    gram.cholesky().map(|c| c.solve(&rhs)).ok_or(Error::Singular("target"))
}

/// Estimates of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateEstimates {
    pub replicate: usize,
    pub ols: Option<DVector<f64>>,
    pub lasso: Option<DVector<f64>>,
    pub cstl: Option<FitResult>,
    pub oracle: Option<OracleFit>,
}

#[derive(Debug, Clone)]
pub struct ReplicationRun {
    pub table: ResultsTable,
    /// Successful replicates only, in replicate order.
    pub estimates: Vec<ReplicateEstimates>,
    pub failures: Vec<(usize, String)>,
}

fn eval_row(method: Method, rep: usize, beta: &DVector<f64>, inst: &ScenarioInstance) -> Result<ResultRow> {
    let mut row = ResultRow::new(method.as_str(), rep);
    row.sse = Some(sse(beta, &inst.beta_true.values)?);
    row.mse = Some(mse(beta, &inst.test)?);
    Ok(row)
}

/// Fits the requested methods on one replicate.
pub fn run_replicate(
    spec: &ScenarioSpec,
    rep: usize,
    methods: &[Method],
    cfg: &CstlConfig,
) -> Result<(Vec<ResultRow>, ReplicateEstimates)> {
    let inst = make_scenario(spec, rep)?;
    let mut rows = Vec::new();
    let mut est = ReplicateEstimates {
        replicate: rep,
        ols: None,
        lasso: None,
        cstl: None,
        oracle: None,
    };
    let want = |m: Method| methods.contains(&m);

    if want(Method::Ols) {
        let b = ols(&inst.target)?;
        rows.push(eval_row(Method::Ols, rep, &b, &inst)?);
        est.ols = Some(b);
    }
    if want(Method::Lasso) || want(Method::Cstl) {
        let mut lasso_cfg = cfg.lasso.clone();
        lasso_cfg.seed = inst.fold_seed;
        let init_t = lasso_cv(&inst.target, &lasso_cfg)?;
        if want(Method::Lasso) {
            let b = &init_t.fit.coefficients.values;
            let mut row = eval_row(Method::Lasso, rep, b, &inst)?;
            row.lambda0 = Some(init_t.lambda);
            row.iterations = Some(init_t.fit.sweeps);
            row.converged = Some(init_t.fit.converged);
            rows.push(row);
            est.lasso = Some(b.clone());
        }
        if want(Method::Cstl) {
            let init_s = lasso_cv(&inst.source, &lasso_cfg)?;
            let ps = PooledSystem::new(&inst.target, &inst.source)?;
            let (rho0, rho1) = cfg.resolved_rho(ps.d_t(), ps.d_s());
            let fs = build_factored_system(&ps, rho0, rho1)?;
            let fit = grid_search_with_init(&ps, &fs, &init_t.fit.coefficients, &init_s.fit.coefficients, cfg)?;
            let mut row = eval_row(Method::Cstl, rep, &fit.best.beta.values, &inst)?;
            row.lambda0 = Some(fit.best.lambda0);
            row.lambda1 = Some(fit.best.lambda1);
            row.iterations = Some(fit.best.iterations);
            row.converged = Some(fit.best.converged);
            rows.push(row);
            est.cstl = Some(fit.best);
        }
    }
    if want(Method::Oracle) {
        let fit = oracle_fit(&inst.target, &inst.source, &inst.structure)?;
        let mut row = eval_row(Method::Oracle, rep, &fit.beta.values, &inst)?;
        row.converged = Some(true);
        rows.push(row);
        est.oracle = Some(fit);
    }
    Ok((rows, est))
}

/// Runs replicates `1..=spec.replicates` concurrently and merges them in
/// replicate order. A failed replicate contributes `NA` rows; the run aborts
/// once at least a fifth of the replicates have failed.
pub fn run_replications(spec: &ScenarioSpec, methods: &[Method], cfg: &CstlConfig) -> Result<ReplicationRun> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("methods", "at least one method is required"));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();

    type Outcome = (usize, Result<(Vec<ResultRow>, ReplicateEstimates)>);
    let outcomes: Vec<Outcome> = (1..=spec.replicates)
        .into_par_iter()
        .map(|rep| (rep, run_replicate(spec, rep, &methods, cfg)))
        .collect();

    let mut run = ReplicationRun {
        table: ResultsTable::default(),
        estimates: Vec::new(),
        failures: Vec::new(),
    };
    for (rep, outcome) in outcomes {
        match outcome {
            Ok((rows, est)) => {
                run.table.rows.extend(rows);
                run.estimates.push(est);
            }
            Err(e) => {
                run.table
                    .rows
                    .extend(methods.iter().map(|m| ResultRow::new(m.as_str(), rep)));
                run.failures.push((rep, e.to_string()));
            }
        }
    }
    let failed = run.failures.len();
    if failed > 0 && failed as f64 >= MAX_FAILURE_FRACTION * spec.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: spec.replicates,
            first: run.failures[0].1.clone(),
        });
    }
    Ok(run)
}

/// Mean `|beta_hat_j - theta_hat_l|` over fits, next to the true `|beta_j - theta_l|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseSummary {
    pub mean: DMatrix<f64>,
    pub truth: DMatrix<f64>,
}

pub fn abs_difference_matrix(beta: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(beta.len(), theta.len(), |j, l| (beta[j] - theta[l]).abs())
}

pub fn pairwise_difference_summary(fits: &[FitResult], truth: &ScenarioInstance) -> Result<PairwiseSummary> {
    let first = fits
        .first()
        .ok_or_else(|| Error::invalid("fits", "at least one fit is required"))?;
    let (d_t, d_s) = (first.beta.len(), first.theta.len());
    if truth.beta_true.len() != d_t || truth.theta_true.len() != d_s {
        return Err(Error::DimensionMismatch(
            "fits and truth have different dimensions".into(),
        ));
    }
    let mut mean = DMatrix::zeros(d_t, d_s);
    for f in fits {
        if f.beta.len() != d_t || f.theta.len() != d_s {
            return Err(Error::DimensionMismatch("fits have different dimensions".into()));
        }
        mean += abs_difference_matrix(&f.beta.values, &f.theta.values);
    }
    mean /= fits.len() as f64;
    Ok(PairwiseSummary {
        mean,
        truth: abs_difference_matrix(&truth.beta_true.values, &truth.theta_true.values),
    })
}
