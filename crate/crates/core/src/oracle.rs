//! Closed-form oracle estimator for a known transfer structure.
//!
//! With the true support and equality pattern imposed, the shared values are
//! a least-squares fit on the compressed shared columns after projecting out
//! the domain-specific columns of each domain; the domain-specific
//! coefficients then come from regressing what is left on those columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, Dataset, Domain, TransferStructure};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub beta: CoefficientVector,
    pub theta: CoefficientVector,
    /// Estimated shared values, one per canonical index.
    pub shared_values: DVector<f64>,
}

/// Cholesky that also rejects numerically singular matrices: a pivot whose
/// square falls below `1e-12` of the matching diagonal entry.
fn checked_cholesky(g: DMatrix<f64>, block: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let diag = g.diagonal();
    let factor = g.cholesky().ok_or(Error::Singular(block))?;
    let l = factor.l_dirty();
    for i in 0..diag.len() {
        if !(l[(i, i)] * l[(i, i)] > 1e-12 * diag[i]) {
            return Err(Error::Singular(block));
        }
    }
    Ok(factor)
}

fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx.iter())
}

/// Residual maker `I - X (X^T X)^{-1} X^T` for a column block, applied via a
/// Cholesky factor of `X^T X`. An empty block is the identity.
struct ProjectionComplement<'a> {
    x: &'a DMatrix<f64>,
    factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl<'a> ProjectionComplement<'a> {
    fn new(x: &'a DMatrix<f64>, block: &'static str) -> Result<Self> {
        if x.ncols() == 0 {
            return Ok(ProjectionComplement { x, factor: None });
        }
        let factor = checked_cholesky(x.tr_mul(x), block)?;
        Ok(ProjectionComplement {
            x,
            factor: Some(factor),
        })
    }

    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            None => m.clone(),
            Some(f) => m - self.x * f.solve(&self.x.tr_mul(m)),
        }
    }

    /// Least-squares coefficients of `y` on the block.
    fn coefficients(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            None => DVector::zeros(0),
            Some(f) => f.solve(&self.x.tr_mul(y)),
        }
    }
}

fn check_inputs(target: &Dataset, source: &Dataset, ts: &TransferStructure) -> Result<()> {
    if target.d() != ts.d_t || source.d() != ts.d_s {
        return Err(Error::DimensionMismatch(format!(
            "data dimensions ({}, {}) do not match structure ({}, {})",
            target.d(),
            source.d(),
            ts.d_t,
            ts.d_s
        )));
    }
    if target.n() != target.response.len() || source.n() != source.response.len() {
        return Err(Error::DimensionMismatch("design and response lengths differ".into()));
    }
    let (m, it, is) = (ts.m(), ts.target_specific.len(), ts.source_specific.len());
    if m > 0 && m >= target.n() {
        return Err(Error::RankCondition(format!(
            "{m} shared values need more than {m} target rows, got {}",
            target.n()
        )));
    }
    if it > 0 && it >= target.n() {
        return Err(Error::RankCondition(format!(
            "{it} target-specific coefficients need more than {it} target rows, got {}",
            target.n()
        )));
    }
    if is > 0 && is >= source.n() {
        return Err(Error::RankCondition(format!(
            "{is} source-specific coefficients need more than {is} source rows, got {}",
            source.n()
        )));
    }
    Ok(())
}

fn assemble(
    ts: &TransferStructure,
    alpha: DVector<f64>,
    beta_specific: &DVector<f64>,
    theta_specific: &DVector<f64>,
) -> OracleFit {
    let mut beta = DVector::zeros(ts.d_t);
    let mut theta = DVector::zeros(ts.d_s);
    for (row, &j) in ts.target_shared.iter().enumerate() {
        beta[j] = alpha[ts.match_target.column_of(row)];
    }
    for (row, &l) in ts.source_shared.iter().enumerate() {
        theta[l] = alpha[ts.match_source.column_of(row)];
    }
    for (k, &j) in ts.target_specific.iter().enumerate() {
        beta[j] = beta_specific[k];
    }
    for (k, &l) in ts.source_specific.iter().enumerate() {
        theta[l] = theta_specific[k];
    }
    OracleFit {
        beta: CoefficientVector::new(beta, Domain::Target),
        theta: CoefficientVector::new(theta, Domain::Source),
        shared_values: alpha,
    }
}

/// Oracle estimator via projection complements.
pub fn oracle_fit(target: &Dataset, source: &Dataset, ts: &TransferStructure) -> Result<OracleFit> {
    check_inputs(target, source, ts)?;
    let (n_t, n_s) = (target.n() as f64, source.n() as f64);

    let x_it = columns(&target.design, &ts.target_specific_vec());
    let x_is = columns(&source.design, &ts.source_specific_vec());
    let proj_t = ProjectionComplement::new(&x_it, "target-specific")?;
    let proj_s = ProjectionComplement::new(&x_is, "source-specific")?;

    let xc_t = ts
        .match_target
        .compress_columns(&columns(&target.design, &ts.target_shared_vec()));
    let xc_s = ts
        .match_source
        .compress_columns(&columns(&source.design, &ts.source_shared_vec()));

    let alpha = if ts.m() == 0 {
        DVector::zeros(0)
    } else {
        let res_t = proj_t.apply(&xc_t);
        let res_s = proj_s.apply(&xc_s);
        // (I - P) is a symmetric idempotent, so X~^T (I - P) X~ = X~^T [(I - P) X~].
        let gram = xc_t.tr_mul(&res_t) / n_t + xc_s.tr_mul(&res_s) / n_s;
        let rhs = res_t.tr_mul(&target.response) / n_t + res_s.tr_mul(&source.response) / n_s;
        checked_cholesky(gram, "shared")?.solve(&rhs)
    };

    let beta_specific = proj_t.coefficients(&(&target.response - &xc_t * &alpha));
    let theta_specific = proj_s.coefficients(&(&source.response - &xc_s * &alpha));
    Ok(assemble(ts, alpha, &beta_specific, &theta_specific))
}

/// Oracle estimator by direct reparameterization.
///
/// Stacks the free parameters `(shared values, target-specific,
/// source-specific)` into one pooled design and solves its normal equations
/// with an LU factorization. Shares no linear-algebra path with
/// [`oracle_fit`]; it exists to cross-check it.
pub fn oracle_fit_reference(target: &Dataset, source: &Dataset, ts: &TransferStructure) -> Result<OracleFit> {
    check_inputs(target, source, ts)?;
    let (n_t, n_s) = (target.n(), source.n());
    let (m, p_t, p_s) = (ts.m(), ts.target_specific.len(), ts.source_specific.len());
    let cols = m + p_t + p_s;
    let (st, ss) = (1.0 / (n_t as f64).sqrt(), 1.0 / (n_s as f64).sqrt());

    let shared_t = columns(&target.design, &ts.target_shared_vec()) * ts.match_target.to_dense();
    let shared_s = columns(&source.design, &ts.source_shared_vec()) * ts.match_source.to_dense();

    let mut z = DMatrix::zeros(n_t + n_s, cols);
    z.view_mut((0, 0), (n_t, m)).copy_from(&(shared_t * st));
    z.view_mut((n_t, 0), (n_s, m)).copy_from(&(shared_s * ss));
    for (k, &j) in ts.target_specific.iter().enumerate() {
        z.view_mut((0, m + k), (n_t, 1))
            .copy_from(&(target.design.column(j) * st));
    }
    for (k, &l) in ts.source_specific.iter().enumerate() {
        z.view_mut((n_t, m + p_t + k), (n_s, 1))
            .copy_from(&(source.design.column(l) * ss));
    }
    let mut y = DVector::zeros(n_t + n_s);
    y.rows_mut(0, n_t).copy_from(&(&target.response * st));
    y.rows_mut(n_t, n_s).copy_from(&(&source.response * ss));

    let sol = if cols == 0 {
        DVector::zeros(0)
    } else {
        let normal = z.tr_mul(&z);
        let lu = normal.full_piv_lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("pooled reference"));
        }
        lu.solve(&z.tr_mul(&y)).ok_or(Error::Singular("pooled reference"))?
    };
    let alpha = sol.rows(0, m).into_owned();
    let beta_specific = sol.rows(m, p_t).into_owned();
    let theta_specific = sol.rows(m + p_t, p_s).into_owned();
    Ok(assemble(ts, alpha, &beta_specific, &theta_specific))
}
