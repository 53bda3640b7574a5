use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{validate_dataset, Dataset, Domain};

use super::operators::structural_dtd;

/// Target and source data stacked as `X = diag(X_t/sqrt(n_t), X_s/sqrt(n_s))`
/// and `Y = (Y_t/sqrt(n_t), Y_s/sqrt(n_s))`.
///
/// The block-diagonal design is kept as its two blocks.
#[derive(Debug, Clone)]
pub struct PooledSystem {
    target: Dataset,
    source: Dataset,
    /// `2 X^T X` (block diagonal, stored dense).
    hessian: DMatrix<f64>,
    /// `2 X^T Y`.
    linear: DVector<f64>,
}

impl PooledSystem {
    pub fn new(target: &Dataset, source: &Dataset) -> Result<Self> {
        validate_dataset(target)?;
        validate_dataset(source)?;
        if target.domain != Domain::Target || source.domain != Domain::Source {
            return Err(Error::invalid(
                "datasets",
                "expected a target dataset followed by a source dataset",
            ));
        }
        if target.n() == 0 || source.n() == 0 {
            return Err(Error::invalid("datasets", "both domains need at least one row"));
        }
        let (d_t, d_s) = (target.d(), source.d());
        let (n_t, n_s) = (target.n() as f64, source.n() as f64);
        let mut hessian = DMatrix::zeros(d_t + d_s, d_t + d_s);
        hessian
            .view_mut((0, 0), (d_t, d_t))
            .copy_from(&(target.design.tr_mul(&target.design) * (2.0 / n_t)));
        hessian
            .view_mut((d_t, d_t), (d_s, d_s))
            .copy_from(&(source.design.tr_mul(&source.design) * (2.0 / n_s)));
        let mut linear = DVector::zeros(d_t + d_s);
        linear
            .rows_mut(0, d_t)
            .copy_from(&(target.design.tr_mul(&target.response) * (2.0 / n_t)));
        linear
            .rows_mut(d_t, d_s)
            .copy_from(&(source.design.tr_mul(&source.response) * (2.0 / n_s)));
        Ok(PooledSystem {
            target: target.clone(),
            source: source.clone(),
            hessian,
            linear,
        })
    }

    pub fn target(&self) -> &Dataset {
        &self.target
    }

    pub fn source(&self) -> &Dataset {
        &self.source
    }

    pub fn d_t(&self) -> usize {
        self.target.d()
    }

    pub fn d_s(&self) -> usize {
        self.source.d()
    }

    pub fn n_t(&self) -> usize {
        self.target.n()
    }

    pub fn n_s(&self) -> usize {
        self.source.n()
    }

    /// `2 X^T X`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `2 X^T Y`.
    pub fn linear_term(&self) -> &DVector<f64> {
        &self.linear
    }

    /// `(1/n_t)||Y_t - X_t beta||^2` and `(1/n_s)||Y_s - X_s theta||^2`.
    pub fn mean_squared_residuals(&self, beta: &DVector<f64>, theta: &DVector<f64>) -> (f64, f64) {
        let rt = &self.target.response - &self.target.design * beta;
        let rs = &self.source.response - &self.source.design * theta;
        (
            rt.norm_squared() / self.n_t() as f64,
            rs.norm_squared() / self.n_s() as f64,
        )
    }
}

/// Cholesky factor of `2 X^T X + rho0 A^T A + rho1 D^T D`.
///
/// Depends only on the data and the penalty parameters, so one factor serves
/// every iteration and every `(lambda0, lambda1)` on a grid.
#[derive(Clone)]
pub struct FactoredSystem {
    pub gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    pub rho0: f64,
    pub rho1: f64,
    d_t: usize,
    d_s: usize,
}

impl std::fmt::Debug for FactoredSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactoredSystem")
            .field("dim", &self.gram.nrows())
            .field("rho0", &self.rho0)
            .field("rho1", &self.rho1)
            .finish()
    }
}

impl FactoredSystem {
    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    /// Solves `gram * x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut DVector<f64>) {
        self.factor.solve_mut(rhs);
    }
}

pub fn build_factored_system(ps: &PooledSystem, rho0: f64, rho1: f64) -> Result<FactoredSystem> {
    for (name, rho) in [("rho0", rho0), ("rho1", rho1)] {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(name, format!("must be finite and > 0, got {rho}")));
        }
    }
    let (d_t, d_s) = (ps.d_t(), ps.d_s());
    let mut gram = structural_dtd(d_t, d_s) * rho1;
    gram += ps.hessian();
    for j in 0..d_t {
        gram[(j, j)] += rho0;
    }
    let factor = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("ADMM system of size {}", d_t + d_s)))?;
    Ok(FactoredSystem {
        gram,
        factor,
        rho0,
        rho1,
        d_t,
        d_s,
    })
}
