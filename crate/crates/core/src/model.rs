//! Datasets, coefficient vectors and the cross-domain transfer structure.
//!
//! Indices are stored 0-based. Everything that is written out for people to
//! read (CSV files, `Display` impls) is 1-based.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Target,
    Source,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Target => "target",
            Domain::Source => "source",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Design matrix and response for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub domain: Domain,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, domain: Domain) -> Result<Self> {
        let ds = Dataset {
            design,
            response,
            domain,
        };
        validate_dataset(&ds)?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }

    /// Rows selected by `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let design = self.design.select_rows(rows.iter());
        let response = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.response[i]));
        Dataset {
            design,
            response,
            domain: self.domain,
        }
    }
}

/// Checks that the row count matches the response length and that every entry is finite.
pub fn validate_dataset(ds: &Dataset) -> Result<()> {
    if ds.design.nrows() != ds.response.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} design has {} rows but response has length {}",
            ds.domain,
            ds.design.nrows(),
            ds.response.len()
        )));
    }
    for col in 0..ds.design.ncols() {
        for row in 0..ds.design.nrows() {
            if !ds.design[(row, col)].is_finite() {
                return Err(Error::NonFinite {
                    what: "design",
                    row: row + 1,
                    col: col + 1,
                });
            }
        }
    }
    if let Some(row) = ds.response.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "response",
            row: row + 1,
            col: 1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub values: DVector<f64>,
    pub domain: Domain,
}

impl CoefficientVector {
    pub fn new(values: DVector<f64>, domain: Domain) -> Self {
        CoefficientVector { values, domain }
    }

    pub fn from_slice(values: &[f64], domain: Domain) -> Self {
        CoefficientVector {
            values: DVector::from_column_slice(values),
            domain,
        }
    }

    pub fn zeros(len: usize, domain: Domain) -> Self {
        CoefficientVector {
            values: DVector::zeros(len),
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Binary matrix with exactly one 1 per row, stored as the column index of
/// that 1 for every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchingMatrix {
    assignment: Vec<usize>,
    ncols: usize,
}

impl MatchingMatrix {
    pub fn new(assignment: Vec<usize>, ncols: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&c| c >= ncols) {
            return Err(Error::DimensionMismatch(format!(
                "matching column {bad} out of range for {ncols} columns"
            )));
        }
        Ok(MatchingMatrix { assignment, ncols })
    }

    pub fn nrows(&self) -> usize {
        self.assignment.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Column holding the 1 in `row`.
    pub fn column_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for (i, &c) in self.assignment.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    /// `M * values` without materializing `M`.
    pub fn expand(&self, values: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nrows(), self.assignment.iter().map(|&c| values[c]))
    }

    /// `X_sub * M`: sums the columns of `x_sub` mapped to each canonical value.
    pub fn compress_columns(&self, x_sub: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x_sub.nrows(), self.ncols);
        for (i, &c) in self.assignment.iter().enumerate() {
            let mut dst = out.column_mut(c);
            dst += x_sub.column(i);
        }
        out
    }
}

/// Which target coefficients share a value with which source coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferStructure {
    pub d_t: usize,
    pub d_s: usize,
    /// Pairs `(j, l)` in lexicographic order.
    pub pair_set: Vec<(usize, usize)>,
    pub target_support: BTreeSet<usize>,
    pub source_support: BTreeSet<usize>,
    pub target_shared: BTreeSet<usize>,
    pub source_shared: BTreeSet<usize>,
    pub target_specific: BTreeSet<usize>,
    pub source_specific: BTreeSet<usize>,
    /// One target index per distinct shared value, ascending.
    pub canonical: Vec<usize>,
    /// Rows follow ascending `target_shared`.
    pub match_target: MatchingMatrix,
    /// Rows follow ascending `source_shared`.
    pub match_source: MatchingMatrix,
}

impl TransferStructure {
    /// Number of distinct shared values.
    pub fn m(&self) -> usize {
        self.canonical.len()
    }

    pub fn contains_pair(&self, j: usize, l: usize) -> bool {
        self.pair_set.binary_search(&(j, l)).is_ok()
    }

    pub fn target_shared_vec(&self) -> Vec<usize> {
        self.target_shared.iter().copied().collect()
    }

    pub fn source_shared_vec(&self) -> Vec<usize> {
        self.source_shared.iter().copied().collect()
    }

    pub fn target_specific_vec(&self) -> Vec<usize> {
        self.target_specific.iter().copied().collect()
    }

    pub fn source_specific_vec(&self) -> Vec<usize> {
        self.source_specific.iter().copied().collect()
    }
}

fn one_based(set: impl IntoIterator<Item = usize>) -> String {
    let items: Vec<String> = set.into_iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", items.join(","))
}

impl fmt::Display for TransferStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pairs: Vec<String> = self
            .pair_set
            .iter()
            .map(|(j, l)| format!("({},{})", j + 1, l + 1))
            .collect();
        writeln!(f, "B = {{{}}}", pairs.join(","))?;
        writeln!(f, "A_t = {}", one_based(self.target_support.iter().copied()))?;
        writeln!(f, "A_s = {}", one_based(self.source_support.iter().copied()))?;
        writeln!(f, "T_t = {}", one_based(self.target_shared.iter().copied()))?;
        writeln!(f, "T_s = {}", one_based(self.source_shared.iter().copied()))?;
        writeln!(f, "I_t = {}", one_based(self.target_specific.iter().copied()))?;
        writeln!(f, "I_s = {}", one_based(self.source_specific.iter().copied()))?;
        write!(f, "canonical = {}", one_based(self.canonical.iter().copied()))
    }
}

/// Derives the transfer structure from true coefficient vectors.
///
/// Values within `tol` of each other count as equal; supports are the
/// indices with magnitude above `tol`. Pairs whose target coefficient is
/// exactly zero are never part of the pair set.
pub fn build_transfer_structure(
    beta_true: &CoefficientVector,
    theta_true: &CoefficientVector,
    tol: f64,
) -> Result<TransferStructure> {
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(Error::invalid("tol", format!("must be finite and >= 0, got {tol}")));
    }
    let beta = &beta_true.values;
    let theta = &theta_true.values;
    for (what, v) in [("beta_true", beta), ("theta_true", theta)] {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what,
                row: i + 1,
                col: 1,
            });
        }
    }
    let (d_t, d_s) = (beta.len(), theta.len());
    let close = |a: f64, b: f64| (a - b).abs() <= tol;

    let mut pair_set = Vec::new();
    for j in 0..d_t {
        if beta[j] == 0.0 {
            continue;
        }
        for l in 0..d_s {
            if close(beta[j], theta[l]) {
                pair_set.push((j, l));
            }
        }
    }

    let target_support: BTreeSet<usize> = (0..d_t).filter(|&j| beta[j].abs() > tol).collect();
    let source_support: BTreeSet<usize> = (0..d_s).filter(|&l| theta[l].abs() > tol).collect();

    let target_shared: BTreeSet<usize> = pair_set
        .iter()
        .filter(|(j, l)| target_support.contains(j) && source_support.contains(l))
        .map(|&(j, _)| j)
        .collect();
    let source_shared: BTreeSet<usize> = pair_set
        .iter()
        .filter(|(j, l)| target_support.contains(j) && source_support.contains(l))
        .map(|&(_, l)| l)
        .collect();
    let target_specific = target_support.difference(&target_shared).copied().collect();
    let source_specific = source_support.difference(&source_shared).copied().collect();

    // Ascending scan keeps the minimum index per distinct value.
    let mut canonical: Vec<usize> = Vec::new();
    let mut target_assign = Vec::with_capacity(target_shared.len());
    for &j in &target_shared {
        match canonical.iter().position(|&c| close(beta[c], beta[j])) {
            Some(r) => target_assign.push(r),
            None => {
                target_assign.push(canonical.len());
                canonical.push(j);
            }
        }
    }

    let mut source_assign = Vec::with_capacity(source_shared.len());
    for &l in &source_shared {
        // Prefer an exact representative; otherwise the group of the smallest partner.
        let r = canonical
            .iter()
            .position(|&c| beta[c] == theta[l])
            .or_else(|| canonical.iter().position(|&c| close(beta[c], theta[l])))
            .ok_or_else(|| {
                Error::DimensionMismatch(format!("shared source index {} has no canonical representative", l + 1))
            })?;
        source_assign.push(r);
    }

    let m = canonical.len();
    Ok(TransferStructure {
        d_t,
        d_s,
        pair_set,
        target_support,
        source_support,
        target_shared,
        source_shared,
        target_specific,
        source_specific,
        canonical,
        match_target: MatchingMatrix::new(target_assign, m)?,
        match_source: MatchingMatrix::new(source_assign, m)?,
    })
}
