//! CSV input and output: datasets, coefficient vectors, per-replicate result
//! tables, aggregates and dense matrices.
//!
//! Floats are written as `{:.16e}` so that values survive a round trip
//! bit-for-bit; missing or non-finite values are written as `NA`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, Dataset, Domain};

pub const NA: &str = "NA";

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        NA.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| NA.to_string())
}

fn parse_error(source: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_error(source: &str, e: csv::Error) -> Error {
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => format!(
            "row {} has {} fields but the header has {}",
            pos.as_ref().map(|p| p.line()).unwrap_or(0),
            len,
            expected_len
        ),
        _ => e.to_string(),
    };
    parse_error(source, message)
}

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ResponseColumn {
    #[default]
    Last,
    Named(String),
}

impl ResponseColumn {
    pub fn from_option(name: Option<&str>) -> Self {
        match name {
            None => ResponseColumn::Last,
            Some(n) => ResponseColumn::Named(n.to_string()),
        }
    }
}

/// Reads a numeric CSV with a header row. Every non-response column becomes
/// a covariate, in file order. `source` names the input in error messages.
pub fn parse_dataset<R: Read>(reader: R, source: &str, response: &ResponseColumn, domain: Domain) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_error(source, "missing header row"));
    }
    let ncols = headers.len();
    if ncols < 2 {
        return Err(parse_error(
            source,
            "need at least one covariate column and a response column",
        ));
    }
    let y_col = match response {
        ResponseColumn::Last => ncols - 1,
        ResponseColumn::Named(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(source, format!("no column named `{name}`")))?,
    };

    let mut x_vals: Vec<f64> = Vec::new();
    let mut y_vals: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(source, e))?;
        // Line 1 is the header.
        let line = r + 2;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_error(
                    source,
                    format!(
                        "line {line}, column {} (`{}`): `{field}` is not a number",
                        c + 1,
                        &headers[c]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    source,
                    format!("line {line}, column {} (`{}`): non-finite value", c + 1, &headers[c]),
                ));
            }
            if c == y_col {
                y_vals.push(v);
            } else {
                x_vals.push(v);
            }
        }
    }
    let n = y_vals.len();
    if n == 0 {
        return Err(parse_error(source, "no data rows"));
    }
    let design = DMatrix::from_row_slice(n, ncols - 1, &x_vals);
    Dataset::new(design, DVector::from_vec(y_vals), domain)
}

pub fn load_csv(path: &Path, response: &ResponseColumn, domain: Domain) -> Result<Dataset> {
    parse_dataset(open(path)?, &path.display().to_string(), response, domain)
}

/// Writes `x1, ..., xd, y`.
pub fn write_dataset<W: Write>(w: W, ds: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=ds.d()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    wtr.write_record(&header).map_err(|e| csv_error("dataset", e))?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = (0..ds.d()).map(|j| fmt_f64(ds.design[(i, j)])).collect();
        row.push(fmt_f64(ds.response[i]));
        wtr.write_record(&row).map_err(|e| csv_error("dataset", e))?;
    }
    wtr.flush().map_err(|e| Error::io("dataset", e))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_dataset(create(path)?, ds)
}

/// Reads a single-column or `value`-headed coefficient file.
pub fn parse_coefficients<R: Read>(reader: R, source: &str, domain: Domain) -> Result<CoefficientVector> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let field = record.get(record.len().saturating_sub(1)).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if r == 0 => continue,
            _ => {
                return Err(parse_error(
                    source,
                    format!("line {}: `{field}` is not a number", r + 1),
                ))
            }
        }
    }
    if values.is_empty() {
        return Err(parse_error(source, "no coefficients"));
    }
    Ok(CoefficientVector::from_slice(&values, domain))
}

pub fn load_coefficients(path: &Path, domain: Domain) -> Result<CoefficientVector> {
    parse_coefficients(open(path)?, &path.display().to_string(), domain)
}

/// `domain,index,value` rows with 1-based indices.
pub fn write_coefficients<W: Write>(w: W, vectors: &[&CoefficientVector]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["domain", "index", "value"])
        .map_err(|e| csv_error("coefficients", e))?;
    for cv in vectors {
        for (j, v) in cv.values.iter().enumerate() {
            wtr.write_record([cv.domain.as_str().to_string(), (j + 1).to_string(), fmt_f64(*v)])
                .map_err(|e| csv_error("coefficients", e))?;
        }
    }
    wtr.flush().map_err(|e| Error::io("coefficients", e))
}

/// Dense matrix with a `row` label column and `c1..cK` headers.
pub fn write_matrix<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string()];
    header.extend((1..=m.ncols()).map(|c| format!("c{c}")));
    wtr.write_record(&header).map_err(|e| csv_error("matrix", e))?;
    for r in 0..m.nrows() {
        let mut row = vec![(r + 1).to_string()];
        row.extend((0..m.ncols()).map(|c| fmt_f64(m[(r, c)])));
        wtr.write_record(&row).map_err(|e| csv_error("matrix", e))?;
    }
    wtr.flush().map_err(|e| Error::io("matrix", e))
}

pub fn save_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub replicate: usize,
    pub sse: Option<f64>,
    pub mse: Option<f64>,
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl ResultRow {
    pub fn new(method: &str, replicate: usize) -> Self {
        ResultRow {
            method: method.to_string(),
            replicate,
            sse: None,
            mse: None,
            lambda0: None,
            lambda1: None,
            iterations: None,
            converged: None,
        }
    }
}

pub const RESULT_HEADER: [&str; 8] = [
    "method",
    "replicate",
    "sse",
    "mse",
    "lambda0",
    "lambda1",
    "iterations",
    "converged",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

/// Mean and standard error of SSE and MSE for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub count: usize,
    pub sse_mean: f64,
    pub sse_stderr: f64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl ResultsTable {
    /// Method names in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn column(&self, method: &str, pick: impl Fn(&ResultRow) -> Option<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(&pick)
            .filter(|v| v.is_finite())
            .collect()
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        self.methods()
            .into_iter()
            .map(|m| {
                let sse = self.column(&m, |r| r.sse);
                let mse = self.column(&m, |r| r.mse);
                let (sse_mean, sse_stderr) = mean_stderr(&sse);
                let (mse_mean, mse_stderr) = mean_stderr(&mse);
                AggregateRow {
                    count: self.rows.iter().filter(|r| r.method == m).count(),
                    method: m,
                    sse_mean,
                    sse_stderr,
                    mse_mean,
                    mse_stderr,
                }
            })
            .collect()
    }
}

pub fn write_results<W: Write>(w: W, table: &ResultsTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RESULT_HEADER).map_err(|e| csv_error("results", e))?;
    for r in &table.rows {
        wtr.write_record([
            r.method.clone(),
            r.replicate.to_string(),
            fmt_opt(r.sse),
            fmt_opt(r.mse),
            fmt_opt(r.lambda0),
            fmt_opt(r.lambda1),
            r.iterations.map(|i| i.to_string()).unwrap_or_else(|| NA.into()),
            r.converged.map(|c| c.to_string()).unwrap_or_else(|| NA.into()),
        ])
        .map_err(|e| csv_error("results", e))?;
    }
    wtr.flush().map_err(|e| Error::io("results", e))
}

fn parse_na<T: std::str::FromStr>(field: &str, line: usize, col: &str, source: &str) -> Result<Option<T>> {
    if field == NA {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| parse_error(source, format!("line {line}, column `{col}`: cannot parse `{field}`")))
}

/// Reads a table written by [`write_results`].
pub fn read_results<R: Read>(reader: R, source: &str) -> Result<ResultsTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if headers.iter().ne(RESULT_HEADER.iter().copied()) {
        return Err(parse_error(
            source,
            format!("expected header `{}`", RESULT_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = r + 2;
        let f = |i: usize| &record[i];
        let float = |i: usize| -> Result<Option<f64>> {
            let v: Option<f64> = parse_na(f(i), line, RESULT_HEADER[i], source)?;
            match v {
                Some(x) if !x.is_finite() => Err(parse_error(
                    source,
                    format!("line {line}, column `{}`: non-finite value", RESULT_HEADER[i]),
                )),
                other => Ok(other),
            }
        };
        rows.push(ResultRow {
            method: f(0).to_string(),
            replicate: f(1).parse().map_err(|_| {
                parse_error(
                    source,
                    format!("line {line}, column `replicate`: cannot parse `{}`", f(1)),
                )
            })?,
            sse: float(2)?,
            mse: float(3)?,
            lambda0: float(4)?,
            lambda1: float(5)?,
            iterations: parse_na(f(6), line, RESULT_HEADER[6], source)?,
            converged: parse_na(f(7), line, RESULT_HEADER[7], source)?,
        });
    }
    Ok(ResultsTable { rows })
}

pub fn write_aggregate<W: Write>(w: W, rows: &[AggregateRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "count", "sse_mean", "sse_stderr", "mse_mean", "mse_stderr"])
        .map_err(|e| csv_error("aggregate", e))?;
    for a in rows {
        wtr.write_record([
            a.method.clone(),
            a.count.to_string(),
            fmt_f64(a.sse_mean),
            fmt_f64(a.sse_stderr),
            fmt_f64(a.mse_mean),
            fmt_f64(a.mse_stderr),
        ])
        .map_err(|e| csv_error("aggregate", e))?;
    }
    wtr.flush().map_err(|e| Error::io("aggregate", e))
}
