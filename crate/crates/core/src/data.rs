//! Observational data `(W, A, Y)` and its CSV representation.
//!
//! The CSV layout is a header `w1,...,wd,a,y` followed by one row per
//! observation. Errors report 1-based data row numbers (the header is row 0).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Matrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::InvalidConfig(format!(
                "matrix of shape {nrows}x{ncols} needs {} entries, got {}",
                nrows * ncols,
                data.len()
            )));
        }
        Ok(Matrix { data, nrows, ncols })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix { data: vec![0.0; nrows * ncols], nrows, ncols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::RaggedRow { row: i + 1, expected: ncols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { data, nrows: rows.len(), ncols })
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        let nrows = values.len();
        Matrix { data: values, nrows, ncols: 1 }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { data, nrows: idx.len(), ncols: self.ncols }
    }
}

/// Validated observations. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Matrix,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset after checking the invariants: matching lengths,
    /// n >= 1, binary treatment and finite values.
    pub fn new(covariates: Matrix, treatment: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidConfig(format!(
                "covariates have {n} rows but treatment has {} and outcome {}",
                treatment.len(),
                outcome.len()
            )));
        }
        for i in 0..n {
            for (j, v) in covariates.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i + 1, column: format!("w{}", j + 1) });
                }
            }
            if !treatment[i].is_finite() {
                return Err(Error::NonFiniteValue { row: i + 1, column: "a".into() });
            }
            if treatment[i] != 0.0 && treatment[i] != 1.0 {
                return Err(Error::NonBinaryTreatment { row: i + 1, value: treatment[i] });
            }
            if !outcome[i].is_finite() {
                return Err(Error::NonFiniteValue { row: i + 1, column: "y".into() });
            }
        }
        Ok(Dataset {
            covariates,
            treatment: treatment.into_iter().map(|a| a as u8).collect(),
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn w(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn a(&self, i: usize) -> u8 {
        self.treatment[i]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.outcome[i]
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&a| f64::from(a)).collect()
    }

    /// Indices of rows with treatment `arm`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.treatment[i] == arm).collect()
    }

    pub fn outcome_min_max(&self) -> (f64, f64) {
        self.outcome
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)))
    }

    /// Copy with the outcome column replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Dataset::new(self.covariates.clone(), self.treatment_f64(), outcome)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 2 || header[header.len() - 2] != "a" || header[header.len() - 1] != "y" {
            return Err(Error::InvalidConfig(format!(
                "dataset header must be `w1,...,wd,a,y`, found `{}`",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::RaggedRow { row: i + 1, expected: header.len(), found: rec.len() });
            }
            let mut row = Vec::with_capacity(rec.len());
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    column: header[j].clone(),
                    field: field.to_owned(),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        validate_dataset(&rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("w{j}")).collect();
        header.push("a".into());
        header.push("y".into());
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.w(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.a(i).to_string());
            rec.push(self.y(i).to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Validates raw rows `(w1..wd, a, y)` into a [`Dataset`].
pub fn validate_dataset(rows: &[Vec<f64>]) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let width = rows[0].len();
    if width < 3 {
        return Err(Error::RaggedRow { row: 1, expected: 3, found: width });
    }
    let d = width - 2;
    let mut cov = Vec::with_capacity(rows.len() * d);
    let mut a = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::RaggedRow { row: i + 1, expected: width, found: r.len() });
        }
        cov.extend_from_slice(&r[..d]);
        a.push(r[d]);
        y.push(r[d + 1]);
    }
    Dataset::new(Matrix::new(rows.len(), d, cov)?, a, y)
}

/// Reads covariates (`w1,...,wd`) for prediction queries. Columns named `a`
/// or `y` are skipped, so a dataset file can be used as a query.
pub fn read_covariates_csv<R: Read>(reader: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let keep: Vec<bool> = header.iter().map(|h| h != "a" && h != "y").collect();
    let width = keep.iter().filter(|k| **k).count();
    let mut data = Vec::new();
    let mut nrows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow { row: i + 1, expected: header.len(), found: rec.len() });
        }
        for (j, field) in rec.iter().enumerate().filter(|(j, _)| keep[*j]) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: header[j].clone(),
                field: field.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i + 1, column: header[j].clone() });
            }
            data.push(v);
        }
        nrows += 1;
    }
    Matrix::new(nrows, width, data)
}
