//! Data ingestion, centered sample covariance / correlation, and the
//! deviation rate `c * sqrt(log(max(p, n)) / n)` that scales every threshold.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// An `n x p` data matrix, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    column_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct DataMatrixJson {
    n: usize,
    p: usize,
    names: Option<Vec<String>>,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = values.shape();
        if n == 0 || p == 0 {
            return Err(Error::NonFinite("data matrix has no rows or no columns".into()));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry (row {}, column {}) is not finite",
                idx % n,
                idx / n
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need n >= 2 observations, got {n}")));
        }
        if p < 2 {
            return Err(Error::DimensionTooSmall { p, min: 2 });
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "{} column names for {p} columns",
                    names.len()
                )));
            }
        }
        Ok(Self { values, column_names })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = linalg::from_rows(rows)
            .ok_or_else(|| Error::InvalidArgument("ragged rows".into()))?;
        Self::new(m, None)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Keeps the listed rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let m = DMatrix::from_fn(rows.len(), self.p(), |a, j| self.values[(rows[a], j)]);
        Self::new(m, self.column_names.clone())
    }

    /// Keeps the listed columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let m = DMatrix::from_fn(self.n(), cols.len(), |i, b| self.values[(i, cols[b])]);
        let names = self
            .column_names
            .as_ref()
            .map(|names| cols.iter().map(|&c| names[c].clone()).collect());
        Self::new(m, names)
    }

    /// Reads a CSV: optional header row, one observation per row, `.` decimals.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut names = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
            if r == 0 && parsed.iter().any(Option::is_none) {
                names = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
                continue;
            }
            let mut row = Vec::with_capacity(parsed.len());
            for (c, v) in parsed.into_iter().enumerate() {
                match v {
                    Some(x) => row.push(x),
                    None => {
                        return Err(Error::NonFinite(format!(
                            "row {r}, column {c}: '{}' is not a number",
                            &record[c]
                        )))
                    }
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::NonFinite("no data rows".into()));
        }
        let m = linalg::from_rows(&rows)
            .ok_or_else(|| Error::InvalidArgument("rows have differing lengths".into()))?;
        Self::new(m, names)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = match &self.column_names {
            Some(names) => names.clone(),
            None => (0..self.p()).map(|j| format!("x{j}")).collect(),
        };
        w.write_record(&header)?;
        for i in 0..self.n() {
            w.write_record(self.values.row(i).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let values = (0..self.n())
            .flat_map(|i| self.values.row(i).iter().cloned().collect::<Vec<_>>())
            .collect();
        serde_json::to_value(DataMatrixJson {
            n: self.n(),
            p: self.p(),
            names: self.column_names.clone(),
            values,
        })
        .expect("plain data serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: DataMatrixJson = serde_json::from_value(value.clone())?;
        if raw.values.len() != raw.n * raw.p {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                raw.n * raw.p,
                raw.values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(raw.n, raw.p, &raw.values), raw.names)
    }
}

/// Sample covariance, its diagonal, and the sample correlation matrix.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub sigma_hat: DMatrix<f64>,
    pub diag: DVector<f64>,
    pub r_hat: DMatrix<f64>,
    /// Sample size behind the estimate; `None` for population inputs.
    pub n: Option<usize>,
}

impl CorrelationModel {
    pub fn p(&self) -> usize {
        self.r_hat.nrows()
    }

    /// Builds the model from a covariance matrix directly (population path).
    pub fn from_covariance(sigma: DMatrix<f64>, n: Option<usize>) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.ncols() != p {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        if p < 2 {
            return Err(Error::DimensionTooSmall { p, min: 2 });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance has non-finite entries".into()));
        }
        let sigma = linalg::symmetrize(&sigma);
        let diag = sigma.diagonal();
        let max_var = diag.iter().cloned().fold(0.0_f64, f64::max);
        let eps_var = 1e-12 * max_var;
        if let Some(j) = (0..p).find(|&j| diag[j] <= eps_var) {
            return Err(Error::ZeroVarianceColumn(j));
        }
        let scale: Vec<f64> = diag.iter().map(|v| v.sqrt()).collect();
        let mut r = DMatrix::identity(p, p);
        for j in 0..p {
            for i in 0..j {
                let v = (sigma[(i, j)] / (scale[i] * scale[j])).clamp(-1.0, 1.0);
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        Ok(Self { sigma_hat: sigma, diag, r_hat: r, n })
    }
}

/// Centered (by default) covariance with divisor `n`, and its correlation.
///
/// Rows are put in a canonical order before accumulation, so the result is
/// bitwise independent of the order in which observations are supplied.
pub fn sample_correlation(x: &DataMatrix, center: bool) -> Result<CorrelationModel> {
    let (n, p) = (x.n(), x.p());
    let values = x.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        for j in 0..p {
            let (va, vb) = (values[(a, j)].to_bits(), values[(b, j)].to_bits());
            if va != vb {
                return va.cmp(&vb);
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut data = DMatrix::from_fn(n, p, |i, j| values[(order[i], j)]);
    if center {
        for j in 0..p {
            let mean = data.column(j).iter().sum::<f64>() / n as f64;
            data.column_mut(j).iter_mut().for_each(|v| *v -= mean);
        }
    }
    let sigma = (data.transpose() * &data) / n as f64;
    CorrelationModel::from_covariance(sigma, Some(n))
}

/// The deviation rate `c * sqrt(log(max(p, n)) / n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationRate {
    pub c: f64,
    pub n: usize,
    pub p: usize,
    pub value: f64,
}

/// `sqrt(log(max(p, n)) / n)`, the rate without its leading constant.
pub fn rate_unit(n: usize, p: usize) -> f64 {
    rate_unit_f64(n as f64, p as f64)
}

/// Real-valued form of [`rate_unit`].
pub fn rate_unit_f64(n: f64, p: f64) -> f64 {
    (p.max(n).ln() / n).sqrt()
}

pub fn delta_n(c: f64, n: usize, p: usize) -> Result<DeviationRate> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    if p < 1 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    Ok(DeviationRate { c, n, p, value: c * rate_unit(n, p) })
}
