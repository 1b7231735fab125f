//! CSV readers for data, costs and covariance matrices.

use std::path::Path;

use anyhow::Result;
use nalgebra::{DMatrix, DVector};

use crate::input_error;

pub struct Table {
    pub features: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

fn parse_cell(text: &str, row: usize, column: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| input_error(format!("row {row}, column '{column}': '{text}' is not a finite number")))
}

/// Reads a headed CSV and splits off the named response column.
pub fn read_table(path: &Path, response: &str) -> Result<Table> {
    let mut rdr = reader(path, true)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let y_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| input_error(format!("response column '{response}' not found in {}", path.display())))?;
    let features: Vec<String> = headers.iter().enumerate().filter(|&(i, _)| i != y_col).map(|(_, h)| h.clone()).collect();
    if features.is_empty() {
        return Err(input_error("the data file has no feature columns"));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| input_error(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(input_error(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        for (i, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell, row, &headers[i])?;
            if i == y_col {
                y.push(v);
            } else {
                rows.push(v);
            }
        }
    }
    let n = y.len();
    Ok(Table {
        x: DMatrix::from_row_slice(n, features.len(), &rows),
        y: DVector::from_vec(y),
        features,
    })
}

/// Reads `feature,omega` rows and returns costs in `features` order.
///
/// Costs must be integers ≥ 2 unless `scale` is given, in which case each
/// value is multiplied by it, rounded, and clamped below at 2.
pub fn read_costs(path: &Path, features: &[String], scale: Option<f64>) -> Result<Vec<u32>> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().map_err(|e| input_error(format!("{}: {e}", path.display())))?.clone();
    if headers.len() != 2 || &headers[0] != "feature" || &headers[1] != "omega" {
        return Err(input_error(format!(
            "{}: expected header 'feature,omega'",
            path.display()
        )));
    }
    let mut found: Vec<Option<u32>> = vec![None; features.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| input_error(format!("costs row {row}: {e}")))?;
        let name = &rec[0];
        let j = features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| input_error(format!("costs row {row}: feature '{name}' is not a data column")))?;
        if found[j].is_some() {
            return Err(input_error(format!("costs row {row}: feature '{name}' listed twice")));
        }
        let raw = parse_cell(&rec[1], row, "omega")?;
        let omega = match scale {
            Some(s) => (raw * s).round().max(2.0),
            None => {
                if raw.fract() != 0.0 {
                    return Err(input_error(format!(
                        "costs row {row}: feature '{name}' has non-integer cost {raw}; use --cost-scale to rescale"
                    )));
                }
                if raw < 2.0 {
                    return Err(input_error(format!(
                        "costs row {row}: feature '{name}' has cost {raw}, but every cost must be an integer >= 2"
                    )));
                }
                raw
            }
        };
        if omega > u32::MAX as f64 {
            return Err(input_error(format!("costs row {row}: cost {omega} is too large")));
        }
        found[j] = Some(omega as u32);
    }
    features
        .iter()
        .zip(found)
        .map(|(f, w)| w.ok_or_else(|| input_error(format!("no cost given for feature '{f}'"))))
        .collect()
}

/// Reads a `p × p` matrix stored row-major, one row per line. A non-numeric
/// first line is treated as a header.
pub fn read_matrix(path: &Path, p: usize) -> Result<DMatrix<f64>> {
    let mut rdr = reader(path, false)?;
    let mut values = Vec::with_capacity(p * p);
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| input_error(format!("{} row {}: {e}", path.display(), r + 1)))?;
        if r == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        rows += 1;
        if rec.len() != p {
            return Err(input_error(format!(
                "{} row {}: expected {p} values, found {}",
                path.display(),
                r + 1,
                rec.len()
            )));
        }
        for (i, cell) in rec.iter().enumerate() {
            values.push(parse_cell(cell, r + 1, &format!("{}", i + 1))?);
        }
    }
    if rows != p {
        return Err(input_error(format!("{}: expected {p} rows, found {rows}", path.display())));
    }
    Ok(DMatrix::from_row_slice(p, p, &values))
}

/// Sample covariance shrunk toward its diagonal: `(1 − δ)S + δ·diag(S)`.
pub fn shrunk_covariance(x: &DMatrix<f64>, shrinkage: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let s = centered.tr_mul(&centered) / (n - 1.0).max(1.0);
    let shrunk = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        if i == j {
            s[(i, j)]
        } else {
            (1.0 - shrinkage) * s[(i, j)]
        }
    });
    (mean, shrunk)
}

/// Comma-separated list of values.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| input_error(format!("{what}: cannot parse '{t}'"))))
        .collect()
}
