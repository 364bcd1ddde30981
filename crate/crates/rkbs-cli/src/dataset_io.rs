//! Dataset CSV files: header `x_1..x_d,y_1..y_p`, one sample per row,
//! numbers rendered with 17 significant digits.

use std::path::Path;

use nalgebra::DVector;

use rkbs_core::model::fmt_f64;
use rkbs_core::trainer::Dataset;
use rkbs_core::{Error, Result};

pub fn header(d: usize, p: usize) -> String {
    let mut cols = Vec::with_capacity(d + p);
    for j in 1..=d {
        cols.push(format!("x_{j}"));
    }
    for j in 1..=p {
        cols.push(format!("y_{j}"));
    }
    cols.join(",")
}

/// Writes rows of `(x, y)` pairs; an empty slice still gets the header.
pub fn write_csv(
    path: &Path,
    d: usize,
    p: usize,
    rows: &[(DVector<f64>, DVector<f64>)],
) -> Result<()> {
    let mut out = header(d, p);
    out.push('\n');
    for (x, y) in rows {
        let cells: Vec<String> = x.iter().chain(y.iter()).map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset CSV, inferring dimensions from the header names.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Invalid {
            context: "dataset file",
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| Error::Invalid {
        context: "dataset header",
        message: e.to_string(),
    })?;
    let d = headers.iter().filter(|h| h.starts_with("x_")).count();
    let p = headers.iter().filter(|h| h.starts_with("y_")).count();
    if d == 0 || p == 0 || d + p != headers.len() {
        return Err(Error::Invalid {
            context: "dataset header",
            message: format!("expected x_1..x_d,y_1..y_p, got {headers:?}"),
        });
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid {
            context: "dataset row",
            message: e.to_string(),
        })?;
        if record.len() != d + p {
            return Err(Error::Invalid {
                context: "dataset row",
                message: format!("expected {} cells, got {}", d + p, record.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Invalid {
                context: "dataset value",
                message: format!("{s:?}: {e}"),
            })
        };
        let mut x = DVector::zeros(d);
        for j in 0..d {
            x[j] = parse(&record[j])?;
        }
        let mut y = DVector::zeros(p);
        for j in 0..p {
            y[j] = parse(&record[d + j])?;
        }
        inputs.push(x);
        targets.push(y);
    }
    Dataset::new(inputs, targets)
}
