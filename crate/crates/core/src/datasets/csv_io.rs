//! Comma-separated ingestion with a light missing-data policy.
//!
//! Rows missing the outcome or treatment are dropped. A covariate column whose
//! missing fraction is at most `impute_threshold` has its gaps filled with the
//! column mean; in any other column a gap drops the row. Empty cells and
//! `NA`/`NaN`/`null` (any case) count as missing.

use std::fs::File;
use std::path::Path;

use super::{Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns in order; `None` takes every other column.
    pub covariates: Option<Vec<String>>,
    pub impute_threshold: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            outcome: "y".into(),
            treatment: "d".into(),
            covariates: None,
            impute_threshold: 0.04,
        }
    }
}

/// What ingestion did to the raw rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_missing_outcome: usize,
    pub dropped_missing_treatment: usize,
    pub dropped_missing_covariate: usize,
    pub imputed_cells: usize,
    /// Columns whose gaps were filled with the column mean.
    pub imputed_columns: Vec<String>,
}

impl LoadReport {
    pub fn rows_kept(&self) -> usize {
        self.rows_read
            - self.dropped_missing_outcome
            - self.dropped_missing_treatment
            - self.dropped_missing_covariate
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty()
        || c.eq_ignore_ascii_case("na")
        || c.eq_ignore_ascii_case("nan")
        || c.eq_ignore_ascii_case("null")
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        column: column.to_string(),
        message: format!("'{cell}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            column: column.to_string(),
            message: format!("'{cell}' is not finite"),
        });
    }
    Ok(v)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(ObservationalDataset, LoadReport)> {
    if !(0.0..=1.0).contains(&schema.impute_threshold) {
        return Err(Error::config("impute threshold must lie in [0, 1]"));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                column: name.to_string(),
                message: "unknown column".into(),
            })
    };
    let y_col = find(&schema.outcome)?;
    let d_col = find(&schema.treatment)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != y_col && i != d_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let mut outcomes = Vec::new();
    let mut flags = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        report.rows_read += 1;
        let get = |c: usize| record.get(c).unwrap_or("");
        if is_missing(get(y_col)) {
            report.dropped_missing_outcome += 1;
            continue;
        }
        if is_missing(get(d_col)) {
            report.dropped_missing_treatment += 1;
            continue;
        }
        let y = parse_cell(get(y_col), line, &schema.outcome)?;
        let d = parse_cell(get(d_col), line, &schema.treatment)?;
        let flag = if d == 0.0 {
            Group::Control
        } else if d == 1.0 {
            Group::Treated
        } else {
            return Err(Error::Parse {
                line,
                column: schema.treatment.clone(),
                message: format!("treatment value '{}' is not 0 or 1", get(d_col)),
            });
        };
        let row = cov_cols
            .iter()
            .zip(&cov_names)
            .map(|(&c, name)| {
                let cell = get(c);
                if is_missing(cell) {
                    Ok(None)
                } else {
                    parse_cell(cell, line, name).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        outcomes.push(y);
        flags.push(flag.flag());
        cells.push(row);
    }

    let q = cov_names.len();
    let n = cells.len();
    let imputable: Vec<bool> = (0..q)
        .map(|c| {
            let missing = cells.iter().filter(|r| r[c].is_none()).count();
            n > 0 && missing as f64 <= schema.impute_threshold * n as f64
        })
        .collect();
    let keep: Vec<usize> = (0..n)
        .filter(|&i| (0..q).all(|c| imputable[c] || cells[i][c].is_some()))
        .collect();
    report.dropped_missing_covariate = n - keep.len();

    let mut means = vec![0.0; q];
    for (c, mean) in means.iter_mut().enumerate() {
        let observed: Vec<f64> = keep.iter().filter_map(|&i| cells[i][c]).collect();
        let missing = keep.len() - observed.len();
        if missing > 0 {
            if observed.is_empty() {
                return Err(Error::data(format!(
                    "column '{}' has no observed values",
                    cov_names[c]
                )));
            }
            *mean = observed.iter().sum::<f64>() / observed.len() as f64;
            report.imputed_cells += missing;
            report.imputed_columns.push(cov_names[c].clone());
        }
    }
    let mut data = Vec::with_capacity(keep.len() * q);
    for &i in &keep {
        for c in 0..q {
            data.push(cells[i][c].unwrap_or(means[c]));
        }
    }
    let dataset = ObservationalDataset::new(
        Matrix::from_vec(keep.len(), q, data)?,
        keep.iter().map(|&i| outcomes[i]).collect(),
        keep.iter().map(|&i| flags[i]).collect(),
        cov_names,
    )?
    .with_outcome_name(schema.outcome.clone());
    Ok((dataset, report))
}

/// Writes covariates, the outcome and a `d` treatment column.
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_csv(data: &ObservationalDataset, path: &Path) -> Result<()> {
    let wrap = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}: {other:?}", path.display())),
    })?;
    let mut header = data.data_column_names();
    header.push("d".into());
    writer.write_record(&header).map_err(wrap)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        record.clear();
        record.extend(data.covariates().row(i).iter().map(|v| v.to_string()));
        record.push(data.outcomes()[i].to_string());
        record.push(data.treatment()[i].to_string());
        writer.write_record(&record).map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
