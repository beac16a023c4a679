//! Per-column transforms between data space and the generator's output space.
//!
//! Continuous columns are standardized. Columns with few distinct values are
//! one-hot encoded; the generator emits a softmax over their levels during
//! training and the argmax level at generation time. A constant outcome takes
//! no room in the encoded row and is reproduced verbatim.

use crate::datasets::ObservationalDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoding {
    Continuous { mean: f64, std: f64 },
    Discrete { levels: Vec<f64> },
    Constant { value: f64 },
}

impl ColumnEncoding {
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Continuous { .. } => 1,
            ColumnEncoding::Discrete { levels } => levels.len(),
            ColumnEncoding::Constant { .. } => 0,
        }
    }

    /// Fits the encoding of one column.
    ///
    /// `max_levels` bounds how many distinct values a column may have to be
    /// treated as discrete; 0 disables discrete detection. A constant column is
    /// accepted only when `allow_constant` is set.
    pub fn fit(
        values: &[f64],
        name: &str,
        max_levels: usize,
        allow_constant: bool,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Training(format!("column '{name}' is empty")));
        }
        let mut distinct: Vec<f64> = Vec::new();
        for &v in values {
            if !distinct.contains(&v) {
                distinct.push(v);
                if distinct.len() > max_levels.max(1) {
                    break;
                }
            }
        }
        if distinct.len() == 1 {
            return if allow_constant {
                Ok(ColumnEncoding::Constant { value: distinct[0] })
            } else {
                Err(Error::Training(format!(
                    "column '{name}' has zero variance"
                )))
            };
        }
        if distinct.len() <= max_levels {
            distinct.sort_by(f64::total_cmp);
            return Ok(ColumnEncoding::Discrete { levels: distinct });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::Training(format!(
                "column '{name}' has zero variance"
            )));
        }
        Ok(ColumnEncoding::Continuous { mean, std })
    }
}

/// Layout of an encoded data row: every covariate, then the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RowCodec {
    pub columns: Vec<ColumnEncoding>,
}

impl RowCodec {
    pub fn fit(data: &ObservationalDataset, max_levels: usize) -> Result<Self> {
        let names = data.data_column_names();
        let q = data.dim();
        let columns = (0..=q)
            .map(|c| ColumnEncoding::fit(&data.data_column(c), &names[c], max_levels, c == q))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowCodec { columns })
    }

    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    pub fn data_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn encode_row(&self, data: &ObservationalDataset, row: usize, out: &mut [f64]) {
        let mut k = 0;
        for (c, enc) in self.columns.iter().enumerate() {
            let v = data.data_value(row, c);
            match enc {
                ColumnEncoding::Continuous { mean, std } => {
                    out[k] = (v - mean) / std;
                }
                ColumnEncoding::Discrete { levels } => {
                    let hit = nearest_level(levels, v);
                    for (j, slot) in out[k..k + levels.len()].iter_mut().enumerate() {
                        *slot = if j == hit { 1.0 } else { 0.0 };
                    }
                }
                ColumnEncoding::Constant { .. } => {}
            }
            k += enc.width();
        }
    }

    pub fn encode(&self, data: &ObservationalDataset, rows: &[usize]) -> Matrix {
        let w = self.encoded_width();
        let mut m = Matrix::zeros(rows.len(), w);
        for (r, &i) in rows.iter().enumerate() {
            self.encode_row(data, i, m.row_mut(r));
        }
        m
    }

    /// Applies softmax over every discrete segment in place.
    pub fn activate(&self, raw: &mut Matrix) {
        for row in 0..raw.rows() {
            let r = raw.row_mut(row);
            let mut k = 0;
            for enc in &self.columns {
                if let ColumnEncoding::Discrete { levels } = enc {
                    softmax(&mut r[k..k + levels.len()]);
                }
                k += enc.width();
            }
        }
    }

    /// Maps a gradient taken at the activated output back to the raw output.
    pub fn activate_backward(&self, activated: &Matrix, grad: &mut Matrix) {
        for row in 0..grad.rows() {
            let s = activated.row(row);
            let g = grad.row_mut(row);
            let mut k = 0;
            for enc in &self.columns {
                if let ColumnEncoding::Discrete { levels } = enc {
                    let seg = k..k + levels.len();
                    let dot: f64 = s[seg.clone()]
                        .iter()
                        .zip(&g[seg.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for j in seg {
                        g[j] = s[j] * (g[j] - dot);
                    }
                }
                k += enc.width();
            }
        }
    }

    /// Decodes raw generator output into data-space values (covariates, outcome).
    pub fn decode_row(&self, raw: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for (c, enc) in self.columns.iter().enumerate() {
            out[c] = match enc {
                ColumnEncoding::Continuous { mean, std } => raw[k] * std + mean,
                ColumnEncoding::Discrete { levels } => {
                    let seg = &raw[k..k + levels.len()];
                    let best = seg
                        .iter()
                        .enumerate()
                        .fold(0, |b, (j, &v)| if v > seg[b] { j } else { b });
                    levels[best]
                }
                ColumnEncoding::Constant { value } => *value,
            };
            k += enc.width();
        }
    }
}

fn nearest_level(levels: &[f64], v: f64) -> usize {
    levels.iter().enumerate().fold(0, |b, (j, &l)| {
        if (l - v).abs() < (levels[b] - v).abs() {
            j
        } else {
            b
        }
    })
}

fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}
