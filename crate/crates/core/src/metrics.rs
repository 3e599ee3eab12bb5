//! Average percent underperformance (APU) over a method x metric table.
//!
//! For every column the gap of a method to the column maximum is expressed as
//! a percentage of that maximum; a method's APU is the mean gap over its row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub values: Vec<f64>,
}

/// Rows are methods, columns are task+metric pairs, values are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    #[serde(default)]
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApuEntry {
    pub method: String,
    pub apu: f64,
}

impl MetricTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.columns.is_empty() {
            return Err(Error::Empty(format!("metric table '{}'", self.name)));
        }
        for row in &self.rows {
            if row.values.len() != self.columns.len() {
                return Err(Error::Dimension(format!(
                    "row '{}' has {} values for {} columns",
                    row.method,
                    row.values.len(),
                    self.columns.len()
                )));
            }
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row '{}'", row.method)));
            }
        }
        Ok(())
    }

    pub fn column_maxima(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let maxima: Vec<f64> = (0..self.columns.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r.values[c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        if let Some(c) = maxima.iter().position(|&m| m <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "column '{}' has non-positive maximum",
                self.columns[c]
            )));
        }
        Ok(maxima)
    }

    pub fn row_index(&self, method: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.method == method)
    }

    /// APU of every row, in table order.
    pub fn apu_all(&self) -> Result<Vec<ApuEntry>> {
        let maxima = self.column_maxima()?;
        Ok(self
            .rows
            .iter()
            .map(|row| ApuEntry {
                method: row.method.clone(),
                apu: row_apu(&row.values, &maxima),
            })
            .collect())
    }
}

fn row_apu(values: &[f64], maxima: &[f64]) -> f64 {
    let total: f64 = values
        .iter()
        .zip(maxima)
        .map(|(v, m)| 100.0 * (m - v) / m)
        .sum();
    total / values.len() as f64
}

/// APU of row `row`.
pub fn apu(table: &MetricTable, row: usize) -> Result<f64> {
    let maxima = table.column_maxima()?;
    let values = &table
        .rows
        .get(row)
        .ok_or_else(|| Error::InvalidParameter(format!("row {row} out of range")))?
        .values;
    Ok(row_apu(values, &maxima))
}
