//! Multitask feature/target tables shared by ingestion, synthetic data and the
//! learners.
//!
//! CSV layout is fixed: `facility_id, product_id, period, f_0 .. f_{d-1},
//! target, weight`.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::period::YearMonth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub facility_id: String,
    pub product_id: String,
    pub period: YearMonth,
    pub features: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

impl FeatureRow {
    pub fn new(
        facility_id: impl Into<String>,
        product_id: impl Into<String>,
        period: YearMonth,
        features: Vec<f64>,
        target: f64,
    ) -> Self {
        Self {
            facility_id: facility_id.into(),
            product_id: product_id.into(),
            period,
            features,
            target,
            weight: 1.0,
        }
    }
}

/// Rows of a fixed feature dimension, optionally bounded by a horizon period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    dim: usize,
    horizon: Option<YearMonth>,
    rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            horizon: None,
            rows: Vec::new(),
        }
    }

    pub fn with_horizon(dim: usize, horizon: YearMonth) -> Self {
        Self {
            dim,
            horizon: Some(horizon),
            rows: Vec::new(),
        }
    }

    /// Builds a table from rows, checking every table invariant.
    pub fn from_rows(dim: usize, rows: Vec<FeatureRow>) -> Result<Self> {
        let mut table = Self::new(dim);
        for row in rows {
            table.push(row)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.features.len() != self.dim {
            return Err(Error::shape(self.dim, row.features.len(), "feature row"));
        }
        if !(row.weight.is_finite() && row.weight >= 0.0) {
            return Err(Error::InvalidWeight {
                row: self.rows.len(),
                value: row.weight,
            });
        }
        if let Some(h) = self.horizon {
            if row.period > h {
                return Err(Error::Config(format!(
                    "row period {} exceeds table horizon {h}",
                    row.period
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> Option<YearMonth> {
        self.horizon
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn periods(&self) -> BTreeSet<YearMonth> {
        self.rows.iter().map(|r| r.period).collect()
    }

    pub fn products(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.product_id.as_str()).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weight).collect()
    }

    /// Replaces every row weight. Lengths must match and weights must be
    /// finite and nonnegative.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.rows.len() {
            return Err(Error::shape(
                self.rows.len(),
                weights.len(),
                "weight vector",
            ));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidWeight { row: i, value: w });
            }
        }
        for (row, &w) in self.rows.iter_mut().zip(weights) {
            row.weight = w;
        }
        Ok(())
    }

    pub fn with_uniform_weights(&self) -> Self {
        let mut out = self.clone();
        for row in &mut out.rows {
            row.weight = 1.0;
        }
        out
    }

    /// Keeps the rows satisfying `keep`, preserving order and horizon.
    pub fn filter(&self, mut keep: impl FnMut(&FeatureRow) -> bool) -> Self {
        Self {
            dim: self.dim,
            horizon: self.horizon,
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Appends all rows of `other`, which must share the dimension.
    pub fn extend(&mut self, other: FeatureTable) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::shape(self.dim, other.dim, "table concatenation"));
        }
        self.horizon = match (self.horizon, other.horizon) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "facility_id".to_string(),
            "product_id".to_string(),
            "period".to_string(),
        ];
        header.extend((0..self.dim).map(|j| format!("f_{j}")));
        header.push("target".into());
        header.push("weight".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.facility_id.clone(),
                row.product_id.clone(),
                row.period.to_string(),
            ];
            rec.extend(row.features.iter().map(|v| v.to_string()));
            rec.push(row.target.to_string());
            rec.push(row.weight.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 5 {
            return Err(Error::Format(format!(
                "feature table needs at least 5 columns, found {}",
                header.len()
            )));
        }
        let dim = header.len() - 5;
        for (j, name) in header.iter().enumerate() {
            let expected = match j {
                0 => "facility_id".to_string(),
                1 => "product_id".to_string(),
                2 => "period".to_string(),
                j if j == dim + 3 => "target".to_string(),
                j if j == dim + 4 => "weight".to_string(),
                j => format!("f_{}", j - 3),
            };
            if name != expected {
                return Err(Error::Format(format!(
                    "column {j} is `{name}`, expected `{expected}`"
                )));
            }
        }
        let mut table = FeatureTable::new(dim);
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column `{}`: {e}", &header[j]),
                })
            };
            let period = rec[2]
                .parse()
                .map_err(|e: crate::period::ParsePeriodError| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            let features = (3..3 + dim).map(num).collect::<Result<Vec<_>>>()?;
            let mut row = FeatureRow::new(&rec[0], &rec[1], period, features, num(dim + 3)?);
            row.weight = num(dim + 4)?;
            table.push(row)?;
        }
        Ok(table)
    }
}

/// Partitions `table` into rows strictly before `eval_period` and rows at it.
pub fn split_train_eval(
    table: &FeatureTable,
    eval_period: YearMonth,
) -> Result<(FeatureTable, FeatureTable)> {
    if !table.rows.iter().any(|r| r.period == eval_period) {
        return Err(Error::PeriodNotFound(eval_period));
    }
    let train = table.filter(|r| r.period < eval_period);
    let eval = table.filter(|r| r.period == eval_period);
    Ok((train, eval))
}
