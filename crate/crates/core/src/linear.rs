//! Weighted least-squares linear learner.
//!
//! This is the deliberately misspecified model of the two-class synthetic
//! scenario. It yields a single demand scenario (its clamped point forecast).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DemandModel;
use crate::table::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Minimizes `sum_i w_i (y_i - b - c.x_i)^2`. Rank-deficient designs get the
/// minimum-norm solution.
pub fn fit_weighted(table: &FeatureTable) -> Result<LinearModel> {
    let rows: Vec<_> = table.rows().iter().filter(|r| r.weight > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let d = table.dim();
    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(n, d + 1);
    let mut b = DVector::<f64>::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        let s = r.weight.sqrt();
        a[(i, 0)] = s;
        for (j, &v) in r.features.iter().enumerate() {
            a[(i, j + 1)] = s * v;
        }
        b[i] = s * r.target;
    }
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * (n.max(d + 1) as f64) * f64::EPSILON;
    let beta = svd
        .solve(&b, tol)
        .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

impl DemandModel for LinearModel {
    fn feature_dim(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::shape(
                self.coefficients.len(),
                x.len(),
                "linear input",
            ));
        }
        Ok(self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>())
    }

    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.predict_point(x)?.max(0.0)])
    }
}
