//! Learner abstraction shared by the forest and the linear baseline.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forest::{self, Forest, ForestParams};
use crate::linear::{self, LinearModel};
use crate::par::Execution;
use crate::table::FeatureTable;

/// A fitted demand predictor.
pub trait DemandModel: Sync {
    fn feature_dim(&self) -> usize;

    /// Point forecast.
    fn predict_point(&self, x: &[f64]) -> Result<f64>;

    /// Nonnegative demand scenarios for sample average approximation. Every
    /// call on the same model returns the same number of scenarios.
    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Which learner a pipeline run trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    Forest(ForestParams),
    /// Weighted ordinary least squares with an intercept.
    Linear,
}

impl Default for Learner {
    fn default() -> Self {
        Learner::Forest(ForestParams::default())
    }
}

impl Learner {
    pub fn fit(&self, table: &FeatureTable, seed: u64, exec: Execution) -> Result<FittedModel> {
        Ok(match self {
            Learner::Forest(p) => {
                FittedModel::Forest(forest::train_forest_with(table, p, seed, exec)?)
            }
            Learner::Linear => FittedModel::Linear(linear::fit_weighted(table)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Learner::Forest(_) => "forest",
            Learner::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Forest(Forest),
    Linear(LinearModel),
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedModel = serde_json::from_str(s)?;
        if let FittedModel::Forest(f) = &m {
            // re-run the format checks
            Forest::from_json(&f.to_json()?)?;
        }
        Ok(m)
    }

    fn inner(&self) -> &dyn DemandModel {
        match self {
            FittedModel::Forest(f) => f,
            FittedModel::Linear(l) => l,
        }
    }
}

impl DemandModel for FittedModel {
    fn feature_dim(&self) -> usize {
        self.inner().feature_dim()
    }

    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        self.inner().predict_point(x)
    }

    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().predict_samples(x)
    }
}

/// Optional feature column holding on-hand stock. When set, the quantity the
/// allocator must cover for a row is demand net of stock, `max(y - s, 0)`,
/// and demand scenarios are netted the same way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StockFeature(pub Option<usize>);

impl StockFeature {
    pub fn stock(self, features: &[f64]) -> f64 {
        self.0.map_or(0.0, |j| features[j].max(0.0))
    }

    /// Requirement implied by a demand value for a row with these features.
    pub fn net(self, demand: f64, features: &[f64]) -> f64 {
        (demand - self.stock(features)).max(0.0)
    }

    pub fn requirement(self, row: &crate::table::FeatureRow) -> f64 {
        self.net(row.target, &row.features)
    }

    /// The model's demand scenarios for a row, netted of stock.
    pub fn scenarios(self, model: &dyn DemandModel, features: &[f64]) -> Result<Vec<f64>> {
        Ok(model
            .predict_samples(features)?
            .into_iter()
            .map(|v| self.net(v, features))
            .collect())
    }

    pub(crate) fn validate(self, dim: usize) -> Result<()> {
        match self.0 {
            Some(j) if j >= dim => Err(crate::error::Error::Config(format!(
                "stock feature {j} out of range for dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }
}
