use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::allocator::shortfall;
use crate::error::{Error, Result};
use crate::period::YearMonth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    DecisionBlind,
    DecisionAware,
    RollingAverage,
    Oracle,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::DecisionBlind,
        Policy::DecisionAware,
        Policy::RollingAverage,
        Policy::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::DecisionBlind => "decision_blind",
            Policy::DecisionAware => "decision_aware",
            Policy::RollingAverage => "rolling_average",
            Policy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unmet demand of one allocation against realized requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub unmet_units: f64,
    /// `None` when the realized requirement totals zero.
    pub unmet_demand_pct: Option<f64>,
}

/// `100 * sum max(xi - a, 0) / sum xi`.
pub fn evaluate(allocation: &[f64], realized: &[f64]) -> Result<Outcome> {
    let unmet = shortfall(allocation, realized)?;
    let total: f64 = realized.iter().sum();
    Ok(Outcome {
        unmet_units: unmet,
        unmet_demand_pct: (total > 0.0).then(|| 100.0 * unmet / total),
    })
}

/// Median absolute percentage error over rows with positive actual demand.
pub fn mdape(predicted: &[f64], actual: &[f64]) -> Result<Option<f64>> {
    if predicted.len() != actual.len() {
        return Err(Error::shape(
            actual.len(),
            predicted.len(),
            "predictions vs actuals",
        ));
    }
    let mut ape: Vec<f64> = predicted
        .iter()
        .zip(actual)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&p, &y)| 100.0 * (p - y).abs() / y)
        .collect();
    if ape.is_empty() {
        return Ok(None);
    }
    ape.sort_by(f64::total_cmp);
    let n = ape.len();
    Ok(Some(if n % 2 == 1 {
        ape[n / 2]
    } else {
        0.5 * (ape[n / 2 - 1] + ape[n / 2])
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: Policy,
    pub allocated: f64,
    pub unmet_units: f64,
    pub unmet_demand_pct: Option<f64>,
    pub mdape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityOutcome {
    pub product_id: String,
    pub facility_id: String,
    pub policy: Policy,
    pub forecast: Option<f64>,
    pub requirement: f64,
    pub allocation: f64,
    pub shortfall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub product_id: String,
    pub n_facilities: usize,
    pub budget: f64,
    pub total_requirement: f64,
    pub policies: Vec<PolicyOutcome>,
}

impl ProductReport {
    pub fn outcome(&self, policy: Policy) -> Option<&PolicyOutcome> {
        self.policies.iter().find(|p| p.policy == policy)
    }
}

/// Summary of what a learner was trained on; the decision-blind and
/// decision-aware runs differ only in the weight fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFingerprint {
    pub learner: String,
    pub seed: u64,
    pub n_rows: usize,
    pub weight_sum: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub weight_digest: String,
}

impl TrainFingerprint {
    pub fn new(learner: &str, seed: u64, weights: &[f64]) -> Self {
        // FNV-1a over the weight bit patterns
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in weights {
            for b in w.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        Self {
            learner: learner.to_string(),
            seed,
            n_rows: weights.len(),
            weight_sum: weights.iter().sum(),
            weight_min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            weight_max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weight_digest: format!("{h:016x}"),
        }
    }

    /// Names of fields that differ, other than the weight summary.
    pub fn non_weight_differences(&self, other: &Self) -> Vec<&'static str> {
        let mut d = Vec::new();
        if self.learner != other.learner {
            d.push("learner");
        }
        if self.seed != other.seed {
            d.push("seed");
        }
        if self.n_rows != other.n_rows {
            d.push("n_rows");
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub learner: String,
    pub seed: u64,
    pub eval_period: YearMonth,
    pub products: Vec<ProductReport>,
    /// Mean `unmet_demand_pct` across products with a defined percentage.
    pub mean_unmet_demand_pct: Vec<(Policy, Option<f64>)>,
    pub training: Vec<(Policy, TrainFingerprint)>,
    #[serde(skip)]
    pub facilities: Vec<FacilityOutcome>,
}

impl EvalReport {
    pub fn mean_pct(&self, policy: Policy) -> Option<f64> {
        self.mean_unmet_demand_pct
            .iter()
            .find(|(p, _)| *p == policy)
            .and_then(|(_, v)| *v)
    }

    /// Whether perfect foresight is no worse than every other policy on every
    /// product, up to `tol` units.
    pub fn oracle_dominates(&self, tol: f64) -> bool {
        self.products.iter().all(|p| {
            let Some(oracle) = p.outcome(Policy::Oracle) else {
                return true;
            };
            p.policies
                .iter()
                .all(|o| oracle.unmet_units <= o.unmet_units + tol)
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// `product_id, policy, allocated, unmet_units, unmet_demand_pct, mdape`;
    /// undefined values are written as `NA`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "product_id",
            "policy",
            "allocated",
            "unmet_units",
            "unmet_demand_pct",
            "mdape",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for p in &self.products {
            for o in &p.policies {
                w.write_record([
                    p.product_id.clone(),
                    o.policy.to_string(),
                    o.allocated.to_string(),
                    o.unmet_units.to_string(),
                    opt(o.unmet_demand_pct),
                    opt(o.mdape),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_facilities_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "product_id",
            "facility_id",
            "policy",
            "forecast",
            "requirement",
            "allocation",
            "shortfall",
        ])?;
        for f in &self.facilities {
            w.write_record([
                f.product_id.clone(),
                f.facility_id.clone(),
                f.policy.to_string(),
                f.forecast
                    .map_or_else(|| "NA".to_string(), |v| v.to_string()),
                f.requirement.to_string(),
                f.allocation.to_string(),
                f.shortfall.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
