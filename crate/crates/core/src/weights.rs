//! Decision-aware training weights.
//!
//! First-order expansion of the decision loss around the reference
//! allocation gives a linear surrogate whose per-row coefficient is
//! `w = J^T g`, where `g` is the shortfall subgradient at the reference
//! allocation and `J = d a* / d xi` is the policy Jacobian. Bounding the
//! surrogate by its absolute value turns it into a weighted regression loss
//! with row weights `|w|`, so the same learner can be retrained on reweighted
//! rows.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::allocator::{solve_greedy, AllocationProblem};
use crate::error::{Error, Result};
use crate::forest::{train_forest_with, Forest, ForestParams};
use crate::model::{DemandModel, StockFeature};
use crate::par::{self, Execution};
use crate::period::YearMonth;
use crate::table::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// `J = I`; no extra solves.
    #[default]
    Identity,
    /// Diagonal by finite differences, off-diagonal zero.
    DiagonalFd,
    /// Full matrix by finite differences.
    FullFd,
}

impl std::str::FromStr for JacobianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(JacobianMode::Identity),
            "diagonal_fd" => Ok(JacobianMode::DiagonalFd),
            "full_fd" => Ok(JacobianMode::FullFd),
            other => Err(Error::Config(format!("unknown jacobian mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Rescale so the final weights average to one.
    MeanOne,
}

/// Where the reference allocation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPoint {
    /// SAA over the initial model's scenarios at each row.
    #[default]
    Forecast,
    /// Perfect-foresight allocation on the realized requirement.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub jacobian_mode: JacobianMode,
    /// Finite-difference step in demand units; `None` uses 1% of the mean
    /// sampled demand of each problem.
    pub fd_step: Option<f64>,
    pub weight_floor: f64,
    pub normalization: Normalization,
    pub expansion_point: ExpansionPoint,
    pub stock_feature: StockFeature,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            jacobian_mode: JacobianMode::Identity,
            fd_step: None,
            weight_floor: 0.05,
            normalization: Normalization::None,
            expansion_point: ExpansionPoint::Forecast,
            stock_feature: StockFeature::default(),
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.fd_step {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("fd_step must be positive, got {h}")));
            }
        }
        if !(self.weight_floor.is_finite() && self.weight_floor >= 0.0) {
            return Err(Error::Config(format!(
                "weight_floor must be >= 0, got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }

    fn step_for(&self, problem: &AllocationProblem) -> f64 {
        self.fd_step.unwrap_or_else(|| {
            let mean = problem.mean_demand();
            if mean > 0.0 {
                1e-2 * mean
            } else {
                1e-2
            }
        })
    }
}

/// Subgradient of `sum_n max(xi_n - a_n, 0)` in `a`: `-1` where demand is
/// unmet, `0` otherwise (including exactly met demand).
pub fn loss_gradient(a: &[f64], xi_star: &[f64]) -> Result<Vec<f64>> {
    if a.len() != xi_star.len() {
        return Err(Error::shape(xi_star.len(), a.len(), "allocation vs demand"));
    }
    Ok(a.iter()
        .zip(xi_star)
        .map(|(&ai, &x)| if x > ai { -1.0 } else { 0.0 })
        .collect())
}

/// Row-major `J[n][m] = d a*_n / d xi_m`.
pub type Jacobian = Vec<Vec<f64>>;

pub fn policy_jacobian(problem: &AllocationProblem, config: &WeightConfig) -> Result<Jacobian> {
    policy_jacobian_with(problem, config, Execution::default())
}

/// Estimates the sensitivity of the greedy allocation to each facility's
/// demand. A perturbation of facility `m` shifts all of its scenarios by the
/// same amount. Central differences are used unless the downward shift would
/// cross zero demand, in which case the forward difference is taken.
pub fn policy_jacobian_with(
    problem: &AllocationProblem,
    config: &WeightConfig,
    exec: Execution,
) -> Result<Jacobian> {
    config.validate()?;
    let n = problem.n_facilities();
    let identity = || {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    };
    if config.jacobian_mode == JacobianMode::Identity {
        return Ok(identity());
    }
    let h = config.step_for(problem);
    let base = solve_greedy(problem).allocation;
    let columns: Vec<Vec<f64>> = par::map_range(exec, n, |m| {
        let min_demand = problem
            .samples()
            .iter()
            .map(|s| s[m])
            .fold(f64::INFINITY, f64::min);
        let up = solve_greedy(&problem.shifted(m, h)).allocation;
        if min_demand >= h {
            let down = solve_greedy(&problem.shifted(m, -h)).allocation;
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect()
        } else {
            up.iter().zip(&base).map(|(u, b)| (u - b) / h).collect()
        }
    });
    let mut jac = vec![vec![0.0; n]; n];
    for (m, col) in columns.iter().enumerate() {
        for (row, &v) in jac.iter_mut().zip(col) {
            row[m] = v;
        }
    }
    if config.jacobian_mode == JacobianMode::DiagonalFd {
        for (i, row) in jac.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(jac)
}

/// `J^T g`.
pub fn transpose_apply(jac: &Jacobian, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|m| jac.iter().zip(g).map(|(row, &gi)| row[m] * gi).sum())
        .collect()
}

/// One allocation problem per (product, period).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub product_id: String,
    pub period: YearMonth,
}

pub type Budgets = BTreeMap<GroupKey, f64>;

/// Groups row indices by (product, period), preserving table order.
pub fn group_rows(table: &FeatureTable) -> BTreeMap<GroupKey, Vec<usize>> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows().iter().enumerate() {
        groups
            .entry(GroupKey {
                product_id: r.product_id.clone(),
                period: r.period,
            })
            .or_default()
            .push(i);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub row: usize,
    pub period: YearMonth,
    pub facility_id: String,
    pub product_id: String,
    pub requirement: f64,
    pub reference_allocation: f64,
    pub gradient: f64,
    pub raw_weight: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub product_id: String,
    pub period: YearMonth,
    pub budget: f64,
    pub n_facilities: usize,
    pub jacobian: JacobianMode,
    pub reference_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub entries: Vec<WeightEntry>,
    pub groups: Vec<GroupSummary>,
}

#[derive(Serialize, Deserialize)]
struct WeightCsvRow {
    period: YearMonth,
    facility_id: String,
    product_id: String,
    g: f64,
    raw_w: f64,
    final_weight: f64,
}

impl WeightReport {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// CSV with columns `period, facility_id, product_id, g, raw_w, final_weight`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.entries.is_empty() {
            w.write_record([
                "period",
                "facility_id",
                "product_id",
                "g",
                "raw_w",
                "final_weight",
            ])?;
        }
        for e in &self.entries {
            w.serialize(WeightCsvRow {
                period: e.period,
                facility_id: e.facility_id.clone(),
                product_id: e.product_id.clone(),
                g: e.gradient,
                raw_w: e.raw_weight,
                final_weight: e.weight,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`WeightReport::write_csv`]. Fields not in
    /// the CSV come back as NaN, group summaries empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for (i, rec) in rdr.deserialize::<WeightCsvRow>().enumerate() {
            let r = rec?;
            entries.push(WeightEntry {
                row: i,
                period: r.period,
                facility_id: r.facility_id,
                product_id: r.product_id,
                requirement: f64::NAN,
                reference_allocation: f64::NAN,
                gradient: r.g,
                raw_weight: r.raw_w,
                weight: r.final_weight,
            });
        }
        Ok(Self {
            entries,
            groups: Vec::new(),
        })
    }
}

pub fn compute_weights(
    train: &FeatureTable,
    initial: &dyn DemandModel,
    budgets: &Budgets,
    config: &WeightConfig,
) -> Result<WeightReport> {
    compute_weights_with(train, initial, budgets, config, Execution::default())
}

/// Computes one weight per training row.
///
/// For every (product, period) group: build the SAA problem from the initial
/// model's scenarios (or the realized requirement, see [`ExpansionPoint`]),
/// solve it once for the reference allocation, take the shortfall
/// subgradient against the realized requirement, map it through the policy
/// Jacobian and floor the magnitude at `weight_floor`. Groups missing some of
/// the product's facilities fall back to the identity Jacobian.
pub fn compute_weights_with(
    train: &FeatureTable,
    initial: &dyn DemandModel,
    budgets: &Budgets,
    config: &WeightConfig,
    exec: Execution,
) -> Result<WeightReport> {
    config.validate()?;
    config.stock_feature.validate(train.dim())?;
    if initial.feature_dim() != train.dim() {
        return Err(Error::shape(
            initial.feature_dim(),
            train.dim(),
            "model vs table",
        ));
    }
    let rows = train.rows();
    let groups: Vec<(GroupKey, Vec<usize>)> = group_rows(train).into_iter().collect();
    for (key, _) in &groups {
        if !budgets.contains_key(key) {
            return Err(Error::MissingBudget {
                product: key.product_id.clone(),
                period: key.period,
            });
        }
    }
    let mut universe: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for r in rows {
        universe
            .entry(&r.product_id)
            .or_default()
            .insert(&r.facility_id);
    }

    let stock = config.stock_feature;
    let per_group = par::try_map_range(exec, groups.len(), |gi| -> Result<_> {
        let (key, idx) = &groups[gi];
        let budget = budgets[key];
        let realized: Vec<f64> = idx.iter().map(|&i| stock.requirement(&rows[i])).collect();
        let problem = match config.expansion_point {
            ExpansionPoint::Forecast => {
                let scenarios = idx
                    .iter()
                    .map(|&i| stock.scenarios(initial, &rows[i].features))
                    .collect::<Result<Vec<_>>>()?;
                AllocationProblem::from_facility_samples(&scenarios, budget)?
            }
            ExpansionPoint::Realized => AllocationProblem::new(vec![realized.clone()], budget)?,
        };
        let reference = solve_greedy(&problem);
        let g = loss_gradient(&reference.allocation, &realized)?;
        let full_panel = idx.len() == universe[key.product_id.as_str()].len();
        let mode = if full_panel {
            config.jacobian_mode
        } else {
            JacobianMode::Identity
        };
        let raw = if mode == JacobianMode::Identity {
            g.clone()
        } else {
            let cfg = WeightConfig {
                jacobian_mode: mode,
                ..config.clone()
            };
            // group-level parallelism already saturates the pool
            let jac = policy_jacobian_with(&problem, &cfg, Execution::Sequential)?;
            transpose_apply(&jac, &g)
        };
        let entries: Vec<WeightEntry> = idx
            .iter()
            .enumerate()
            .map(|(j, &i)| WeightEntry {
                row: i,
                period: key.period,
                facility_id: rows[i].facility_id.clone(),
                product_id: key.product_id.clone(),
                requirement: realized[j],
                reference_allocation: reference.allocation[j],
                gradient: g[j],
                raw_weight: raw[j],
                weight: raw[j].abs().max(config.weight_floor),
            })
            .collect();
        let summary = GroupSummary {
            product_id: key.product_id.clone(),
            period: key.period,
            budget,
            n_facilities: idx.len(),
            jacobian: mode,
            reference_objective: reference.objective,
        };
        Ok((entries, summary))
    })?;

    let mut entries = Vec::with_capacity(rows.len());
    let mut summaries = Vec::with_capacity(per_group.len());
    for (e, s) in per_group {
        entries.extend(e);
        summaries.push(s);
    }
    entries.sort_by_key(|e| e.row);

    if config.normalization == Normalization::MeanOne && !entries.is_empty() {
        let mean = entries.iter().map(|e| e.weight).sum::<f64>() / entries.len() as f64;
        if mean > 0.0 {
            for e in &mut entries {
                e.weight /= mean;
            }
        }
    }
    Ok(WeightReport {
        entries,
        groups: summaries,
    })
}

/// Copy of `train` carrying the report's final weights, matched by
/// (facility, product, period).
pub fn apply_weights(train: &FeatureTable, report: &WeightReport) -> Result<FeatureTable> {
    let lookup: HashMap<(&str, &str, YearMonth), f64> = report
        .entries
        .iter()
        .map(|e| {
            (
                (e.facility_id.as_str(), e.product_id.as_str(), e.period),
                e.weight,
            )
        })
        .collect();
    let weights = train
        .rows()
        .iter()
        .map(|r| {
            lookup
                .get(&(r.facility_id.as_str(), r.product_id.as_str(), r.period))
                .copied()
                .ok_or_else(|| Error::MissingWeight {
                    facility: r.facility_id.clone(),
                    product: r.product_id.clone(),
                    period: r.period,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = train.clone();
    out.set_weights(&weights)?;
    Ok(out)
}

pub fn retrain_weighted(
    train: &FeatureTable,
    report: &WeightReport,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    retrain_weighted_with(train, report, params, seed, Execution::default())
}

pub fn retrain_weighted_with(
    train: &FeatureTable,
    report: &WeightReport,
    params: &ForestParams,
    seed: u64,
    exec: Execution,
) -> Result<Forest> {
    train_forest_with(&apply_weights(train, report)?, params, seed, exec)
}
