//! End-to-end runs: load data, train, weight, retrain, allocate and score the
//! decision-blind, decision-aware, rolling-average and oracle policies.

mod report;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use report::{
    evaluate, mdape, EvalReport, FacilityOutcome, Outcome, Policy, PolicyOutcome, ProductReport,
    TrainFingerprint,
};

use crate::allocator::{solve_greedy, AllocationProblem};
use crate::error::{Error, Result};
use crate::ingest::{
    build_feature_panel, clean_records, parse_records, ColumnSchema, LagFeatures,
    DEFAULT_OUTLIER_MULTIPLIER,
};
use crate::model::{DemandModel, FittedModel, Learner, StockFeature};
use crate::par::{self, Execution};
use crate::period::YearMonth;
use crate::synth::{self, TwoClassScenario};
use crate::table::{split_train_eval, FeatureTable};
use crate::weights::{self, group_rows, Budgets, GroupKey, WeightConfig, WeightReport};

pub const DEFAULT_BUDGET_FRACTION: f64 = 0.7;
pub const DEFAULT_ROLLING_WINDOW: usize = 3;

/// Where a run gets its feature table from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    /// Raw stock-report CSV, parsed, cleaned and turned into lag features.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<PathBuf>,
        #[serde(default = "default_lags")]
        lag_months: usize,
        #[serde(default = "default_outlier")]
        outlier_multiplier: f64,
    },
    /// A feature table previously written by `ingest` or `synth`.
    Features {
        path: PathBuf,
    },
    Synth(TwoClassScenario),
}

fn default_lags() -> usize {
    LagFeatures::default().lag_months
}

fn default_outlier() -> f64 {
    DEFAULT_OUTLIER_MULTIPLIER
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Synth(TwoClassScenario::default())
    }
}

/// How the per-(product, period) budget is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// Fraction of the realized gross demand of the group.
    Fraction(f64),
    /// Fixed units per product, the same in every period.
    Units(BTreeMap<String, f64>),
}

impl BudgetRule {
    fn validate(&self) -> Result<()> {
        match self {
            BudgetRule::Fraction(rho) if !(0.0..=1.0).contains(rho) => Err(Error::Config(format!(
                "budget fraction must lie in [0, 1], got {rho}"
            ))),
            BudgetRule::Units(m) => match m.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                Some((p, v)) => Err(Error::Config(format!(
                    "budget for {p} must be >= 0, got {v}"
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Budget for every (product, period) group present in `table`.
    pub fn budgets(&self, table: &FeatureTable) -> Result<Budgets> {
        self.validate()?;
        let rows = table.rows();
        group_rows(table)
            .into_iter()
            .map(|(key, idx)| {
                let b = match self {
                    BudgetRule::Fraction(rho) => {
                        rho * idx.iter().map(|&i| rows[i].target).sum::<f64>()
                    }
                    BudgetRule::Units(m) => {
                        *m.get(&key.product_id).ok_or_else(|| Error::MissingBudget {
                            product: key.product_id.clone(),
                            period: key.period,
                        })?
                    }
                };
                Ok((key, b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Defaults to the latest period in the data.
    pub eval_period: Option<YearMonth>,
    pub input: InputSource,
    /// Defaults to the scenario's fraction for synthetic input and
    /// [`DEFAULT_BUDGET_FRACTION`] otherwise.
    pub budget: Option<BudgetRule>,
    pub learner: Learner,
    pub weights: WeightConfig,
    pub rolling_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_period: None,
            input: InputSource::default(),
            budget: None,
            learner: Learner::default(),
            weights: WeightConfig::default(),
            rolling_window: DEFAULT_ROLLING_WINDOW,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    /// Reads a TOML config; relative input paths are resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.input {
            InputSource::Csv { path, schema, .. } => {
                fix(path);
                if let Some(s) = schema {
                    fix(s);
                }
            }
            InputSource::Features { path } => fix(path),
            InputSource::Synth(_) => {}
        }
    }

    /// Sets the training seed and, for synthetic input, the data seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let InputSource::Synth(s) = &mut self.input {
            s.seed = seed;
        }
    }

    pub fn budget_rule(&self) -> BudgetRule {
        match (&self.budget, &self.input) {
            (Some(b), _) => b.clone(),
            (None, InputSource::Synth(s)) => BudgetRule::Fraction(s.budget_fraction),
            (None, _) => BudgetRule::Fraction(DEFAULT_BUDGET_FRACTION),
        }
    }

    /// The configured stock column, or the inventory column for synthetic
    /// data when none is set.
    pub fn stock_feature(&self) -> StockFeature {
        match (&self.weights.stock_feature, &self.input) {
            (StockFeature(None), InputSource::Synth(s)) => s.stock_feature(),
            (s, _) => *s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rolling_window == 0 {
            return Err(Error::Config("rolling_window must be at least 1".into()));
        }
        self.budget_rule().validate()?;
        self.weights.validate()?;
        if let InputSource::Synth(s) = &self.input {
            s.validate()?;
        }
        Ok(())
    }

    /// Loads and featurizes the configured input.
    pub fn load_table(&self) -> Result<FeatureTable> {
        match &self.input {
            InputSource::Synth(s) => Ok(synth::generate(s, s.periods)?.table),
            InputSource::Features { path } => FeatureTable::read_csv(open(path)?),
            InputSource::Csv {
                path,
                schema,
                lag_months,
                outlier_multiplier,
            } => {
                let schema = match schema {
                    Some(p) => ColumnSchema::from_toml_str(&read_to_string(p)?)?,
                    None => ColumnSchema::default(),
                };
                let parsed = parse_records(open(path)?, &schema)?;
                if !parsed.rejects.is_empty() {
                    log::warn!("{} malformed rows skipped", parsed.rejects.len());
                }
                let cleaned = clean_records(&parsed.records, *outlier_multiplier)?;
                if *lag_months == 0 {
                    return Err(Error::Config("lag_months must be at least 1".into()));
                }
                build_feature_panel(
                    &cleaned.kept,
                    &LagFeatures {
                        lag_months: *lag_months,
                    },
                )
            }
        }
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Allocation of one policy for one product at the evaluation period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRun {
    pub product_id: String,
    pub budget: f64,
    pub facility_ids: Vec<String>,
    /// Gross demand forecast per facility; absent for the oracle.
    pub forecasts: Option<Vec<f64>>,
    /// Realized gross demand.
    pub demand: Vec<f64>,
    /// Realized demand net of stock.
    pub requirement: Vec<f64>,
    pub allocation: Vec<f64>,
}

impl ProductRun {
    pub fn outcome(&self) -> Result<Outcome> {
        evaluate(&self.allocation, &self.requirement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: Policy,
    pub products: Vec<ProductRun>,
}

/// Everything `compare` produces.
#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub report: EvalReport,
    pub weights: WeightReport,
    pub runs: Vec<PolicyRun>,
}

impl CompareOutput {
    /// Writes the report files (see [`write_report`]) plus `weights.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_report(&self.report, dir)?;
        self.weights
            .write_csv(create_file(&dir.join("weights.csv"))?)
    }
}

/// Writes `report.json`, `summary.csv` and `facilities.csv` into `dir`,
/// creating it if needed.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join("report.json");
    fs::write(&path, report.to_json()?).map_err(|source| Error::File { path, source })?;
    report.write_summary_csv(create_file(&dir.join("summary.csv"))?)?;
    report.write_facilities_csv(create_file(&dir.join("facilities.csv"))?)
}

pub fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// A loaded dataset split at the evaluation period, with budgets attached.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: RunConfig,
    train: FeatureTable,
    eval: FeatureTable,
    eval_period: YearMonth,
    budgets: Budgets,
    stock: StockFeature,
    exec: Execution,
}

impl Experiment {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let table = config.load_table()?;
        Self::from_table(config, &table)
    }

    pub fn from_table(config: &RunConfig, table: &FeatureTable) -> Result<Self> {
        config.validate()?;
        let eval_period = match config.eval_period {
            Some(p) => p,
            None => *table.periods().last().ok_or(Error::EmptyInput)?,
        };
        let (train, eval) = split_train_eval(table, eval_period)?;
        if train.is_empty() {
            return Err(Error::Config(format!(
                "no training rows before evaluation period {eval_period}"
            )));
        }
        let stock = config.stock_feature();
        stock.validate(table.dim())?;
        let budgets = config.budget_rule().budgets(table)?;
        Ok(Self {
            config: config.clone(),
            train: train.with_uniform_weights(),
            eval,
            eval_period,
            budgets,
            stock,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn train(&self) -> &FeatureTable {
        &self.train
    }

    pub fn eval(&self) -> &FeatureTable {
        &self.eval
    }

    pub fn eval_period(&self) -> YearMonth {
        self.eval_period
    }

    pub fn budgets(&self) -> &Budgets {
        &self.budgets
    }

    fn weight_config(&self) -> WeightConfig {
        WeightConfig {
            stock_feature: self.stock,
            ..self.config.weights.clone()
        }
    }

    /// Learner fit with uniform weights.
    pub fn fit_blind(&self) -> Result<FittedModel> {
        self.config
            .learner
            .fit(&self.train, self.config.seed, self.exec)
    }

    pub fn compute_weights(&self, blind: &dyn DemandModel) -> Result<WeightReport> {
        weights::compute_weights_with(
            &self.train,
            blind,
            &self.budgets,
            &self.weight_config(),
            self.exec,
        )
    }

    /// Same learner, seed and rows as [`fit_blind`](Self::fit_blind); only
    /// the row weights differ.
    pub fn fit_aware(&self, report: &WeightReport) -> Result<(FittedModel, FeatureTable)> {
        let weighted = weights::apply_weights(&self.train, report)?;
        let model = self
            .config
            .learner
            .fit(&weighted, self.config.seed, self.exec)?;
        Ok((model, weighted))
    }

    fn eval_groups(&self) -> Vec<(GroupKey, Vec<usize>)> {
        group_rows(&self.eval).into_iter().collect()
    }

    fn product_run(
        &self,
        key: &GroupKey,
        idx: &[usize],
        forecasts: Option<Vec<f64>>,
        scenarios: Vec<Vec<f64>>,
    ) -> Result<ProductRun> {
        let rows = self.eval.rows();
        let budget = self.budgets[key];
        let problem = AllocationProblem::from_facility_samples(&scenarios, budget)?;
        let result = solve_greedy(&problem);
        Ok(ProductRun {
            product_id: key.product_id.clone(),
            budget,
            facility_ids: idx.iter().map(|&i| rows[i].facility_id.clone()).collect(),
            forecasts,
            demand: idx.iter().map(|&i| rows[i].target).collect(),
            requirement: idx
                .iter()
                .map(|&i| self.stock.requirement(&rows[i]))
                .collect(),
            allocation: result.allocation,
        })
    }

    /// Allocates from a model's netted demand scenarios.
    pub fn run_model(&self, policy: Policy, model: &dyn DemandModel) -> Result<PolicyRun> {
        let groups = self.eval_groups();
        let rows = self.eval.rows();
        let products = par::try_map_slice(self.exec, &groups, |(key, idx)| {
            let forecasts = idx
                .iter()
                .map(|&i| model.predict_point(&rows[i].features))
                .collect::<Result<Vec<_>>>()?;
            let scenarios = idx
                .iter()
                .map(|&i| self.stock.scenarios(model, &rows[i].features))
                .collect::<Result<Vec<_>>>()?;
            self.product_run(key, idx, Some(forecasts), scenarios)
        })?;
        Ok(PolicyRun { policy, products })
    }

    pub fn run_decision_blind(&self) -> Result<PolicyRun> {
        self.run_model(Policy::DecisionBlind, &self.fit_blind()?)
    }

    pub fn run_decision_aware(&self) -> Result<PolicyRun> {
        let blind = self.fit_blind()?;
        let report = self.compute_weights(&blind)?;
        let (aware, _) = self.fit_aware(&report)?;
        self.run_model(Policy::DecisionAware, &aware)
    }

    /// Forecasts each facility's demand as the mean of its last `window`
    /// observed months before the evaluation period (zero without history)
    /// and allocates against that single scenario.
    pub fn run_rolling_average(&self, window: usize) -> Result<PolicyRun> {
        if window == 0 {
            return Err(Error::Config("rolling window must be at least 1".into()));
        }
        let mut history: HashMap<(&str, &str), Vec<(YearMonth, f64)>> = HashMap::new();
        for r in self.train.rows() {
            history
                .entry((&r.facility_id, &r.product_id))
                .or_default()
                .push((r.period, r.target));
        }
        for h in history.values_mut() {
            h.sort_by_key(|(p, _)| *p);
        }
        let groups = self.eval_groups();
        let rows = self.eval.rows();
        let products = par::try_map_slice(self.exec, &groups, |(key, idx)| {
            let forecasts: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let r = &rows[i];
                    let obs: Vec<f64> = history
                        .get(&(r.facility_id.as_str(), r.product_id.as_str()))
                        .map(|h| h.iter().map(|(_, y)| *y).collect())
                        .unwrap_or_default();
                    rolling_average_forecast(&obs, window)
                })
                .collect();
            let scenarios = idx
                .iter()
                .zip(&forecasts)
                .map(|(&i, &f)| vec![self.stock.net(f, &rows[i].features)])
                .collect();
            self.product_run(key, idx, Some(forecasts), scenarios)
        })?;
        Ok(PolicyRun {
            policy: Policy::RollingAverage,
            products,
        })
    }

    /// Perfect foresight: allocates against the realized requirement.
    pub fn run_oracle(&self) -> Result<PolicyRun> {
        let groups = self.eval_groups();
        let rows = self.eval.rows();
        let products = par::try_map_slice(self.exec, &groups, |(key, idx)| {
            let scenarios = idx
                .iter()
                .map(|&i| vec![self.stock.requirement(&rows[i])])
                .collect();
            self.product_run(key, idx, None, scenarios)
        })?;
        Ok(PolicyRun {
            policy: Policy::Oracle,
            products,
        })
    }

    /// Replaces the realized demand and requirement of a stored run with the
    /// values in this experiment's evaluation period, matching facilities by
    /// id.
    pub fn rescore(&self, run: &PolicyRun) -> Result<PolicyRun> {
        let rows = self.eval.rows();
        let index: HashMap<(&str, &str), usize> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.product_id.as_str(), r.facility_id.as_str()), i))
            .collect();
        let mut out = run.clone();
        for p in &mut out.products {
            if p.allocation.len() != p.facility_ids.len() {
                return Err(Error::shape(
                    p.facility_ids.len(),
                    p.allocation.len(),
                    "allocation vs facilities",
                ));
            }
            let idx = p
                .facility_ids
                .iter()
                .map(|f| {
                    index
                        .get(&(p.product_id.as_str(), f.as_str()))
                        .copied()
                        .ok_or_else(|| {
                            Error::Format(format!(
                                "facility {f} / product {} has no row at {}",
                                p.product_id, self.eval_period
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            p.demand = idx.iter().map(|&i| rows[i].target).collect();
            p.requirement = idx
                .iter()
                .map(|&i| self.stock.requirement(&rows[i]))
                .collect();
        }
        Ok(out)
    }

    /// Runs all four policies on the evaluation period.
    pub fn compare(&self) -> Result<CompareOutput> {
        let blind = self.fit_blind()?;
        let weights = self.compute_weights(&blind)?;
        let (aware, weighted) = self.fit_aware(&weights)?;
        let runs = vec![
            self.run_model(Policy::DecisionBlind, &blind)?,
            self.run_model(Policy::DecisionAware, &aware)?,
            self.run_rolling_average(self.config.rolling_window)?,
            self.run_oracle()?,
        ];
        let learner = self.config.learner.name();
        let training = vec![
            (
                Policy::DecisionBlind,
                TrainFingerprint::new(learner, self.config.seed, &self.train.weights()),
            ),
            (
                Policy::DecisionAware,
                TrainFingerprint::new(learner, self.config.seed, &weighted.weights()),
            ),
        ];
        let mut report = build_report(learner, self.config.seed, self.eval_period, &runs)?;
        report.training = training;
        Ok(CompareOutput {
            report,
            weights,
            runs,
        })
    }
}

/// Mean of the last `window` values of a chronological series; zero when the
/// series is empty.
pub fn rolling_average_forecast(history: &[f64], window: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Scores policy runs that share an evaluation period and product set.
pub fn build_report(
    learner: &str,
    seed: u64,
    eval_period: YearMonth,
    runs: &[PolicyRun],
) -> Result<EvalReport> {
    let mut products: BTreeMap<&str, ProductReport> = BTreeMap::new();
    let mut facilities = Vec::new();
    for run in runs {
        for p in &run.products {
            let outcome = p.outcome()?;
            let mdape = match &p.forecasts {
                Some(f) => mdape(f, &p.demand)?,
                None => None,
            };
            let entry = products
                .entry(p.product_id.as_str())
                .or_insert_with(|| ProductReport {
                    product_id: p.product_id.clone(),
                    n_facilities: p.facility_ids.len(),
                    budget: p.budget,
                    total_requirement: p.requirement.iter().sum(),
                    policies: Vec::new(),
                });
            entry.policies.push(PolicyOutcome {
                policy: run.policy,
                allocated: p.allocation.iter().sum(),
                unmet_units: outcome.unmet_units,
                unmet_demand_pct: outcome.unmet_demand_pct,
                mdape,
            });
            for (j, fid) in p.facility_ids.iter().enumerate() {
                facilities.push(FacilityOutcome {
                    product_id: p.product_id.clone(),
                    facility_id: fid.clone(),
                    policy: run.policy,
                    forecast: p.forecasts.as_ref().map(|f| f[j]),
                    requirement: p.requirement[j],
                    allocation: p.allocation[j],
                    shortfall: (p.requirement[j] - p.allocation[j]).max(0.0),
                });
            }
        }
    }
    let products: Vec<ProductReport> = products.into_values().collect();
    let mean_unmet_demand_pct = runs
        .iter()
        .map(|run| {
            let vals: Vec<f64> = products
                .iter()
                .filter_map(|p| p.outcome(run.policy).and_then(|o| o.unmet_demand_pct))
                .collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            (run.policy, mean)
        })
        .collect();
    Ok(EvalReport {
        learner: learner.to_string(),
        seed,
        eval_period,
        products,
        mean_unmet_demand_pct,
        training: Vec::new(),
        facilities,
    })
}

/// Runs every policy for a config.
pub fn compare(config: &RunConfig) -> Result<CompareOutput> {
    Experiment::new(config)?.compare()
}

pub fn run_decision_blind(config: &RunConfig) -> Result<PolicyRun> {
    Experiment::new(config)?.run_decision_blind()
}

pub fn run_decision_aware(config: &RunConfig) -> Result<PolicyRun> {
    Experiment::new(config)?.run_decision_aware()
}

pub fn run_rolling_average(config: &RunConfig, window: usize) -> Result<PolicyRun> {
    Experiment::new(config)?.run_rolling_average(window)
}
