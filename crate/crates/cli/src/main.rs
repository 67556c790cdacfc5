use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decaware::ingest::{self, ColumnSchema, LagFeatures};
use decaware::pipeline::{
    self, build_report, create_file, write_report, Experiment, InputSource, Policy, PolicyRun,
    RunConfig,
};
use decaware::synth;
use decaware::weights::{JacobianMode, WeightReport};
use decaware::{Error, ErrorKind, FittedModel, Result};

#[derive(Parser)]
#[command(
    name = "decaware",
    version,
    about = "Decision-aware forecasting and allocation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Policy Jacobian used for decision weights
    #[arg(long, global = true, value_parser = parse_jacobian)]
    jacobian: Option<JacobianMode>,
    /// Budget as a fraction of realized demand
    #[arg(long, global = true)]
    budget_fraction: Option<f64>,
    /// Use a feature table instead of the configured input
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Run on a single thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and clean a stock-report CSV and build lag features
    Ingest {
        /// Raw CSV; defaults to the configured csv input
        #[arg(long)]
        input: Option<PathBuf>,
        /// Column mapping (TOML)
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        lags: Option<usize>,
        #[arg(long)]
        outlier_multiplier: Option<f64>,
    },
    /// Generate the synthetic two-class dataset
    Synth,
    /// Fit the learner with uniform weights on the training periods
    Train,
    /// Compute decision weights from a trained model
    Weights {
        #[arg(long)]
        model: PathBuf,
    },
    /// Refit the learner with decision weights
    Retrain {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Allocate the evaluation-period budget
    Allocate {
        /// Required for the decision-blind and decision-aware policies
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "decision_blind", value_parser = parse_policy)]
        policy: Policy,
    },
    /// Score stored allocations against realized demand
    Evaluate {
        #[arg(long = "allocations", required = true, num_args = 1..)]
        allocations: Vec<PathBuf>,
    },
    /// Run every policy end to end and write the evaluation report
    Compare,
}

fn parse_jacobian(s: &str) -> std::result::Result<JacobianMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    Policy::ALL
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown policy `{s}`"))
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.apply_seed(seed);
        }
        if let Some(mode) = self.jacobian {
            cfg.weights.jacobian_mode = mode;
        }
        if let Some(rho) = self.budget_fraction {
            cfg.budget = Some(pipeline::BudgetRule::Fraction(rho));
            if let InputSource::Synth(s) = &mut cfg.input {
                s.budget_fraction = rho;
            }
        }
        if let Some(path) = &self.features {
            // keep the synthetic budget and inventory netting
            let stock = cfg.stock_feature();
            cfg.budget = Some(cfg.budget_rule());
            cfg.input = InputSource::Features { path: path.clone() };
            cfg.weights.stock_feature = stock;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment> {
        let exec = if self.sequential {
            decaware::Execution::Sequential
        } else {
            decaware::Execution::Parallel
        };
        Ok(Experiment::new(&self.run_config()?)?.with_execution(exec))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|source| Error::File {
            path: self.out.clone(),
            source,
        })?;
        Ok(&self.out)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, &s)
}

fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Ingest {
            input,
            schema,
            lags,
            outlier_multiplier,
        } => {
            let cfg = common.run_config()?;
            let (cfg_path, cfg_schema, cfg_lags, cfg_mult) = match &cfg.input {
                InputSource::Csv {
                    path,
                    schema,
                    lag_months,
                    outlier_multiplier,
                } => (
                    Some(path.clone()),
                    schema.clone(),
                    *lag_months,
                    *outlier_multiplier,
                ),
                _ => (
                    None,
                    None,
                    LagFeatures::default().lag_months,
                    ingest::DEFAULT_OUTLIER_MULTIPLIER,
                ),
            };
            let path = input
                .clone()
                .or(cfg_path)
                .ok_or_else(|| Error::Config("ingest needs --input or a csv input".into()))?;
            let schema = match schema.clone().or(cfg_schema) {
                Some(p) => ColumnSchema::from_toml_str(&read(&p)?)?,
                None => ColumnSchema::default(),
            };
            let file = fs::File::open(&path).map_err(|source| Error::File {
                path: path.clone(),
                source,
            })?;
            let parsed = ingest::parse_records(file, &schema)?;
            let cleaned =
                ingest::clean_records(&parsed.records, outlier_multiplier.unwrap_or(cfg_mult))?;
            let lag_months = lags.unwrap_or(cfg_lags);
            if lag_months == 0 {
                return Err(Error::Config("--lags must be at least 1".into()));
            }
            let table = ingest::build_feature_panel(&cleaned.kept, &LagFeatures { lag_months })?;
            let out = common.out_dir()?;
            table.write_csv(create_file(&out.join("features.csv"))?)?;
            ingest::write_rejects(create_file(&out.join("rejects.csv"))?, &parsed.rejects)?;
            ingest::write_exclusions(create_file(&out.join("exclusions.csv"))?, &cleaned.excluded)?;
            log::info!(
                "{} records parsed, {} rejected, {} excluded, {} feature rows",
                parsed.records.len(),
                parsed.rejects.len(),
                cleaned.excluded.len(),
                table.len()
            );
        }
        Command::Synth => {
            let cfg = common.run_config()?;
            let InputSource::Synth(scenario) = &cfg.input else {
                return Err(Error::Config("synth needs a synth input".into()));
            };
            let data = synth::generate(scenario, scenario.periods)?;
            let out = common.out_dir()?;
            data.table
                .write_csv(create_file(&out.join("features.csv"))?)?;
            let mut w = csv::Writer::from_writer(create_file(&out.join("truth.csv"))?);
            w.write_record(["facility_id", "period", "class", "mean_demand"])?;
            for ((row, class), mean) in data
                .table
                .rows()
                .iter()
                .zip(&data.classes)
                .zip(&data.ground_truth)
            {
                let class = match class {
                    synth::FacilityClass::Low => "low",
                    synth::FacilityClass::High => "high",
                };
                w.write_record([
                    row.facility_id.clone(),
                    row.period.to_string(),
                    class.to_string(),
                    mean.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::Train => {
            let exp = common.experiment()?;
            let model = exp.fit_blind()?;
            write(&common.out_dir()?.join("model.json"), &model.to_json()?)?;
        }
        Command::Weights { model } => {
            let exp = common.experiment()?;
            let model = FittedModel::from_json(&read(model)?)?;
            let report = exp.compute_weights(&model)?;
            report.write_csv(create_file(&common.out_dir()?.join("weights.csv"))?)?;
        }
        Command::Retrain { weights } => {
            let exp = common.experiment()?;
            let file = fs::File::open(weights).map_err(|source| Error::File {
                path: weights.clone(),
                source,
            })?;
            let report = WeightReport::read_csv(file)?;
            let (model, _) = exp.fit_aware(&report)?;
            write(
                &common.out_dir()?.join("model_aware.json"),
                &model.to_json()?,
            )?;
        }
        Command::Allocate { model, policy } => {
            let exp = common.experiment()?;
            let run = match (policy, model) {
                (Policy::RollingAverage, _) => {
                    exp.run_rolling_average(exp.config().rolling_window)?
                }
                (Policy::Oracle, _) => exp.run_oracle()?,
                (p, Some(path)) => exp.run_model(*p, &FittedModel::from_json(&read(path)?)?)?,
                (p, None) => return Err(Error::Config(format!("policy {p} needs --model"))),
            };
            write_json(
                &common.out_dir()?.join(format!("allocation_{policy}.json")),
                &run,
            )?;
        }
        Command::Evaluate { allocations } => {
            let exp = common.experiment()?;
            let runs = allocations
                .iter()
                .map(|p| {
                    let run: PolicyRun = serde_json::from_str(&read(p)?)?;
                    exp.rescore(&run)
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = exp.config();
            let report = build_report(cfg.learner.name(), cfg.seed, exp.eval_period(), &runs)?;
            write_report(&report, common.out_dir()?)?;
        }
        Command::Compare => {
            let output = common.experiment()?.compare()?;
            output.write_to(common.out_dir()?)?;
            for (policy, pct) in &output.report.mean_unmet_demand_pct {
                match pct {
                    Some(v) => println!("{policy:<16} unmet {v:.3}%"),
                    None => println!("{policy:<16} unmet NA"),
                }
            }
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 65,
        ErrorKind::Data => 66,
        ErrorKind::Solver => 70,
        ErrorKind::Io => 74,
        ErrorKind::Config => 78,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
