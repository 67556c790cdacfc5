use std::collections::BTreeMap;
use std::fs;

use decaware::forest::ForestParams;
use decaware::pipeline::{compare, BudgetRule, Experiment, InputSource, Policy, RunConfig};
use decaware::synth::TwoClassScenario;
use decaware::{FeatureRow, FeatureTable, Learner, YearMonth};

fn synth_config(scenario: TwoClassScenario, learner: Learner) -> RunConfig {
    RunConfig {
        input: InputSource::Synth(scenario),
        learner,
        ..RunConfig::default()
    }
}

fn small_forest() -> Learner {
    Learner::Forest(ForestParams {
        n_trees: 30,
        ..ForestParams::default()
    })
}

#[test]
fn perfect_information_and_full_budget_meets_nearly_everything() {
    let scenario = TwoClassScenario {
        n_high: 0,
        noise_fraction: 0.0,
        budget_fraction: 1.0,
        ..TwoClassScenario::default()
    };
    let learner = Learner::Forest(ForestParams {
        max_depth: 30,
        min_leaf_weight: 1.0,
        ..ForestParams::default()
    });
    let out = compare(&synth_config(scenario, learner)).unwrap();
    let blind = out.report.mean_pct(Policy::DecisionBlind).unwrap();
    assert!(blind < 1.0, "unmet {blind}%");
}

#[test]
fn zero_budget_leaves_all_demand_unmet() {
    let mut cfg = synth_config(TwoClassScenario::default(), Learner::Linear);
    cfg.budget = Some(BudgetRule::Fraction(0.0));
    let out = compare(&cfg).unwrap();
    for policy in Policy::ALL {
        assert_eq!(out.report.mean_pct(policy), Some(100.0), "{policy}");
    }
}

#[test]
fn oracle_is_a_lower_bound() {
    for seed in 0..3 {
        let mut cfg = synth_config(TwoClassScenario::default(), small_forest());
        cfg.apply_seed(seed);
        let out = compare(&cfg).unwrap();
        let r = &out.report;
        assert!(r.oracle_dominates(1e-9));
        let oracle = r.mean_pct(Policy::Oracle).unwrap();
        assert!(r.mean_pct(Policy::DecisionBlind).unwrap() > oracle);
        assert!(r.mean_pct(Policy::RollingAverage).unwrap() >= oracle);
    }
}

#[test]
fn equal_weights_reproduce_the_blind_run() {
    // zero budget makes every gradient -1, so every weight is the same
    let period = |m| YearMonth::new(2021, m).unwrap();
    let mut rows = Vec::new();
    for m in 1..=6 {
        for f in 0..5 {
            let x = f as f64 + 0.1 * m as f64;
            rows.push(FeatureRow::new(
                format!("f{f}"),
                "p",
                period(m),
                vec![x],
                3.0 + x,
            ));
        }
    }
    let table = FeatureTable::from_rows(1, rows).unwrap();
    let cfg = RunConfig {
        input: InputSource::Features {
            path: "unused.csv".into(),
        },
        budget: Some(BudgetRule::Units(BTreeMap::from([("p".to_string(), 0.0)]))),
        learner: small_forest(),
        ..RunConfig::default()
    };
    let exp = Experiment::from_table(&cfg, &table).unwrap();
    let blind = exp.run_decision_blind().unwrap();
    let aware = exp.run_decision_aware().unwrap();
    assert_eq!(blind.products, aware.products);
}

#[test]
fn only_the_weights_differ_between_blind_and_aware() {
    let out = compare(&synth_config(TwoClassScenario::default(), Learner::Linear)).unwrap();
    let t = &out.report.training;
    assert_eq!(t[0].0, Policy::DecisionBlind);
    assert_eq!(t[1].0, Policy::DecisionAware);
    assert!(t[0].1.non_weight_differences(&t[1].1).is_empty());
    assert_eq!(t[0].1.weight_min, 1.0);
    assert!(t[1].1.weight_min < 1.0);
}

#[test]
fn written_reports_are_byte_identical() {
    let cfg = synth_config(
        TwoClassScenario {
            n_low: 20,
            n_high: 20,
            ..TwoClassScenario::default()
        },
        small_forest(),
    );
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        compare(&cfg).unwrap().write_to(d.path()).unwrap();
    }
    for name in [
        "report.json",
        "summary.csv",
        "facilities.csv",
        "weights.csv",
    ] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn config_file_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(TwoClassScenario::default(), Learner::Linear);
    let table = cfg.load_table().unwrap();
    table
        .write_csv(fs::File::create(dir.path().join("features.csv")).unwrap())
        .unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "seed = 1\n\n[input]\nkind = \"features\"\npath = \"features.csv\"\n\n[learner]\nkind = \"linear\"\n\n[budget]\nfraction = 0.5\n\n[weights]\nstock_feature = 0\n",
    )
    .unwrap();
    let from_file = RunConfig::from_file(&dir.path().join("run.toml")).unwrap();
    let a = compare(&from_file).unwrap();
    let b = compare(&cfg).unwrap();
    assert_eq!(
        a.report.mean_pct(Policy::DecisionAware),
        b.report.mean_pct(Policy::DecisionAware)
    );
}
