use decaware::allocator::AllocationProblem;
use decaware::weights::{
    compute_weights, loss_gradient, policy_jacobian, Budgets, GroupKey, JacobianMode,
    Normalization, WeightConfig,
};
use decaware::{DemandModel, FeatureRow, FeatureTable, Result, YearMonth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(mode: JacobianMode, h: f64) -> WeightConfig {
    WeightConfig {
        jacobian_mode: mode,
        fd_step: Some(h),
        ..WeightConfig::default()
    }
}

#[test]
fn single_facility_closed_form() {
    // N = 1: the optimum is min(budget, largest scenario), so the derivative
    // is 1 while the budget is slack and 0 once it binds
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-3;
    for _ in 0..200 {
        let k = rng.random_range(1..=6);
        let samples: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random_range(1.0..50.0)]).collect();
        let top = samples.iter().map(|s| s[0]).fold(0.0, f64::max);
        for mode in [JacobianMode::DiagonalFd, JacobianMode::FullFd] {
            let slack = AllocationProblem::new(samples.clone(), top + 1.0).unwrap();
            let d = policy_jacobian(&slack, &config(mode, h)).unwrap()[0][0];
            assert!((d - 1.0).abs() <= 10.0 * h, "slack derivative {d}");
            let binding = AllocationProblem::new(samples.clone(), 0.5 * top).unwrap();
            let d = policy_jacobian(&binding, &config(mode, h)).unwrap()[0][0];
            assert!(d.abs() <= 10.0 * h, "binding derivative {d}");
        }
    }
}

#[test]
fn zero_demand_uses_forward_difference() {
    let h = 1e-3;
    let problem = AllocationProblem::new(vec![vec![0.0], vec![0.0]], 5.0).unwrap();
    let d = policy_jacobian(&problem, &config(JacobianMode::DiagonalFd, h)).unwrap()[0][0];
    assert!((d - 1.0).abs() <= 10.0 * h);
}

#[test]
fn slack_budget_gives_identity_jacobian() {
    let problem =
        AllocationProblem::new(vec![vec![5.0, 3.0, 8.0], vec![7.0, 1.0, 2.0]], 100.0).unwrap();
    let jac = policy_jacobian(&problem, &config(JacobianMode::FullFd, 1e-3)).unwrap();
    for (i, row) in jac.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-2, "J[{i}][{j}] = {v}");
        }
    }
}

#[test]
fn binding_budget_moves_units_between_facilities() {
    // single scenario, budget binds inside facility 1's segment: raising
    // facility 0's demand takes units away from facility 1 one for one
    let problem = AllocationProblem::new(vec![vec![4.0, 6.0]], 7.0).unwrap();
    let jac = policy_jacobian(&problem, &config(JacobianMode::FullFd, 1e-3)).unwrap();
    assert!((jac[0][0] - 1.0).abs() < 1e-2);
    assert!((jac[1][0] + 1.0).abs() < 1e-2);
    assert!(jac[0][1].abs() < 1e-2 && jac[1][1].abs() < 1e-2);
}

struct Constant(f64);

impl DemandModel for Constant {
    fn feature_dim(&self) -> usize {
        1
    }
    fn predict_point(&self, _: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
    fn predict_samples(&self, _: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0])
    }
}

fn panel(demands: &[[f64; 3]]) -> (FeatureTable, Budgets) {
    let mut rows = Vec::new();
    let mut budgets = Budgets::new();
    for (m, d) in demands.iter().enumerate() {
        let period = YearMonth::new(2021, m as u8 + 1).unwrap();
        for (f, &y) in d.iter().enumerate() {
            rows.push(FeatureRow::new(format!("f{f}"), "p", period, vec![0.0], y));
        }
        budgets.insert(
            GroupKey {
                product_id: "p".into(),
                period,
            },
            6.0,
        );
    }
    (FeatureTable::from_rows(1, rows).unwrap(), budgets)
}

#[test]
fn identity_weights_follow_unmet_demand() {
    let (table, budgets) = panel(&[[1.0, 5.0, 9.0], [2.0, 2.0, 2.0]]);
    let cfg = WeightConfig {
        normalization: Normalization::None,
        ..WeightConfig::default()
    };
    // the model predicts 2 everywhere: first month leaves 5 and 9 unmet
    let report = compute_weights(&table, &Constant(2.0), &budgets, &cfg).unwrap();
    let g: Vec<f64> = report.entries.iter().map(|e| e.gradient).collect();
    assert_eq!(g, vec![0.0, -1.0, -1.0, 0.0, 0.0, 0.0]);
    let w = report.weights();
    assert_eq!(w, vec![0.05, 1.0, 1.0, 0.05, 0.05, 0.05]);
    for e in &report.entries {
        assert_eq!(
            e.gradient,
            loss_gradient(&[e.reference_allocation], &[e.requirement]).unwrap()[0]
        );
    }
}

#[test]
fn weights_respect_floor_and_mean_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for mode in [
        JacobianMode::Identity,
        JacobianMode::DiagonalFd,
        JacobianMode::FullFd,
    ] {
        let demands: Vec<[f64; 3]> = (0..6)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(0.0..6.0)))
            .collect();
        let (table, budgets) = panel(&demands);
        let raw = compute_weights(
            &table,
            &Constant(1.5),
            &budgets,
            &WeightConfig {
                jacobian_mode: mode,
                normalization: Normalization::None,
                ..WeightConfig::default()
            },
        )
        .unwrap();
        assert!(raw.weights().iter().all(|&w| w >= 0.05));
        let norm = compute_weights(
            &table,
            &Constant(1.5),
            &budgets,
            &WeightConfig {
                jacobian_mode: mode,
                normalization: Normalization::MeanOne,
                ..WeightConfig::default()
            },
        )
        .unwrap();
        // normalization keeps the ratios of the floored weights
        let ratio = norm.entries[0].weight / raw.entries[0].weight;
        for (n, r) in norm.entries.iter().zip(&raw.entries) {
            assert!((n.weight - ratio * r.weight).abs() < 1e-12);
        }
        let mean = norm.weights().iter().sum::<f64>() / norm.entries.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9);
    }
}

#[test]
fn missing_budget_is_reported() {
    let (table, mut budgets) = panel(&[[1.0, 1.0, 1.0]]);
    budgets.clear();
    assert!(compute_weights(&table, &Constant(1.0), &budgets, &WeightConfig::default()).is_err());
}
