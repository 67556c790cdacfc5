use decaware::allocator::{
    saa_objective, solve_greedy, solve_lp, AllocationProblem, BUDGET_SLACK, DEFAULT_LP_TOLERANCE,
};
use proptest::prelude::*;

/// Exact integer optimum by dynamic programming over the budget grid.
fn integer_optimum(samples: &[Vec<f64>], budget: usize) -> f64 {
    let k = samples.len() as f64;
    let n = samples[0].len();
    let cost = |f: usize, a: usize| -> f64 {
        samples
            .iter()
            .map(|s| (s[f] - a as f64).max(0.0))
            .sum::<f64>()
            / k
    };
    // best[b] = min cost of the facilities seen so far using at most b units
    let mut best = vec![0.0; budget + 1];
    for f in 0..n {
        let cap = samples.iter().map(|s| s[f] as usize).max().unwrap();
        let mut next = vec![f64::INFINITY; budget + 1];
        for (b, slot) in next.iter_mut().enumerate() {
            for a in 0..=cap.min(b) {
                let v = best[b - a] + cost(f, a);
                if v < *slot {
                    *slot = v;
                }
            }
        }
        best = next;
    }
    best[budget]
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..=8, 1usize..=5).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(prop::collection::vec((0u32..=20).prop_map(f64::from), n), k),
            0usize..=(20 * n + 5),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_matches_integer_optimum_and_lp((samples, budget) in instance()) {
        let problem = AllocationProblem::new(samples.clone(), budget as f64).unwrap();
        let greedy = solve_greedy(&problem);
        let lp = solve_lp(&problem, DEFAULT_LP_TOLERANCE).unwrap();
        let grid = integer_optimum(&samples, budget);
        prop_assert!((greedy.objective - grid).abs() < 1e-6, "greedy {} grid {}", greedy.objective, grid);
        prop_assert!((greedy.objective - lp.objective).abs() < 1e-6, "greedy {} lp {}", greedy.objective, lp.objective);
        let direct = saa_objective(&problem, &greedy.allocation).unwrap();
        prop_assert!((direct - greedy.objective).abs() < 1e-9);
    }

    #[test]
    fn allocation_is_feasible((samples, budget) in instance()) {
        let problem = AllocationProblem::new(samples, budget as f64).unwrap();
        let r = solve_greedy(&problem);
        let caps = problem.max_demand();
        prop_assert!(r.allocation.iter().all(|&a| a >= 0.0));
        prop_assert!(r.allocation.iter().zip(&caps).all(|(a, c)| a <= c));
        prop_assert!(r.total_allocated() <= budget as f64 * (1.0 + BUDGET_SLACK) + 1e-12);
        // budget left over only when every facility is at its cap
        if r.total_allocated() < budget as f64 - 1e-9 {
            prop_assert_eq!(&r.allocation, &caps);
        }
    }

    #[test]
    fn objective_is_monotone_in_budget((samples, budget) in instance(), extra in 0usize..30) {
        let lo = solve_greedy(&AllocationProblem::new(samples.clone(), budget as f64).unwrap());
        let hi = solve_greedy(&AllocationProblem::new(samples, (budget + extra) as f64).unwrap());
        prop_assert!(hi.objective <= lo.objective + 1e-12);
    }

    #[test]
    fn scale_equivariance((samples, budget) in instance(), c in 0.1f64..10.0) {
        let base = solve_greedy(&AllocationProblem::new(samples.clone(), budget as f64).unwrap());
        let scaled: Vec<Vec<f64>> = samples.iter().map(|s| s.iter().map(|v| v * c).collect()).collect();
        let r = solve_greedy(&AllocationProblem::new(scaled, budget as f64 * c).unwrap());
        prop_assert!((r.objective - c * base.objective).abs() < 1e-9 * (1.0 + c * base.objective));
    }

    #[test]
    fn zero_demand_facility_gets_nothing((mut samples, budget) in instance()) {
        for s in &mut samples {
            s[0] = 0.0;
        }
        let r = solve_greedy(&AllocationProblem::new(samples, budget as f64).unwrap());
        prop_assert_eq!(r.allocation[0], 0.0);
    }

    #[test]
    fn scenario_order_is_irrelevant((samples, budget) in instance()) {
        let mut reversed = samples.clone();
        reversed.reverse();
        let a = solve_greedy(&AllocationProblem::new(samples, budget as f64).unwrap());
        let b = solve_greedy(&AllocationProblem::new(reversed, budget as f64).unwrap());
        prop_assert_eq!(a.allocation, b.allocation);
    }
}

#[test]
fn dp_oracle_on_hand_example() {
    // two scenarios, two facilities: spending on facility 0 first pays 1 per
    // unit until 2, then 1/2 per unit
    let samples = vec![vec![4.0, 1.0], vec![2.0, 1.0]];
    assert_eq!(integer_optimum(&samples, 0), 4.0);
    assert_eq!(integer_optimum(&samples, 3), 1.0);
    assert_eq!(integer_optimum(&samples, 5), 0.0);
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(AllocationProblem::new(vec![], 1.0).is_err());
    assert!(AllocationProblem::new(vec![vec![1.0]], -1.0).is_err());
    assert!(AllocationProblem::new(vec![vec![-1.0]], 1.0).is_err());
    assert!(AllocationProblem::new(vec![vec![1.0, 2.0], vec![1.0]], 1.0).is_err());
}
