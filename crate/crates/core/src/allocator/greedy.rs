use super::{saa_objective, AllocationProblem, AllocationResult, FillStep};

struct Segment {
    facility: usize,
    index: usize,
    start: f64,
    end: f64,
    // scenarios whose demand exceeds every point of the segment
    above: usize,
}

/// Exact water-filling solver.
///
/// The objective separates by facility and each term is convex piecewise
/// linear: with facility `n`'s scenario demands sorted into breakpoints
/// `0 = b_0 <= b_1 <= ... <= b_K`, every unit placed in `(b_j, b_{j+1}]`
/// lowers expected shortfall by `(K - j) / K`. Segments from all facilities
/// are consumed in order of decreasing marginal value (ties: lower facility,
/// then lower start), the last one possibly partially. No facility receives
/// more than its largest sampled demand, so surplus budget stays unallocated.
pub fn solve_greedy(problem: &AllocationProblem) -> AllocationResult {
    let k = problem.n_scenarios();
    let n = problem.n_facilities();
    let mut segments = Vec::with_capacity(n * k);
    let mut column = Vec::with_capacity(k);
    for f in 0..n {
        column.clear();
        column.extend(problem.samples().iter().map(|s| s[f]));
        column.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for (j, &b) in column.iter().enumerate() {
            if b > prev {
                segments.push(Segment {
                    facility: f,
                    index: j,
                    start: prev,
                    end: b,
                    above: k - j,
                });
                prev = b;
            }
        }
    }
    segments.sort_by(|x, y| {
        y.above
            .cmp(&x.above)
            .then(x.facility.cmp(&y.facility))
            .then(x.start.total_cmp(&y.start))
    });

    let mut allocation = vec![0.0; n];
    let mut trace = Vec::new();
    let mut remaining = problem.budget();
    for seg in segments {
        if remaining <= 0.0 {
            break;
        }
        let amount = (seg.end - seg.start).min(remaining);
        allocation[seg.facility] += amount;
        remaining -= amount;
        trace.push(FillStep {
            facility: seg.facility,
            segment: seg.index,
            start: seg.start,
            end: seg.end,
            marginal_value: seg.above as f64 / k as f64,
            amount,
        });
    }

    let objective =
        saa_objective(problem, &allocation).expect("allocation has the problem's shape");
    AllocationResult {
        allocation,
        objective,
        fill_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_allocates_nothing() {
        let p = AllocationProblem::new(vec![vec![2.0, 1.0], vec![4.0, 1.0]], 0.0).unwrap();
        let r = solve_greedy(&p);
        assert_eq!(r.allocation, vec![0.0, 0.0]);
        // mean total demand: (3 + 5) / 2
        assert_eq!(r.objective, 4.0);
        assert!(r.fill_trace.is_empty());
    }

    #[test]
    fn two_facility_worked_example() {
        // facility 0 samples {2, 4}, facility 1 samples {1, 1}, budget 3
        let p = AllocationProblem::new(vec![vec![2.0, 1.0], vec![4.0, 1.0]], 3.0).unwrap();
        let r = solve_greedy(&p);
        assert_eq!(r.allocation, vec![2.0, 1.0]);
        assert_eq!(r.objective, 1.0);
        let values: Vec<f64> = r.fill_trace.iter().map(|s| s.marginal_value).collect();
        assert_eq!(values, vec![1.0, 1.0]);
        // brute force over integer splits of the budget
        let best = (0..=3)
            .map(|a0| saa_objective(&p, &[a0 as f64, (3 - a0) as f64]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, r.objective);
    }

    #[test]
    fn ample_budget_covers_max_and_leaves_surplus() {
        let p =
            AllocationProblem::new(vec![vec![2.0, 0.0, 7.0], vec![5.0, 0.0, 1.0]], 100.0).unwrap();
        let r = solve_greedy(&p);
        assert_eq!(r.allocation, vec![5.0, 0.0, 7.0]);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.total_allocated(), 12.0);
    }

    #[test]
    fn equal_marginals_fill_lower_facility_first() {
        let p = AllocationProblem::new(vec![vec![3.0, 3.0]], 4.0).unwrap();
        assert_eq!(solve_greedy(&p).allocation, vec![3.0, 1.0]);
    }

    #[test]
    fn fractional_last_segment() {
        let p = AllocationProblem::new(vec![vec![10.0]], 2.5).unwrap();
        let r = solve_greedy(&p);
        assert_eq!(r.allocation, vec![2.5]);
        assert_eq!(r.objective, 7.5);
    }
}
