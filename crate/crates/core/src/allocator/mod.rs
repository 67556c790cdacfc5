//! Budget-constrained expected-shortfall allocation by sample average
//! approximation.
//!
//! Given K demand scenarios over N facilities and a budget, choose `a >= 0`
//! with `sum(a) <= budget` minimizing the mean over scenarios of
//! `sum_n max(xi_n - a_n, 0)`. [`solve_greedy`] is the exact production
//! solver; [`solve_lp`] solves the same problem as an explicit linear program
//! and serves as its cross-check.

mod greedy;
mod simplex;

use serde::{Deserialize, Serialize};

pub use greedy::solve_greedy;
pub use simplex::{solve_lp, Comparison, LinearProgram, LpSolution, DEFAULT_LP_TOLERANCE};

use crate::error::{Error, Result};

/// Slack allowed on `sum(a) <= budget` when checking results.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct AllocationProblem {
    /// `samples[k][n]`: demand of facility `n` in scenario `k`.
    samples: Vec<Vec<f64>>,
    budget: f64,
}

#[derive(Deserialize)]
struct RawProblem {
    samples: Vec<Vec<f64>>,
    budget: f64,
}

impl TryFrom<RawProblem> for AllocationProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        AllocationProblem::new(raw.samples, raw.budget)
    }
}

impl AllocationProblem {
    /// `samples` is scenario-major: one length-N vector per scenario.
    pub fn new(samples: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(Error::InvalidProblem("need at least one scenario".into()));
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(Error::InvalidProblem("need at least one facility".into()));
        }
        for s in &samples {
            if s.len() != n {
                return Err(Error::shape(n, s.len(), "scenario length"));
            }
            if let Some(v) = s.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidProblem(format!(
                    "demand samples must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(budget.is_finite() && budget >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "budget must be finite and nonnegative, got {budget}"
            )));
        }
        Ok(Self { samples, budget })
    }

    /// Builds a problem from facility-major samples (`per_facility[n][k]`),
    /// the layout a [`crate::model::DemandModel`] produces row by row.
    pub fn from_facility_samples(per_facility: &[Vec<f64>], budget: f64) -> Result<Self> {
        let Some(first) = per_facility.first() else {
            return Err(Error::InvalidProblem("need at least one facility".into()));
        };
        let k = first.len();
        if let Some(bad) = per_facility.iter().find(|s| s.len() != k) {
            return Err(Error::shape(k, bad.len(), "scenarios per facility"));
        }
        let samples = (0..k)
            .map(|j| per_facility.iter().map(|s| s[j]).collect())
            .collect();
        Self::new(samples, budget)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn n_facilities(&self) -> usize {
        self.samples[0].len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.samples.len()
    }

    /// Same scenarios, different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.samples.clone(), budget)
    }

    /// Same budget, facility `n` shifted by `delta` in every scenario.
    /// Shifted demand is clamped at zero.
    pub fn shifted(&self, n: usize, delta: f64) -> Self {
        let mut samples = self.samples.clone();
        for s in &mut samples {
            s[n] = (s[n] + delta).max(0.0);
        }
        Self {
            samples,
            budget: self.budget,
        }
    }

    /// Largest sampled demand per facility.
    pub fn max_demand(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.n_facilities()];
        for s in &self.samples {
            for (mi, &v) in m.iter_mut().zip(s) {
                *mi = mi.max(v);
            }
        }
        m
    }

    pub fn mean_demand(&self) -> f64 {
        let total: f64 = self.samples.iter().flatten().sum();
        total / (self.n_scenarios() * self.n_facilities()) as f64
    }
}

/// One greedy fill step: `amount` units placed on `facility` inside segment
/// `segment` (from `start` to `end`), each unit reducing expected shortfall
/// by `marginal_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillStep {
    pub facility: usize,
    pub segment: usize,
    pub start: f64,
    pub end: f64,
    pub marginal_value: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub allocation: Vec<f64>,
    /// Expected shortfall (mean over scenarios) at `allocation`.
    pub objective: f64,
    #[serde(default)]
    pub fill_trace: Vec<FillStep>,
}

impl AllocationResult {
    pub fn total_allocated(&self) -> f64 {
        self.allocation.iter().sum()
    }
}

/// `sum_n max(xi_n - a_n, 0)`.
pub fn shortfall(a: &[f64], xi: &[f64]) -> Result<f64> {
    if a.len() != xi.len() {
        return Err(Error::shape(xi.len(), a.len(), "allocation vs demand"));
    }
    Ok(a.iter().zip(xi).map(|(&ai, &x)| (x - ai).max(0.0)).sum())
}

/// Mean shortfall of `a` over the problem's scenarios.
pub fn saa_objective(problem: &AllocationProblem, a: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for s in problem.samples() {
        total += shortfall(a, s)?;
    }
    Ok(total / problem.n_scenarios() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortfall_cases() {
        assert_eq!(shortfall(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 0.0);
        assert_eq!(shortfall(&[0.0, 0.0], &[4.0, 1.0]).unwrap(), 5.0);
        assert_eq!(shortfall(&[2.0, 1.0], &[4.0, 1.0]).unwrap(), 2.0);
        assert!(shortfall(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn saa_objective_cases() {
        let one = AllocationProblem::new(vec![vec![4.0, 1.0]], 3.0).unwrap();
        assert_eq!(
            saa_objective(&one, &[2.0, 1.0]).unwrap(),
            shortfall(&[2.0, 1.0], &[4.0, 1.0]).unwrap()
        );
        let p = AllocationProblem::new(vec![vec![4.0, 0.0], vec![0.0, 4.0]], 4.0).unwrap();
        assert_eq!(saa_objective(&p, &[2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(saa_objective(&p, &[4.0, 0.0]).unwrap(), 2.0);
        assert!(saa_objective(&p, &[1.0]).is_err());
    }

    #[test]
    fn problem_validation() {
        assert!(AllocationProblem::new(vec![], 1.0).is_err());
        assert!(AllocationProblem::new(vec![vec![]], 1.0).is_err());
        assert!(AllocationProblem::new(vec![vec![1.0], vec![1.0, 2.0]], 1.0).is_err());
        assert!(AllocationProblem::new(vec![vec![-1.0]], 1.0).is_err());
        assert!(AllocationProblem::new(vec![vec![1.0]], f64::NAN).is_err());
    }

    #[test]
    fn facility_major_transposes() {
        let p = AllocationProblem::from_facility_samples(
            &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            1.0,
        )
        .unwrap();
        assert_eq!(
            p.samples(),
            &[vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]
        );
    }

    #[test]
    fn json_round_trip_validates() {
        let p = AllocationProblem::new(vec![vec![1.5, 0.0]], 2.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AllocationProblem>(&s).unwrap(), p);
        assert!(
            serde_json::from_str::<AllocationProblem>(r#"{"samples":[[-1.0]],"budget":1.0}"#)
                .is_err()
        );
    }
}
