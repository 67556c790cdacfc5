//! Dense two-phase primal simplex with Bland's rule.
//!
//! Meant for the small instances used to audit the greedy solver; the
//! tableau is `(rows) x (vars + slacks + artificials)`.

use super::{AllocationProblem, AllocationResult};
use crate::error::{Error, Result};

pub const DEFAULT_LP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Le,
    Ge,
    Eq,
}

/// `min c.x` subject to `row.x (<=|>=|=) rhs` and `x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub constraints: Vec<(Vec<f64>, Comparison, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    // reduced costs; last entry is minus the objective value
    z: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.width
    }

    fn price(&mut self, cost: &[f64]) {
        self.z = cost.to_vec();
        self.z.push(0.0);
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for (z, r) in self.z.iter_mut().zip(row) {
                    *z -= cb * r;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                    row[c] = 0.0;
                }
            }
        }
        let f = self.z[c];
        if f != 0.0 {
            for (v, &pv) in self.z.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.z[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs simplex iterations over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, tol: f64, max_pivots: usize) -> Result<()> {
        let rhs = self.rhs();
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.z[j] < -tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > tol {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - tol
                                || (ratio <= lr + tol && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::InvalidProblem("linear program is unbounded".into()));
            };
            if self.pivots >= max_pivots {
                return Err(Error::IterationLimit(self.pivots));
            }
            self.pivot(r, enter);
        }
    }
}

impl LinearProgram {
    pub fn solve(&self, tol: f64) -> Result<LpSolution> {
        let n = self.cost.len();
        let m = self.constraints.len();
        let mut n_slack = 0;
        let mut n_art = 0;
        let mut normalized = Vec::with_capacity(m);
        for (row, cmp, rhs) in &self.constraints {
            if row.len() != n {
                return Err(Error::shape(n, row.len(), "LP constraint row"));
            }
            let (row, cmp, rhs) = if *rhs < 0.0 {
                let flipped = match cmp {
                    Comparison::Le => Comparison::Ge,
                    Comparison::Ge => Comparison::Le,
                    Comparison::Eq => Comparison::Eq,
                };
                (row.iter().map(|v| -v).collect::<Vec<_>>(), flipped, -rhs)
            } else {
                (row.clone(), *cmp, *rhs)
            };
            match cmp {
                Comparison::Le => n_slack += 1,
                Comparison::Ge => {
                    n_slack += 1;
                    n_art += 1;
                }
                Comparison::Eq => n_art += 1,
            }
            normalized.push((row, cmp, rhs));
        }

        let art_start = n + n_slack;
        let width = art_start + n_art;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut s, mut a) = (n, art_start);
        for (row, cmp, rhs) in normalized {
            let mut t = vec![0.0; width + 1];
            t[..n].copy_from_slice(&row);
            t[width] = rhs;
            match cmp {
                Comparison::Le => {
                    t[s] = 1.0;
                    basis.push(s);
                    s += 1;
                }
                Comparison::Ge => {
                    t[s] = -1.0;
                    t[a] = 1.0;
                    basis.push(a);
                    s += 1;
                    a += 1;
                }
                Comparison::Eq => {
                    t[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
            }
            rows.push(t);
        }

        let mut tab = Tableau {
            rows,
            z: Vec::new(),
            basis,
            width,
            pivots: 0,
        };
        let max_pivots = 50 * (m + width).max(100);

        if n_art > 0 {
            let mut phase1 = vec![0.0; width];
            phase1[art_start..].iter_mut().for_each(|c| *c = 1.0);
            tab.price(&phase1);
            tab.optimize(width, tol, max_pivots)?;
            let residual = -tab.z[width];
            let scale = 1.0 + tab.rows.iter().map(|r| r[width].abs()).fold(0.0, f64::max);
            if residual > tol * scale {
                return Err(Error::Infeasible(residual));
            }
            // drive remaining artificials out of the basis or drop their rows
            let mut i = 0;
            while i < tab.rows.len() {
                if tab.basis[i] >= art_start {
                    match (0..art_start).find(|&j| tab.rows[i][j].abs() > tol) {
                        Some(j) => {
                            tab.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            tab.rows.remove(i);
                            tab.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        let mut phase2 = self.cost.clone();
        phase2.resize(width, 0.0);
        tab.price(&phase2);
        tab.optimize(art_start, tol, max_pivots)?;

        let mut x = vec![0.0; n];
        for (row, &b) in tab.rows.iter().zip(&tab.basis) {
            if b < n {
                x[b] = row[width];
            }
        }
        Ok(LpSolution {
            x,
            objective: -tab.z[width],
            pivots: tab.pivots,
        })
    }
}

/// Solves the allocation problem as the explicit LP over `(a, c)`:
/// `min (1/K) sum c_kn` s.t. `c_kn + a_n >= xi_kn`, `c >= 0`, `a >= 0`,
/// `sum a <= budget`. The reported objective is the LP optimum.
pub fn solve_lp(problem: &AllocationProblem, tolerance: f64) -> Result<AllocationResult> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::Config("LP tolerance must be positive".into()));
    }
    let k = problem.n_scenarios();
    let n = problem.n_facilities();
    let vars = n + n * k;
    let mut cost = vec![0.0; vars];
    cost[n..].iter_mut().for_each(|c| *c = 1.0 / k as f64);
    let mut constraints = Vec::with_capacity(n * k + 1);
    for (kk, scenario) in problem.samples().iter().enumerate() {
        for (f, &xi) in scenario.iter().enumerate() {
            let mut row = vec![0.0; vars];
            row[f] = 1.0;
            row[n + kk * n + f] = 1.0;
            constraints.push((row, Comparison::Ge, xi));
        }
    }
    let mut budget_row = vec![0.0; vars];
    budget_row[..n].iter_mut().for_each(|v| *v = 1.0);
    constraints.push((budget_row, Comparison::Le, problem.budget()));

    let sol = LinearProgram { cost, constraints }.solve(tolerance)?;
    Ok(AllocationResult {
        allocation: sol.x[..n].iter().map(|&v| v.max(0.0)).collect(),
        objective: sol.objective,
        fill_trace: Vec::new(),
    })
}
