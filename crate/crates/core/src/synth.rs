//! Two-class synthetic facilities: a low-inventory class whose demand tracks
//! prior inventory steeply and a high-inventory class whose demand tracks it
//! weakly and always stays below the stock on hand. A single linear model in
//! prior inventory cannot fit both classes, which is the setting where
//! decision-aware weights pay off.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::allocator::{solve_greedy, AllocationProblem};
use crate::error::{Error, Result};
use crate::model::StockFeature;
use crate::period::YearMonth;
use crate::table::{FeatureRow, FeatureTable};

/// Column of the synthetic features holding prior (on-hand) inventory.
pub const INVENTORY_FEATURE: usize = 0;
pub const SYNTH_DIM: usize = 3;
pub const SYNTH_PRODUCT: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityClass {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoClassScenario {
    pub n_low: usize,
    pub n_high: usize,
    pub slope_low: f64,
    pub slope_high: f64,
    pub intercept_low: f64,
    pub intercept_high: f64,
    /// Noise standard deviation as a fraction of the expected mean demand.
    pub noise_fraction: f64,
    pub inventory_low: (f64, f64),
    pub inventory_high: (f64, f64),
    pub budget_fraction: f64,
    pub periods: usize,
    pub start: YearMonth,
    pub seed: u64,
}

impl Default for TwoClassScenario {
    fn default() -> Self {
        Self {
            n_low: 50,
            n_high: 50,
            slope_low: 0.9,
            slope_high: 0.2,
            intercept_low: 20.0,
            intercept_high: 5.0,
            noise_fraction: 0.1,
            inventory_low: (0.0, 20.0),
            inventory_high: (40.0, 80.0),
            budget_fraction: 0.5,
            periods: 24,
            start: YearMonth::new(2020, 1).expect("valid month"),
            seed: 0,
        }
    }
}

impl TwoClassScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_low + self.n_high == 0 {
            return bad("scenario needs at least one facility".into());
        }
        if !(self.slope_low > 0.0 && self.slope_high > 0.0) {
            return bad("class slopes must be positive".into());
        }
        if self.slope_low <= self.slope_high {
            return bad("slope_low must exceed slope_high".into());
        }
        let (ll, lh) = self.inventory_low;
        let (hl, hh) = self.inventory_high;
        if !(0.0 <= ll && ll <= lh && 0.0 <= hl && hl <= hh) {
            return bad("inventory ranges must be ordered and nonnegative".into());
        }
        if lh >= hl {
            return bad("low-class inventory range must lie below the high-class range".into());
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return bad("noise_fraction must be >= 0".into());
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad("budget_fraction must lie in (0, 1]".into());
        }
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        // high class holds more stock than its mean demand everywhere in range
        if self.n_high > 0 && self.mean_demand(FacilityClass::High, hl) >= hl
            || self.n_high > 0 && self.mean_demand(FacilityClass::High, hh) >= hh
        {
            return bad("high-class mean demand must stay below its inventory".into());
        }
        if self.n_low > 0
            && (self.mean_demand(FacilityClass::Low, ll) <= ll
                || self.mean_demand(FacilityClass::Low, lh) <= lh)
        {
            return bad("low-class mean demand must exceed its inventory".into());
        }
        Ok(())
    }

    pub fn mean_demand(&self, class: FacilityClass, inventory: f64) -> f64 {
        match class {
            FacilityClass::Low => self.intercept_low + self.slope_low * inventory,
            FacilityClass::High => self.intercept_high + self.slope_high * inventory,
        }
    }

    /// Expected demand across facilities and inventory draws.
    pub fn expected_mean_demand(&self) -> f64 {
        let mid = |r: (f64, f64)| 0.5 * (r.0 + r.1);
        let low = self.mean_demand(FacilityClass::Low, mid(self.inventory_low));
        let high = self.mean_demand(FacilityClass::High, mid(self.inventory_high));
        (self.n_low as f64 * low + self.n_high as f64 * high) / (self.n_low + self.n_high) as f64
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_fraction * self.expected_mean_demand()
    }

    pub fn stock_feature(&self) -> StockFeature {
        StockFeature(Some(INVENTORY_FEATURE))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub table: FeatureTable,
    /// Class-linear mean demand of each row.
    pub ground_truth: Vec<f64>,
    pub classes: Vec<FacilityClass>,
}

/// Draws `periods` months of data, one row per facility per month, with
/// features `[prior inventory, month of year, uniform noise]`.
pub fn generate(scenario: &TwoClassScenario, periods: usize) -> Result<SynthData> {
    scenario.validate()?;
    if periods == 0 {
        return Err(Error::Config("periods must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = scenario.n_low + scenario.n_high;
    let mut classes: Vec<FacilityClass> = (0..n)
        .map(|i| {
            if i < scenario.n_low {
                FacilityClass::Low
            } else {
                FacilityClass::High
            }
        })
        .collect();
    classes.shuffle(&mut rng);
    let sd = scenario.noise_sd();
    let noise = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
    let last = scenario.start.offset(periods as i64 - 1);

    let mut table = FeatureTable::with_horizon(SYNTH_DIM, last);
    let mut truth = Vec::with_capacity(n * periods);
    let mut row_classes = Vec::with_capacity(n * periods);
    for p in 0..periods {
        let period = scenario.start.offset(p as i64);
        for (f, &class) in classes.iter().enumerate() {
            let (lo, hi) = match class {
                FacilityClass::Low => scenario.inventory_low,
                FacilityClass::High => scenario.inventory_high,
            };
            let inventory = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            let mean = scenario.mean_demand(class, inventory);
            let eps = if sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let demand = (mean + eps).max(0.0);
            let extra: f64 = rng.random();
            table.push(FeatureRow::new(
                format!("fac-{f:03}"),
                SYNTH_PRODUCT,
                period,
                vec![inventory, period.month() as f64, extra],
                demand,
            ))?;
            truth.push(mean);
            row_classes.push(class);
        }
    }
    Ok(SynthData {
        table,
        ground_truth: truth,
        classes: row_classes,
    })
}

/// Unmet demand of the perfect-foresight allocation: the greedy optimum on
/// the realized requirement itself. No policy can do better on the same
/// instance.
pub fn optimal_loss_oracle(realized: &[f64], budget: f64) -> Result<f64> {
    let problem = AllocationProblem::new(vec![realized.to_vec()], budget)?;
    Ok(solve_greedy(&problem).objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rows_equal_class_mean() {
        let s = TwoClassScenario {
            noise_fraction: 0.0,
            ..Default::default()
        };
        let d = generate(&s, 3).unwrap();
        assert_eq!(d.table.len(), 300);
        for (row, &mean) in d.table.rows().iter().zip(&d.ground_truth) {
            assert_eq!(row.target, mean);
        }
    }

    #[test]
    fn class_stock_relationship() {
        let d = generate(&TwoClassScenario::default(), 4).unwrap();
        for (row, class) in d.table.rows().iter().zip(&d.classes) {
            let inv = row.features[INVENTORY_FEATURE];
            match class {
                FacilityClass::High => assert!(row.target < inv),
                FacilityClass::Low => assert!(inv < 20.0),
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = TwoClassScenario {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate(&s, 5).unwrap(), generate(&s, 5).unwrap());
        let other = TwoClassScenario {
            seed: 12,
            ..Default::default()
        };
        assert_ne!(
            generate(&s, 5).unwrap().table,
            generate(&other, 5).unwrap().table
        );
    }

    #[test]
    fn invalid_scenarios() {
        let overlap = TwoClassScenario {
            inventory_low: (0.0, 50.0),
            ..Default::default()
        };
        assert!(generate(&overlap, 1).is_err());
        let slopes = TwoClassScenario {
            slope_low: 0.1,
            ..Default::default()
        };
        assert!(generate(&slopes, 1).is_err());
        assert!(generate(&TwoClassScenario::default(), 0).is_err());
    }

    #[test]
    fn oracle_cases() {
        assert_eq!(optimal_loss_oracle(&[3.0, 4.0], 10.0).unwrap(), 0.0);
        assert_eq!(optimal_loss_oracle(&[3.0, 4.0], 0.0).unwrap(), 7.0);
        // symmetric [d, d] with half the total as budget leaves d unmet
        assert_eq!(optimal_loss_oracle(&[6.0, 6.0], 6.0).unwrap(), 6.0);
    }
}
