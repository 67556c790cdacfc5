//! Stock-ledger ingestion: CSV parsing, cleaning rules and lag-feature tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::period::YearMonth;
use crate::table::{FeatureRow, FeatureTable};

/// One (facility, product, month) ledger observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockRecord {
    pub facility_id: String,
    pub product_id: String,
    pub period: YearMonth,
    pub region: String,
    pub opening_balance: f64,
    pub quantity_received: f64,
    pub quantity_dispensed: f64,
    pub adjustment: f64,
    pub closing_balance: f64,
}

impl StockRecord {
    /// Consumption observed for the month. Dispensed quantity is the only
    /// flow in the ledger that measures use.
    pub fn demand(&self) -> f64 {
        self.quantity_dispensed
    }

    /// Whether opening + received - dispensed + adjustment equals closing.
    ///
    /// Quantities are held as `f64`; integral ledgers compare exactly, and a
    /// relative slack of 1e-9 absorbs decimal-fraction rounding only.
    pub fn is_balanced(&self) -> bool {
        let lhs = self.opening_balance + self.quantity_received - self.quantity_dispensed
            + self.adjustment;
        let scale = 1.0
            + self.opening_balance.abs()
            + self.quantity_received.abs()
            + self.quantity_dispensed.abs()
            + self.adjustment.abs();
        (lhs - self.closing_balance).abs() <= 1e-9 * scale
    }

    pub fn is_all_zero(&self) -> bool {
        [
            self.opening_balance,
            self.quantity_received,
            self.quantity_dispensed,
            self.adjustment,
            self.closing_balance,
        ]
        .iter()
        .all(|&q| q == 0.0)
    }
}

/// Maps each [`StockRecord`] field to a CSV header name. Every field defaults
/// to its own name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub facility_id: String,
    pub product_id: String,
    pub period: String,
    pub region: String,
    pub opening_balance: String,
    pub quantity_received: String,
    pub quantity_dispensed: String,
    pub adjustment: String,
    pub closing_balance: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            facility_id: "facility_id".into(),
            product_id: "product_id".into(),
            period: "period".into(),
            region: "region".into(),
            opening_balance: "opening_balance".into(),
            quantity_received: "quantity_received".into(),
            quantity_dispensed: "quantity_dispensed".into(),
            adjustment: "adjustment".into(),
            closing_balance: "closing_balance".into(),
        }
    }
}

impl ColumnSchema {
    /// Parses a `field = "column"` key-value file; unspecified fields keep
    /// their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    fn columns(&self) -> [&str; 9] {
        [
            &self.facility_id,
            &self.product_id,
            &self.period,
            &self.region,
            &self.opening_balance,
            &self.quantity_received,
            &self.quantity_dispensed,
            &self.adjustment,
            &self.closing_balance,
        ]
    }
}

/// A data row that could not be turned into a [`StockRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<StockRecord>,
    pub rejects: Vec<Reject>,
}

/// Reads stock records from UTF-8 CSV with a header row.
///
/// Malformed rows never abort the parse; they come back in
/// [`ParseOutcome::rejects`] with their 1-based line number.
pub fn parse_records<R: Read>(source: R, schema: &ColumnSchema) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyInput);
    }
    let mut idx = [0usize; 9];
    for (slot, name) in idx.iter_mut().zip(schema.columns()) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })?;
    }
    let names = schema.columns();

    let mut out = ParseOutcome::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |k: usize| rec.get(idx[k]).unwrap_or("");
        let parsed = (|| -> std::result::Result<StockRecord, String> {
            let text = |k: usize| -> std::result::Result<String, String> {
                match rec.get(idx[k]) {
                    Some(v) if !v.is_empty() => Ok(v.to_string()),
                    _ => Err(format!("missing value for `{}`", names[k])),
                }
            };
            let qty = |k: usize, signed: bool| -> std::result::Result<f64, String> {
                let raw = text(k)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("non-numeric `{}`: {raw:?}", names[k]))?;
                if !v.is_finite() {
                    return Err(format!("non-finite `{}`", names[k]));
                }
                if !signed && v < 0.0 {
                    return Err(format!("negative `{}`: {v}", names[k]));
                }
                Ok(v)
            };
            let period = text(2)?.parse::<YearMonth>().map_err(|e| e.to_string())?;
            Ok(StockRecord {
                facility_id: text(0)?,
                product_id: text(1)?,
                period,
                region: cell(3).to_string(),
                opening_balance: qty(4, false)?,
                quantity_received: qty(5, false)?,
                quantity_dispensed: qty(6, false)?,
                adjustment: qty(7, true)?,
                closing_balance: qty(8, false)?,
            })
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    if out.records.is_empty() && out.rejects.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Unbalanced,
    AllZero,
    Outlier,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::Unbalanced => "unbalanced",
            ExclusionReason::AllZero => "all_zero",
            ExclusionReason::Outlier => "outlier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Excluded {
    pub record: StockRecord,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanOutcome {
    pub kept: Vec<StockRecord>,
    pub excluded: Vec<Excluded>,
}

pub const DEFAULT_OUTLIER_MULTIPLIER: f64 = 10.0;

/// Applies the ledger cleaning rules.
///
/// Records failing the balance identity are tagged `unbalanced`, records whose
/// five quantities are all zero `all_zero`. Outliers are records whose demand
/// exceeds `outlier_multiplier` times the median positive demand of their
/// (facility, product) series. The first median is taken over every record
/// of the series; after that the median is recomputed over the surviving
/// records until no further record is excluded, so that cleaning a cleaned
/// set excludes nothing.
///
/// Both outputs preserve input order.
pub fn clean_records(records: &[StockRecord], outlier_multiplier: f64) -> Result<CleanOutcome> {
    if !(outlier_multiplier.is_finite() && outlier_multiplier > 1.0) {
        return Err(Error::Config(format!(
            "outlier multiplier must be > 1, got {outlier_multiplier}"
        )));
    }
    let mut tags: Vec<Option<ExclusionReason>> = records
        .iter()
        .map(|r| {
            if !r.is_balanced() {
                Some(ExclusionReason::Unbalanced)
            } else if r.is_all_zero() {
                Some(ExclusionReason::AllZero)
            } else {
                None
            }
        })
        .collect();

    let mut series: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        series
            .entry((&r.facility_id, &r.product_id))
            .or_default()
            .push(i);
    }

    for members in series.values() {
        let mut reference: Vec<usize> = members.clone();
        while let Some(med) = median_positive(reference.iter().map(|&i| records[i].demand())) {
            let limit = outlier_multiplier * med;
            let mut changed = false;
            for &i in members {
                if tags[i].is_none() && records[i].demand() > limit {
                    tags[i] = Some(ExclusionReason::Outlier);
                    changed = true;
                }
            }
            let survivors: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| tags[i].is_none())
                .collect();
            if !changed && survivors == reference {
                break;
            }
            reference = survivors;
        }
    }

    let mut out = CleanOutcome::default();
    for (r, tag) in records.iter().zip(tags) {
        match tag {
            None => out.kept.push(r.clone()),
            Some(reason) => out.excluded.push(Excluded {
                record: r.clone(),
                reason,
            }),
        }
    }
    Ok(out)
}

fn median_positive(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.filter(|&x| x > 0.0).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Everything a [`FeatureBuilder`] may look at for one (facility, product)
/// series at one `as_of` month. `history` holds the whole cleaned series; a
/// builder must only read months strictly before `as_of`.
pub struct SeriesView<'a> {
    pub facility_id: &'a str,
    pub product_id: &'a str,
    pub as_of: YearMonth,
    pub current: &'a StockRecord,
    pub history: &'a BTreeMap<YearMonth, &'a StockRecord>,
    pub region_code: usize,
}

/// Pluggable feature construction for [`build_features_with`].
pub trait FeatureBuilder: Sync {
    fn dim(&self) -> usize;
    fn names(&self) -> Vec<String>;
    fn build(&self, view: &SeriesView<'_>) -> Vec<f64>;
}

/// Sentinel stored in a lag slot when that month is missing.
pub const MISSING_LAG: f64 = -1.0;

/// Trailing demand lags (most recent first), one 0/1 presence flag per lag,
/// month of year, year and region code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagFeatures {
    pub lag_months: usize,
}

impl Default for LagFeatures {
    fn default() -> Self {
        Self { lag_months: 10 }
    }
}

impl FeatureBuilder for LagFeatures {
    fn dim(&self) -> usize {
        2 * self.lag_months + 3
    }

    fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.lag_months).map(|l| format!("lag_{l}")).collect();
        names.extend((1..=self.lag_months).map(|l| format!("has_lag_{l}")));
        names.extend(["month".into(), "year".into(), "region".into()]);
        names
    }

    fn build(&self, view: &SeriesView<'_>) -> Vec<f64> {
        let mut lags = Vec::with_capacity(self.lag_months);
        let mut flags = Vec::with_capacity(self.lag_months);
        for l in 1..=self.lag_months {
            match view.history.get(&view.as_of.offset(-(l as i64))) {
                Some(r) => {
                    lags.push(r.demand());
                    flags.push(1.0);
                }
                None => {
                    lags.push(MISSING_LAG);
                    flags.push(0.0);
                }
            }
        }
        lags.extend(flags);
        lags.push(view.as_of.month() as f64);
        lags.push(view.as_of.year() as f64);
        lags.push(view.region_code as f64);
        lags
    }
}

/// One row per (facility, product) series with a record at `as_of`, using
/// the default lag features.
pub fn build_features(
    records: &[StockRecord],
    lag_months: usize,
    as_of: YearMonth,
) -> Result<FeatureTable> {
    if lag_months == 0 {
        return Err(Error::Config("lag_months must be at least 1".into()));
    }
    build_features_with(records, &LagFeatures { lag_months }, as_of)
}

pub fn build_features_with(
    records: &[StockRecord],
    builder: &dyn FeatureBuilder,
    as_of: YearMonth,
) -> Result<FeatureTable> {
    let index = SeriesIndex::new(records);
    let table = index.table_at(builder, as_of)?;
    if table.is_empty() {
        return Err(Error::EmptyTable { as_of });
    }
    Ok(table)
}

/// Feature rows for every month that has at least one record, stacked in
/// chronological order. Each row only sees history before its own month.
pub fn build_feature_panel(
    records: &[StockRecord],
    builder: &dyn FeatureBuilder,
) -> Result<FeatureTable> {
    let index = SeriesIndex::new(records);
    let periods: BTreeSet<YearMonth> = records.iter().map(|r| r.period).collect();
    let Some(&last) = periods.last() else {
        return Err(Error::EmptyInput);
    };
    let mut panel = FeatureTable::with_horizon(builder.dim(), last);
    for p in periods {
        panel.extend(index.table_at(builder, p)?)?;
    }
    Ok(panel)
}

type SeriesKey<'a> = (&'a str, &'a str);

struct SeriesIndex<'a> {
    // keyed (product, facility) so rows come out grouped by product
    series: BTreeMap<SeriesKey<'a>, BTreeMap<YearMonth, &'a StockRecord>>,
    regions: BTreeMap<&'a str, usize>,
    first: Option<YearMonth>,
}

impl<'a> SeriesIndex<'a> {
    fn new(records: &'a [StockRecord]) -> Self {
        let mut series: BTreeMap<SeriesKey<'a>, BTreeMap<YearMonth, &'a StockRecord>> =
            BTreeMap::new();
        // duplicates of a (facility, product, month) keep the first record
        for r in records {
            series
                .entry((&r.product_id, &r.facility_id))
                .or_default()
                .entry(r.period)
                .or_insert(r);
        }
        let regions: BTreeSet<&str> = records.iter().map(|r| r.region.as_str()).collect();
        Self {
            series,
            regions: regions
                .into_iter()
                .enumerate()
                .map(|(i, r)| (r, i))
                .collect(),
            first: records.iter().map(|r| r.period).min(),
        }
    }

    fn table_at(&self, builder: &dyn FeatureBuilder, as_of: YearMonth) -> Result<FeatureTable> {
        match self.first {
            Some(first) if as_of >= first => {}
            _ => return Err(Error::EmptyTable { as_of }),
        }
        let mut table = FeatureTable::with_horizon(builder.dim(), as_of);
        for (&(product, facility), history) in &self.series {
            let Some(current) = history.get(&as_of) else {
                continue;
            };
            let view = SeriesView {
                facility_id: facility,
                product_id: product,
                as_of,
                current,
                history,
                region_code: self.regions[current.region.as_str()],
            };
            let features = builder.build(&view);
            table.push(FeatureRow::new(
                facility,
                product,
                as_of,
                features,
                current.demand(),
            ))?;
        }
        Ok(table)
    }
}

#[derive(Serialize)]
struct ExclusionRow<'a> {
    facility_id: &'a str,
    product_id: &'a str,
    period: YearMonth,
    quantity_dispensed: f64,
    reason: &'static str,
}

/// Writes `line,reason` rows.
pub fn write_rejects<W: Write>(writer: W, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rejects {
        w.serialize(r)?;
    }
    if rejects.is_empty() {
        w.write_record(["line", "reason"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_exclusions<W: Write>(writer: W, excluded: &[Excluded]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if excluded.is_empty() {
        w.write_record([
            "facility_id",
            "product_id",
            "period",
            "quantity_dispensed",
            "reason",
        ])?;
    }
    for e in excluded {
        w.serialize(ExclusionRow {
            facility_id: &e.record.facility_id,
            product_id: &e.record.product_id,
            period: e.record.period,
            quantity_dispensed: e.record.quantity_dispensed,
            reason: e.reason.as_str(),
        })?;
    }
    w.flush()?;
    Ok(())
}
