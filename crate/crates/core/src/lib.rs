//! Decision-aware demand forecasting for budget-constrained allocation.
//!
//! The crate covers the full path from raw facility stock reports to an
//! evaluated allocation: cleaning and lag features ([`ingest`]), a weighted
//! random forest ([`forest`]), the sample-average expected-shortfall
//! allocator ([`allocator`]), per-row decision weights ([`weights`]), a
//! synthetic two-class generator ([`synth`]) and the end-to-end comparison
//! ([`pipeline`]).

pub mod allocator;
pub mod error;
pub mod forest;
pub mod ingest;
pub mod linear;
pub mod model;
pub mod par;
pub mod period;
pub mod pipeline;
pub mod synth;
pub mod table;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
pub use model::{DemandModel, FittedModel, Learner, StockFeature};
pub use par::Execution;
pub use period::YearMonth;
pub use table::{FeatureRow, FeatureTable};
