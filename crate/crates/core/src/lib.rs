//! Cohort analytics for UTXO-based chains.
//!
//! Transaction outputs are partitioned into daily birth cohorts (by
//! creation date) and daily death cohorts (by spend date). From those the
//! engine computes, for every day, the created and spent totals, the
//! value-weighted average lifespan of what was spent, the lifespan
//! distribution of spent outputs and the age distribution of the outputs
//! still alive at the end of the day. Circulating supply, net issuance and
//! token velocity are derived from the resulting tables.

pub mod chart;
pub mod diff;
pub mod engine;
pub mod export;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod series;
pub mod store;
pub mod synth;
pub mod validation;

pub use model::{
    btc_from_satoshi, classify_duration, day_index, Amount, BucketId, BucketMap, BucketTaxonomy, Calendar,
    CohortTables, DayIndex, OutputRecord, StxoRow, Timestamp, UtxoRow,
};
