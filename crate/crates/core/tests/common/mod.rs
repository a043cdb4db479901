#![allow(dead_code)]

use tempfile::TempDir;
use utxo_cohort::engine::{build_tables, EngineOptions};
use utxo_cohort::store::{BuildOptions, PartitionStore};
use utxo_cohort::{Calendar, CohortTables, DayIndex, OutputRecord};

pub fn store_with(records: &[OutputRecord], calendar: Calendar, last_day: DayIndex) -> (TempDir, PartitionStore) {
    let dir = tempfile::tempdir().unwrap();
    let opts = BuildOptions { last_day: Some(last_day), ..BuildOptions::default() };
    let store = PartitionStore::build(records.iter().copied(), calendar, dir.path().join("store"), &opts).unwrap();
    (dir, store)
}

pub fn engine_tables(store: &PartitionStore, to: DayIndex, chunk_days: u32, jobs: Option<usize>) -> CohortTables {
    build_tables(store, DayIndex(0), to, &EngineOptions { chunk_days, jobs }).unwrap()
}

/// Exact match on every amount; WAL within `rel` relative error.
pub fn mismatch(engine: &CohortTables, oracle: &CohortTables, rel: f64) -> Option<String> {
    if engine.stxo.len() != oracle.stxo.len() || engine.utxo.len() != oracle.utxo.len() {
        return Some(format!("row counts {} / {}", engine.stxo.len(), oracle.stxo.len()));
    }
    for (e, o) in engine.stxo.iter().zip(&oracle.stxo) {
        let wal_ok = match (e.wal_seconds, o.wal_seconds) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE),
            _ => false,
        };
        if e.date != o.date || e.newborn != o.newborn || e.dead != o.dead || e.lifespan != o.lifespan || !wal_ok {
            return Some(format!("STXO day {}: engine {e:?} oracle {o:?}", e.date));
        }
    }
    for (e, o) in engine.utxo.iter().zip(&oracle.utxo) {
        if e != o {
            return Some(format!("UTXO day {}: engine {e:?} oracle {o:?}", e.date));
        }
    }
    None
}
