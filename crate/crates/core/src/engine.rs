//! Per-day cohort statistics over a [`PartitionStore`].
//!
//! Death-cohort statistics (spent total, WAL, lifespan buckets) come from a
//! single death partition each. Age distributions need every record alive
//! at the end of the day; `build_tables` walks the range in windows of
//! `chunk_days`, carrying forward only records still alive at the end of the
//! previous window, so at most one window of live records is in memory.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    Amount, BucketId, BucketMap, BucketTaxonomy, Calendar, CohortTables, DayIndex, OutputRecord, StxoRow,
    Timestamp, UtxoRow, SECONDS_PER_DAY,
};
use crate::store::{PartitionStore, StoreError};

pub const DEFAULT_CHUNK_DAYS: u32 = 180;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("chunk size must be at least one day")]
    ZeroChunk,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub chunk_days: u32,
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { chunk_days: DEFAULT_CHUNK_DAYS, jobs: None }
    }
}

/// Exact accumulation of one death cohort.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeathSummary {
    pub dead: Amount,
    /// Σ value × lifespan, satoshi-seconds.
    pub weighted_lifespan: u128,
    pub lifespan: BucketMap,
}

impl DeathSummary {
    pub fn from_records(records: &[OutputRecord], taxonomy: &BucketTaxonomy) -> Result<DeathSummary, StoreError> {
        let mut s = DeathSummary::default();
        for r in records {
            let life = r
                .lifespan_secs()
                .ok_or_else(|| StoreError::Integrity("unspent record in a death partition".into()))?;
            let bucket = taxonomy.classify(life)?;
            s.dead += r.value;
            s.weighted_lifespan += u128::from(r.value.0) * life as u128;
            s.lifespan.add(bucket, r.value);
        }
        Ok(s)
    }

    /// Value-weighted mean lifespan in seconds. The quotient is taken in
    /// integers and only the remainder goes through floating point.
    pub fn wal_seconds(&self) -> Option<f64> {
        if self.dead.0 == 0 {
            return None;
        }
        let den = u128::from(self.dead.0);
        let q = self.weighted_lifespan / den;
        let r = self.weighted_lifespan % den;
        Some(q as f64 + r as f64 / den as f64)
    }
}

pub fn newborn_total(store: &PartitionStore, d: DayIndex) -> Result<Amount, StoreError> {
    store.check_day(d)?;
    Ok(store.birth_cohort(d)?.iter().map(|r| r.value).sum())
}

pub fn dead_total(store: &PartitionStore, d: DayIndex) -> Result<Amount, StoreError> {
    store.check_day(d)?;
    Ok(store.death_cohort(d)?.iter().map(|r| r.value).sum())
}

fn death_summary(store: &PartitionStore, d: DayIndex) -> Result<DeathSummary, StoreError> {
    store.check_day(d)?;
    DeathSummary::from_records(&store.death_cohort(d)?, &BucketTaxonomy::standard())
}

/// Weighted average lifespan of day `d`'s death cohort, in seconds.
pub fn wal(store: &PartitionStore, d: DayIndex) -> Result<Option<f64>, StoreError> {
    Ok(death_summary(store, d)?.wal_seconds())
}

pub fn lifespan_distribution(store: &PartitionStore, d: DayIndex) -> Result<BucketMap, StoreError> {
    Ok(death_summary(store, d)?.lifespan)
}

/// Value of outputs alive at the end of day `d`, bucketed by age measured
/// to that instant.
pub fn age_distribution(store: &PartitionStore, d: DayIndex) -> Result<BucketMap, StoreError> {
    store.check_day(d)?;
    let taxonomy = BucketTaxonomy::standard();
    let end = store.calendar().end_of(d);
    let mut buckets = BucketMap::default();
    for r in store.scan_alive_window(d, d)? {
        if r.is_alive_at(end) {
            buckets.add(taxonomy.classify(end.0 - r.born.0)?, r.value);
        }
    }
    Ok(buckets)
}

/// Age buckets for every day of `[start, end]` from a set of records that
/// includes everything alive in that window (extra records are harmless).
///
/// Each record is alive on a contiguous run of days and its age bucket only
/// moves upward, so it contributes one constant-value interval per bucket.
/// Intervals are accumulated in per-bucket difference arrays.
pub fn window_age_distributions(
    records: &[OutputRecord],
    calendar: &Calendar,
    start: DayIndex,
    end: DayIndex,
    taxonomy: &BucketTaxonomy,
) -> Vec<BucketMap> {
    let width = (end.0 - start.0 + 1) as usize;
    let genesis = calendar.genesis_midnight().0;
    let lowers: Vec<i64> = BucketId::ALL.iter().map(|&b| taxonomy.lower_bound_secs(b)).collect();

    let accumulate = |chunk: &[OutputRecord]| {
        let mut diff = vec![[0i128; BucketId::COUNT]; width + 1];
        for r in chunk {
            let offset = r.born.0 - genesis;
            let born_day = offset.div_euclid(SECONDS_PER_DAY);
            let first = born_day.max(i64::from(start.0));
            let last = match r.spent {
                None => i64::from(end.0),
                Some(s) => ((s.0 - genesis).div_euclid(SECONDS_PER_DAY) - 1).min(i64::from(end.0)),
            };
            if last < first {
                continue;
            }
            // first day whose end-of-day age reaches `lower`
            let reach = |lower: i64| (offset + lower + SECONDS_PER_DAY - 1).div_euclid(SECONDS_PER_DAY) - 1;
            let v = i128::from(r.value.0);
            for (b, &lower) in lowers.iter().enumerate() {
                let lo = reach(lower).max(first);
                let hi = lowers.get(b + 1).map_or(last, |&next| (reach(next) - 1).min(last));
                if lo > hi {
                    continue;
                }
                diff[(lo - i64::from(start.0)) as usize][b] += v;
                diff[(hi + 1 - i64::from(start.0)) as usize][b] -= v;
            }
        }
        diff
    };

    const PAR_CHUNK: usize = 1 << 16;
    let diff = records
        .par_chunks(PAR_CHUNK)
        .map(accumulate)
        .reduce(
            || vec![[0i128; BucketId::COUNT]; width + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
                a
            },
        );

    let mut running = [0i128; BucketId::COUNT];
    diff[..width]
        .iter()
        .map(|delta| {
            let mut map = BucketMap::default();
            for (b, (acc, dv)) in running.iter_mut().zip(delta).enumerate() {
                *acc += dv;
                map.0[b] = Amount(u64::try_from(*acc).expect("bucket totals are non-negative"));
            }
            map
        })
        .collect()
}

/// Computes one STXO row and one UTXO row per day in `[from, to]`.
/// The result does not depend on `chunk_days` or the degree of parallelism.
pub fn build_tables(
    store: &PartitionStore,
    from: DayIndex,
    to: DayIndex,
    opts: &EngineOptions,
) -> Result<CohortTables, EngineError> {
    if opts.chunk_days == 0 {
        return Err(EngineError::ZeroChunk);
    }
    if from > to {
        return Err(StoreError::InvertedRange { start: from.0, end: to.0 }.into());
    }
    store.check_day(to)?;
    match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| EngineError::ThreadPool(e.to_string()))?
            .install(|| build_tables_inner(store, from, to, opts.chunk_days)),
        None => build_tables_inner(store, from, to, opts.chunk_days),
    }
}

fn build_tables_inner(store: &PartitionStore, from: DayIndex, to: DayIndex, chunk: u32) -> Result<CohortTables, EngineError> {
    let calendar = *store.calendar();
    let taxonomy = BucketTaxonomy::standard();
    let mut tables = CohortTables::empty(calendar);
    let mut carry = alive_before(store, from)?;

    let mut ws = from.0;
    while ws <= to.0 {
        let we = ws.saturating_add(chunk - 1).min(to.0);
        let days: Vec<DayIndex> = (ws..=we).map(DayIndex).collect();
        let per_day = days
            .par_iter()
            .map(|&d| {
                let births = store.birth_cohort(d)?;
                let deaths = DeathSummary::from_records(&store.death_cohort(d)?, &taxonomy)?;
                Ok((births, deaths))
            })
            .collect::<Result<Vec<_>, StoreError>>()?;

        let horizon = calendar.end_of(DayIndex(ws));
        carry.retain(|r| r.spent.is_none_or(|s| s >= horizon));
        for (d, (births, deaths)) in days.iter().zip(per_day) {
            tables.stxo.push(StxoRow {
                date: *d,
                newborn: births.iter().map(|r| r.value).sum(),
                dead: deaths.dead,
                wal_seconds: deaths.wal_seconds(),
                lifespan: deaths.lifespan,
            });
            carry.extend(births.into_iter().filter(|r| r.spent.is_none_or(|s| s >= horizon)));
        }

        let ages = window_age_distributions(&carry, &calendar, DayIndex(ws), DayIndex(we), &taxonomy);
        tables.utxo.extend(days.iter().zip(ages).map(|(&date, age)| UtxoRow { date, age }));

        let past_window = calendar.end_of(DayIndex(we));
        carry.retain(|r| r.spent.is_none_or(|s| s >= past_window));
        ws = we + 1;
    }
    Ok(tables)
}

/// Records born before `from` that are still alive at the end of `from`.
fn alive_before(store: &PartitionStore, from: DayIndex) -> Result<Vec<OutputRecord>, StoreError> {
    if from.0 == 0 {
        return Ok(Vec::new());
    }
    let horizon: Timestamp = store.calendar().end_of(from);
    let parts = (0..from.0)
        .into_par_iter()
        .map(|d| {
            let mut recs = store.birth_cohort(DayIndex(d))?;
            recs.retain(|r| r.spent.is_none_or(|s| s >= horizon));
            Ok(recs)
        })
        .collect::<Result<Vec<_>, StoreError>>()?;
    Ok(parts.concat())
}
