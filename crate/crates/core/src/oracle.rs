//! Brute-force reference tables.
//!
//! Every row is computed by scanning every record, with its own date
//! arithmetic and its own bucket table in whole days. Slow on purpose:
//! O(records × days). Only the output types are shared with the engine.

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::model::{Amount, BucketId, BucketMap, Calendar, CohortTables, DayIndex, OutputRecord, StxoRow, UtxoRow};

const DAY: i64 = 86_400;

/// Bucket lower bounds in days, youngest first.
const LOWER_DAYS: [(i64, BucketId); 11] = [
    (3650, BucketId::OverTenYears),
    (1825, BucketId::FiveToTenYears),
    (1460, BucketId::FourToFiveYears),
    (1095, BucketId::ThreeToFourYears),
    (730, BucketId::TwoToThreeYears),
    (365, BucketId::OneToTwoYears),
    (180, BucketId::HalfYearToYear),
    (90, BucketId::QuarterToHalfYear),
    (30, BucketId::MonthToQuarter),
    (1, BucketId::DayToMonth),
    (0, BucketId::UnderDay),
];

fn bucket_of(secs: i64) -> BucketId {
    assert!(secs >= 0, "negative duration {secs}");
    LOWER_DAYS.iter().find(|(days, _)| secs >= days * DAY).map(|(_, b)| *b).expect("zero bound matches")
}

fn midnight(genesis: NaiveDate) -> i64 {
    genesis.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

/// Value-weighted mean lifespan as an exact fraction of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExactWal {
    pub weighted_secs: u128,
    pub value: u128,
}

impl ExactWal {
    pub fn as_f64(&self) -> Option<f64> {
        (self.value > 0).then(|| self.weighted_secs as f64 / self.value as f64)
    }
}

/// Exact WAL of the records spent on day `d`.
pub fn exact_wal(records: &[OutputRecord], calendar: &Calendar, d: DayIndex) -> ExactWal {
    let start = midnight(calendar.genesis()) + i64::from(d.0) * DAY;
    let mut w = ExactWal::default();
    for r in records {
        if let Some(s) = r.spent {
            if s.0 >= start && s.0 < start + DAY {
                w.weighted_secs += u128::from(r.value.0) * (s.0 - r.born.0) as u128;
                w.value += u128::from(r.value.0);
            }
        }
    }
    w
}

fn row(records: &[OutputRecord], genesis_midnight: i64, d: u32) -> (StxoRow, UtxoRow) {
    let start = genesis_midnight + i64::from(d) * DAY;
    let end = start + DAY;
    let mut newborn = 0u64;
    let mut dead = 0u64;
    let mut weighted = 0u128;
    let mut lifespan = BucketMap::default();
    let mut age = BucketMap::default();
    for r in records {
        let v = r.value.0;
        let born = r.born.0;
        if born >= start && born < end {
            newborn += v;
        }
        match r.spent {
            Some(s) if s.0 >= start && s.0 < end => {
                dead += v;
                weighted += u128::from(v) * (s.0 - born) as u128;
                lifespan[bucket_of(s.0 - born)].0 += v;
            }
            _ => {}
        }
        let alive = born < end && r.spent.is_none_or(|s| s.0 >= end);
        if alive {
            age[bucket_of(end - born)].0 += v;
        }
    }
    let date = DayIndex(d);
    let wal_seconds = (dead > 0).then(|| weighted as f64 / dead as f64);
    (
        StxoRow { date, newborn: Amount(newborn), dead: Amount(dead), wal_seconds, lifespan },
        UtxoRow { date, age },
    )
}

/// Reference tables for every day in `from..=to`.
pub fn oracle_tables(records: &[OutputRecord], calendar: Calendar, from: DayIndex, to: DayIndex) -> CohortTables {
    let g = midnight(calendar.genesis());
    let rows: Vec<(StxoRow, UtxoRow)> = (from.0..=to.0).into_par_iter().map(|d| row(records, g, d)).collect();
    let (stxo, utxo) = rows.into_iter().unzip();
    CohortTables { calendar, stxo, utxo }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;

    #[test]
    fn bucket_table_edges() {
        assert_eq!(bucket_of(0), BucketId::UnderDay);
        assert_eq!(bucket_of(DAY - 1), BucketId::UnderDay);
        assert_eq!(bucket_of(DAY), BucketId::DayToMonth);
        assert_eq!(bucket_of(365 * DAY), BucketId::OneToTwoYears);
        assert_eq!(bucket_of(3650 * DAY), BucketId::OverTenYears);
    }

    #[test]
    fn immortal_output_ages_upward() {
        let cal = Calendar::bitcoin();
        let rec = OutputRecord::unspent(Amount(5), Timestamp(cal.genesis_midnight().0 + 100));
        let t = oracle_tables(&[rec], cal, DayIndex(0), DayIndex(3700));
        let labels: Vec<i8> = t
            .utxo
            .iter()
            .map(|r| {
                assert_eq!(r.age.total(), Amount(5));
                r.age.iter().find(|(_, v)| v.0 > 0).unwrap().0.label()
            })
            .collect();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((labels[0], labels[1], *labels.last().unwrap()), (-9, -7, 11));
    }

    #[test]
    fn wal_fraction() {
        let cal = Calendar::bitcoin();
        let at = |d: i64, s: i64| Timestamp(cal.genesis_midnight().0 + d * DAY + s);
        let recs = [
            OutputRecord::new(Amount(1), at(0, 0), Some(at(3, 0))).unwrap(),
            OutputRecord::new(Amount(3), at(2, 0), Some(at(3, 0))).unwrap(),
        ];
        let w = exact_wal(&recs, &cal, DayIndex(3));
        assert_eq!(w, ExactWal { weighted_secs: 6 * DAY as u128, value: 4 });
        let t = oracle_tables(&recs, cal, DayIndex(3), DayIndex(3));
        assert_eq!(t.stxo[0].wal_seconds, w.as_f64());
    }
}
