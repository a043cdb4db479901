//! Economic series derived from cohort tables: net issuance, circulating
//! supply and trailing 30-day token velocity.

use thiserror::Error;

use crate::model::{Amount, CohortTables, DayIndex};

pub const VELOCITY_WINDOW_DAYS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("tables start at {0}, but supply must be accumulated from genesis")]
    NotFromGenesis(DayIndex),
    #[error("cumulative supply turns negative on {0}")]
    NegativeSupply(DayIndex),
}

/// A date-contiguous series starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<T> {
    pub start: DayIndex,
    pub values: Vec<T>,
}

impl<T: Copy> Series<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (DayIndex, T)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (DayIndex(self.start.0 + i as u32), *v))
    }
}

fn start_of(tables: &CohortTables) -> DayIndex {
    tables.first_day().unwrap_or_default()
}

/// Per-day `newborn − dead`, in signed satoshi. With fees paid back through
/// the coinbase this equals the day's block subsidy.
pub fn net_new(tables: &CohortTables) -> Series<i64> {
    Series {
        start: start_of(tables),
        values: tables.stxo.iter().map(|r| r.newborn.0 as i64 - r.dead.0 as i64).collect(),
    }
}

/// Running sum of net issuance from genesis.
pub fn circulating_supply(tables: &CohortTables) -> Result<Series<Amount>, SeriesError> {
    let start = start_of(tables);
    if start.0 != 0 {
        return Err(SeriesError::NotFromGenesis(start));
    }
    let mut total: i128 = 0;
    let mut values = Vec::with_capacity(tables.len());
    for row in &tables.stxo {
        total += i128::from(row.newborn.0) - i128::from(row.dead.0);
        let v = u64::try_from(total).map_err(|_| SeriesError::NegativeSupply(row.date))?;
        values.push(Amount(v));
    }
    Ok(Series { start, values })
}

/// Spent value over the trailing 30 days (clipped at the first row)
/// divided by the day's supply. Absent where supply is zero.
pub fn velocity(tables: &CohortTables) -> Result<Series<Option<f64>>, SeriesError> {
    let supply = circulating_supply(tables)?;
    let dead: Vec<u128> = tables.stxo.iter().map(|r| u128::from(r.dead.0)).collect();
    let mut window: u128 = 0;
    let mut values = Vec::with_capacity(dead.len());
    for (i, s) in supply.values.iter().enumerate() {
        window += dead[i];
        if i >= VELOCITY_WINDOW_DAYS {
            window -= dead[i - VELOCITY_WINDOW_DAYS];
        }
        values.push((s.0 > 0).then(|| window as f64 / s.0 as f64));
    }
    Ok(Series { start: supply.start, values })
}
