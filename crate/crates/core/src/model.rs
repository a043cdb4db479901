//! Domain types shared by every stage of the pipeline: satoshi amounts,
//! UTC timestamps, day indices relative to a chain's genesis date, the
//! output record itself and the eleven-bucket duration taxonomy.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Index, IndexMut, Sub};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SATOSHI_PER_BTC: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("negative duration: {0} s")]
    NegativeDuration(i64),
    #[error("timestamp {ts} precedes genesis {genesis}")]
    BeforeGenesis { ts: Timestamp, genesis: NaiveDate },
    #[error("spent timestamp {spent} precedes birth timestamp {born}")]
    SpentBeforeBorn { born: Timestamp, spent: Timestamp },
    #[error("invalid timestamp `{0}`")]
    BadTimestamp(String),
    #[error("invalid amount `{0}`")]
    BadAmount(String),
    #[error("day {0} is outside the representable calendar")]
    DayOutOfRange(u32),
}

/// An exact quantity of satoshi.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_btc(btc: u64) -> Amount {
        Amount(btc * SATOSHI_PER_BTC)
    }

    pub fn sat(self) -> u64 {
        self.0
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    /// Decimal BTC with exactly eight fractional digits.
    pub fn to_btc_string(self) -> String {
        btc_from_satoshi(self)
    }

    /// Parses a decimal BTC string with at most eight fractional digits.
    pub fn parse_btc(s: &str) -> Result<Amount, ModelError> {
        let bad = || ModelError::BadAmount(s.to_string());
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() || frac.len() > 8 || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u64 = int.parse().map_err(|_| bad())?;
        let mut frac_sat: u64 = 0;
        for (i, b) in frac.bytes().enumerate() {
            frac_sat += u64::from(b - b'0') * 10u64.pow(7 - i as u32);
        }
        whole
            .checked_mul(SATOSHI_PER_BTC)
            .and_then(|w| w.checked_add(frac_sat))
            .map(Amount)
            .ok_or_else(bad)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.copied().sum()
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&btc_from_satoshi(*self))
    }
}

pub fn btc_from_satoshi(v: Amount) -> String {
    format!("{}.{:08}", v.0 / SATOSHI_PER_BTC, v.0 % SATOSHI_PER_BTC)
}

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn secs(self) -> i64 {
        self.0
    }

    pub fn from_date(date: NaiveDate) -> Timestamp {
        Timestamp(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
    }

    /// Accepts RFC 3339 / ISO-8601 UTC (`2009-01-03T18:15:05Z`) or integer epoch seconds.
    pub fn parse(s: &str) -> Result<Timestamp, ModelError> {
        let s = s.trim();
        if let Ok(secs) = s.parse::<i64>() {
            return Ok(Timestamp(secs));
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.timestamp()));
        }
        // tolerate the space separator and missing offset used by warehouse dumps
        let trimmed = s.trim_end_matches(" UTC").trim_end_matches('Z');
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(trimmed, fmt) {
                return Ok(Timestamp(naive.and_utc().timestamp()));
            }
        }
        Err(ModelError::BadTimestamp(s.to_string()))
    }

    pub fn to_iso(self) -> String {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
            None => self.0.to_string(),
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

/// Whole days elapsed since the genesis date.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DayIndex(pub u32);

impl DayIndex {
    pub fn get(self) -> u32 {
        self.0
    }

    pub fn next(self) -> DayIndex {
        DayIndex(self.0 + 1)
    }
}

impl fmt::Display for DayIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "day {}", self.0)
    }
}

/// Maps between timestamps, day indices and calendar dates for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Calendar {
    genesis: NaiveDate,
}

impl Calendar {
    pub fn new(genesis: NaiveDate) -> Calendar {
        Calendar { genesis }
    }

    pub fn bitcoin() -> Calendar {
        Calendar::new(NaiveDate::from_ymd_opt(2009, 1, 3).expect("valid date"))
    }

    pub fn genesis(&self) -> NaiveDate {
        self.genesis
    }

    pub fn genesis_midnight(&self) -> Timestamp {
        Timestamp::from_date(self.genesis)
    }

    pub fn day_index(&self, t: Timestamp) -> Result<DayIndex, ModelError> {
        day_index(t, self.genesis)
    }

    /// First second of day `d`.
    pub fn start_of(&self, d: DayIndex) -> Timestamp {
        Timestamp(self.genesis_midnight().0 + i64::from(d.0) * SECONDS_PER_DAY)
    }

    /// Midnight following day `d` (exclusive end).
    pub fn end_of(&self, d: DayIndex) -> Timestamp {
        Timestamp(self.genesis_midnight().0 + (i64::from(d.0) + 1) * SECONDS_PER_DAY)
    }

    pub fn date_of(&self, d: DayIndex) -> NaiveDate {
        self.genesis + chrono::Days::new(u64::from(d.0))
    }

    pub fn day_of_date(&self, date: NaiveDate) -> Result<DayIndex, ModelError> {
        self.day_index(Timestamp::from_date(date))
    }
}

pub fn day_index(t: Timestamp, genesis: NaiveDate) -> Result<DayIndex, ModelError> {
    let offset = t.0 - Timestamp::from_date(genesis).0;
    if offset < 0 {
        return Err(ModelError::BeforeGenesis { ts: t, genesis });
    }
    u32::try_from(offset / SECONDS_PER_DAY)
        .map(DayIndex)
        .map_err(|_| ModelError::BadTimestamp(t.0.to_string()))
}

/// One transaction output: its value, when it was created and, if it has
/// been consumed, when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutputRecord {
    pub value: Amount,
    pub born: Timestamp,
    pub spent: Option<Timestamp>,
}

impl OutputRecord {
    pub fn new(value: Amount, born: Timestamp, spent: Option<Timestamp>) -> Result<Self, ModelError> {
        if let Some(s) = spent {
            if s < born {
                return Err(ModelError::SpentBeforeBorn { born, spent: s });
            }
        }
        Ok(OutputRecord { value, born, spent })
    }

    pub fn unspent(value: Amount, born: Timestamp) -> Self {
        OutputRecord { value, born, spent: None }
    }

    pub fn lifespan_secs(&self) -> Option<i64> {
        self.spent.map(|s| s.0 - self.born.0)
    }

    /// Alive at the reference instant: created strictly before it and not
    /// spent strictly before it.
    pub fn is_alive_at(&self, at: Timestamp) -> bool {
        self.born < at && self.spent.is_none_or(|s| s >= at)
    }

    /// The record as it was known just before `horizon`: absent if created
    /// later, unspent if spent later.
    pub fn as_of(&self, horizon: Timestamp) -> Option<OutputRecord> {
        (self.born < horizon).then(|| OutputRecord { spent: self.spent.filter(|&s| s < horizon), ..*self })
    }
}

/// The eleven duration buckets, labelled as in the published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(i8)]
pub enum BucketId {
    UnderDay = -9,
    DayToMonth = -7,
    MonthToQuarter = -5,
    QuarterToHalfYear = -3,
    HalfYearToYear = -1,
    OneToTwoYears = 1,
    TwoToThreeYears = 3,
    ThreeToFourYears = 5,
    FourToFiveYears = 7,
    FiveToTenYears = 9,
    OverTenYears = 11,
}

impl BucketId {
    pub const COUNT: usize = 11;

    pub const ALL: [BucketId; 11] = [
        BucketId::UnderDay,
        BucketId::DayToMonth,
        BucketId::MonthToQuarter,
        BucketId::QuarterToHalfYear,
        BucketId::HalfYearToYear,
        BucketId::OneToTwoYears,
        BucketId::TwoToThreeYears,
        BucketId::ThreeToFourYears,
        BucketId::FourToFiveYears,
        BucketId::FiveToTenYears,
        BucketId::OverTenYears,
    ];

    pub fn label(self) -> i8 {
        self as i8
    }

    /// Position 0..11 in ascending duration order.
    pub fn ordinal(self) -> usize {
        ((self as i8 + 9) / 2) as usize
    }

    pub fn from_ordinal(i: usize) -> Option<BucketId> {
        BucketId::ALL.get(i).copied()
    }

    pub fn from_label(label: i8) -> Option<BucketId> {
        BucketId::ALL.into_iter().find(|b| b.label() == label)
    }
}

impl fmt::Display for BucketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Inclusive lower bounds, in days, of each bucket in ordinal order.
/// A month is 30 days, a quarter 90, half a year 180, a year 365, ten years 3650.
pub const BUCKET_LOWER_DAYS: [u32; 11] = [0, 1, 30, 90, 180, 365, 730, 1095, 1460, 1825, 3650];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketTaxonomy {
    lower_secs: [i64; 11],
}

impl BucketTaxonomy {
    pub fn standard() -> BucketTaxonomy {
        let mut lower_secs = [0i64; 11];
        for (slot, days) in lower_secs.iter_mut().zip(BUCKET_LOWER_DAYS) {
            *slot = i64::from(days) * SECONDS_PER_DAY;
        }
        BucketTaxonomy { lower_secs }
    }

    pub fn lower_bound_secs(&self, b: BucketId) -> i64 {
        self.lower_secs[b.ordinal()]
    }

    /// Exclusive upper bound; `None` for the open-ended last bucket.
    pub fn upper_bound_secs(&self, b: BucketId) -> Option<i64> {
        self.lower_secs.get(b.ordinal() + 1).copied()
    }

    pub fn classify(&self, d: i64) -> Result<BucketId, ModelError> {
        if d < 0 {
            return Err(ModelError::NegativeDuration(d));
        }
        let idx = self.lower_secs.partition_point(|&lo| lo <= d) - 1;
        Ok(BucketId::ALL[idx])
    }
}

impl Default for BucketTaxonomy {
    fn default() -> Self {
        BucketTaxonomy::standard()
    }
}

pub fn classify_duration(d: i64, taxonomy: &BucketTaxonomy) -> Result<BucketId, ModelError> {
    taxonomy.classify(d)
}

/// Satoshi totals per bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BucketMap(pub [Amount; 11]);

impl BucketMap {
    pub fn total(&self) -> Amount {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BucketId, Amount)> + '_ {
        BucketId::ALL.into_iter().zip(self.0.iter().copied())
    }

    pub fn add(&mut self, b: BucketId, v: Amount) {
        self[b] += v;
    }
}

impl Index<BucketId> for BucketMap {
    type Output = Amount;
    fn index(&self, b: BucketId) -> &Amount {
        &self.0[b.ordinal()]
    }
}

impl IndexMut<BucketId> for BucketMap {
    fn index_mut(&mut self, b: BucketId) -> &mut Amount {
        &mut self.0[b.ordinal()]
    }
}

/// One day of death-cohort statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StxoRow {
    pub date: DayIndex,
    pub newborn: Amount,
    pub dead: Amount,
    /// Value-weighted mean lifespan in seconds; absent when nothing of value died.
    pub wal_seconds: Option<f64>,
    pub lifespan: BucketMap,
}

/// One day of alive-set statistics, ages measured to the end of the day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtxoRow {
    pub date: DayIndex,
    pub age: BucketMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTables {
    pub calendar: Calendar,
    pub stxo: Vec<StxoRow>,
    pub utxo: Vec<UtxoRow>,
}

impl CohortTables {
    pub fn empty(calendar: Calendar) -> CohortTables {
        CohortTables { calendar, stxo: Vec::new(), utxo: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.stxo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stxo.is_empty()
    }

    pub fn first_day(&self) -> Option<DayIndex> {
        self.stxo.first().map(|r| r.date)
    }

    pub fn last_day(&self) -> Option<DayIndex> {
        self.stxo.last().map(|r| r.date)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    #[test]
    fn btc_rendering() {
        assert_eq!(btc_from_satoshi(Amount(100_000_000)), "1.00000000");
        assert_eq!(btc_from_satoshi(Amount(1)), "0.00000001");
        assert_eq!(btc_from_satoshi(Amount(0)), "0.00000000");
        assert_eq!(btc_from_satoshi(Amount(2_100_000_000_000_000)), "21000000.00000000");
    }

    #[test]
    fn btc_parse_roundtrip() {
        for s in ["0.00000000", "0.00000001", "50.00000000", "123.45678901"] {
            assert_eq!(Amount::parse_btc(s).unwrap().to_btc_string(), s);
        }
        assert_eq!(Amount::parse_btc("1.5").unwrap(), Amount(150_000_000));
        assert_eq!(Amount::parse_btc("7").unwrap(), Amount::from_btc(7));
        for bad in ["", "-1.0", "1.000000001", "1e8", "abc", ".5"] {
            assert!(Amount::parse_btc(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn classify_examples() {
        let t = BucketTaxonomy::standard();
        assert_eq!(t.classify(0).unwrap(), BucketId::UnderDay);
        assert_eq!(t.classify(86_400).unwrap(), BucketId::DayToMonth);
        assert_eq!(t.classify(86_399).unwrap(), BucketId::UnderDay);
        assert_eq!(t.classify(283_824_000).unwrap().label(), 9);
        assert_eq!(t.classify(3650 * 86_400).unwrap().label(), 11);
        assert_eq!(t.classify(i64::MAX).unwrap().label(), 11);
        assert_eq!(t.classify(-1), Err(ModelError::NegativeDuration(-1)));
    }

    #[test]
    fn bucket_labels_and_ordinals() {
        let labels: Vec<i8> = BucketId::ALL.iter().map(|b| b.label()).collect();
        assert_eq!(labels, vec![-9, -7, -5, -3, -1, 1, 3, 5, 7, 9, 11]);
        for (i, b) in BucketId::ALL.into_iter().enumerate() {
            assert_eq!(b.ordinal(), i);
            assert_eq!(BucketId::from_label(b.label()), Some(b));
        }
        assert_eq!(BucketId::from_label(0), None);
    }

    #[test]
    fn day_index_examples() {
        let g = NaiveDate::from_ymd_opt(2009, 1, 3).unwrap();
        assert_eq!(day_index(ts("2009-01-03T00:00:01Z"), g).unwrap(), DayIndex(0));
        assert_eq!(day_index(ts("2009-01-04T00:00:00Z"), g).unwrap(), DayIndex(1));
        assert_eq!(day_index(ts("2021-02-10T12:00:00Z"), g).unwrap(), DayIndex(4421));
        assert!(matches!(
            day_index(ts("2009-01-02T23:59:59Z"), g),
            Err(ModelError::BeforeGenesis { .. })
        ));
    }

    #[test]
    fn calendar_roundtrip() {
        let cal = Calendar::bitcoin();
        let d = DayIndex(4421);
        assert_eq!(cal.date_of(d), NaiveDate::from_ymd_opt(2021, 2, 10).unwrap());
        assert_eq!(cal.day_of_date(cal.date_of(d)).unwrap(), d);
        assert_eq!(cal.end_of(d).0 - cal.start_of(d).0, SECONDS_PER_DAY);
        assert_eq!(cal.day_index(cal.end_of(d)).unwrap(), d.next());
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(ts("2009-01-03T18:15:05Z").0, 1_231_006_505);
        assert_eq!(ts("1231006505").0, 1_231_006_505);
        assert_eq!(ts("2009-01-03 18:15:05 UTC").0, 1_231_006_505);
        assert_eq!(ts("2009-01-03T18:15:05+00:00").0, 1_231_006_505);
        assert_eq!(Timestamp(1_231_006_505).to_iso(), "2009-01-03T18:15:05Z");
        assert!(Timestamp::parse("yesterday").is_err());
    }

    #[test]
    fn record_integrity() {
        let born = Timestamp(1000);
        assert!(OutputRecord::new(Amount(1), born, Some(born)).is_ok());
        assert!(OutputRecord::new(Amount(1), born, Some(Timestamp(999))).is_err());
        let r = OutputRecord::new(Amount(5), born, Some(Timestamp(2000))).unwrap();
        assert_eq!(r.lifespan_secs(), Some(1000));
        assert!(r.is_alive_at(Timestamp(1001)));
        assert!(r.is_alive_at(Timestamp(2000)));
        assert!(!r.is_alive_at(Timestamp(2001)));
        assert!(!r.is_alive_at(born));
    }
}
