//! Consistency checks over a built table set. Failures are report content,
//! not errors.

use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};

use crate::model::{Amount, CohortTables, DayIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub date: String,
    pub expected: Value,
    pub actual: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub check: String,
    pub status: Status,
    pub first_failure: Option<Failure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Report {
    fn pass(check: &str) -> Report {
        Report { check: check.into(), status: Status::Pass, first_failure: None, detail: None }
    }

    fn fail(check: &str, date: String, expected: Value, actual: Value, detail: String) -> Report {
        Report {
            check: check.into(),
            status: Status::Fail,
            first_failure: Some(Failure { date, expected, actual }),
            detail: Some(detail),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.status, &self.first_failure) {
            (Status::Pass, _) => write!(f, "PASS {}", self.check),
            (Status::Fail, Some(fail)) => write!(
                f,
                "FAIL {} at {}: expected {}, actual {}{}",
                self.check,
                fail.date,
                fail.expected,
                fail.actual,
                self.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
            ),
            (Status::Fail, None) => write!(f, "FAIL {}", self.check),
        }
    }
}

fn date_str(tables: &CohortTables, d: DayIndex) -> String {
    tables.calendar.date_of(d).to_string()
}

/// Supply computed two ways must agree exactly on every day: cumulative
/// net issuance, and the sum of the alive-set age buckets.
///
/// Tables that do not start at genesis are seeded from the first day's
/// bucket sum, which still checks the day-over-day recurrence.
pub fn check_supply_consistency(tables: &CohortTables) -> Report {
    const CHECK: &str = "supply_consistency";
    let mut cumulative: i128 = match (tables.stxo.first(), tables.utxo.first()) {
        (Some(s), Some(u)) if s.date.0 > 0 => {
            i128::from(u.age.total().0) - (i128::from(s.newborn.0) - i128::from(s.dead.0))
        }
        _ => 0,
    };
    for (s, u) in tables.stxo.iter().zip(&tables.utxo) {
        if s.date != u.date {
            return Report::fail(
                CHECK,
                date_str(tables, s.date),
                json!(date_str(tables, s.date)),
                json!(date_str(tables, u.date)),
                "STXO and UTXO rows are misaligned".into(),
            );
        }
        cumulative += i128::from(s.newborn.0) - i128::from(s.dead.0);
        let alive = i128::from(u.age.total().0);
        if alive != cumulative {
            return Report::fail(
                CHECK,
                date_str(tables, s.date),
                json!(cumulative as i64),
                json!(alive as i64),
                format!("delta {} sat", alive - cumulative),
            );
        }
    }
    Report::pass(CHECK)
}

/// Block subsidy schedule: `initial` per block, halved (integer shift)
/// every `halving_interval` blocks, `blocks_per_day` blocks each day
/// starting at genesis midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct HalvingSchedule {
    pub initial_subsidy: Amount,
    pub halving_interval: u64,
    pub blocks_per_day: u64,
    /// Allowed deviation per day in blocks' worth of that day's opening
    /// subsidy. One block absorbs jitter in how many blocks land on each
    /// side of midnight; zero demands an exact match.
    #[serde(default = "default_slack")]
    pub slack_blocks: u64,
}

fn default_slack() -> u64 {
    1
}

impl HalvingSchedule {
    pub fn new(initial_subsidy: Amount, halving_interval: u64, blocks_per_day: u64) -> Self {
        HalvingSchedule { initial_subsidy, halving_interval, blocks_per_day, slack_blocks: 1 }
    }

    pub fn exact(self) -> Self {
        HalvingSchedule { slack_blocks: 0, ..self }
    }

    pub fn subsidy_at(&self, height: u64) -> Amount {
        let halvings = height / self.halving_interval.max(1);
        if halvings >= 64 {
            Amount::ZERO
        } else {
            Amount(self.initial_subsidy.0 >> halvings)
        }
    }

    /// Total subsidy of the blocks mined on day `d`.
    pub fn expected_for_day(&self, d: DayIndex) -> Amount {
        let first = u64::from(d.0) * self.blocks_per_day;
        (first..first + self.blocks_per_day).map(|h| self.subsidy_at(h)).sum()
    }
}

pub fn check_halving(tables: &CohortTables, schedule: &HalvingSchedule) -> Report {
    const CHECK: &str = "halving";
    for row in &tables.stxo {
        let expected = schedule.expected_for_day(row.date);
        let actual = i128::from(row.newborn.0) - i128::from(row.dead.0);
        let opening = schedule.subsidy_at(u64::from(row.date.0) * schedule.blocks_per_day);
        let slack = i128::from(opening.0) * i128::from(schedule.slack_blocks);
        if (actual - i128::from(expected.0)).abs() > slack {
            return Report::fail(
                CHECK,
                date_str(tables, row.date),
                json!(expected.0),
                json!(actual as i64),
                format!("net new deviates from the subsidy schedule by more than {slack} sat"),
            );
        }
    }
    Report::pass(CHECK)
}

/// Dates ascend by exactly one day in both tables, and both cover the same range.
pub fn check_continuity(tables: &CohortTables) -> Report {
    const CHECK: &str = "continuity";
    let walk = |dates: &mut dyn Iterator<Item = DayIndex>, name: &str| -> Option<Report> {
        let mut prev: Option<DayIndex> = None;
        for d in dates {
            if let Some(p) = prev {
                if d != p.next() {
                    let expected = p.next();
                    let detail = if d <= p {
                        format!("{name} table repeats or reorders {}", date_str(tables, d))
                    } else {
                        format!("{name} table is missing {}", date_str(tables, expected))
                    };
                    return Some(Report::fail(
                        CHECK,
                        date_str(tables, expected),
                        json!(date_str(tables, expected)),
                        json!(date_str(tables, d)),
                        detail,
                    ));
                }
            }
            prev = Some(d);
        }
        None
    };
    if let Some(r) = walk(&mut tables.stxo.iter().map(|r| r.date), "STXO") {
        return r;
    }
    if let Some(r) = walk(&mut tables.utxo.iter().map(|r| r.date), "UTXO") {
        return r;
    }
    let range = |first: Option<DayIndex>, last: Option<DayIndex>| first.zip(last);
    let stxo_range = range(tables.stxo.first().map(|r| r.date), tables.stxo.last().map(|r| r.date));
    let utxo_range = range(tables.utxo.first().map(|r| r.date), tables.utxo.last().map(|r| r.date));
    if stxo_range != utxo_range {
        let show = |r: Option<(DayIndex, DayIndex)>| match r {
            Some((a, b)) => json!(format!("{}..{}", date_str(tables, a), date_str(tables, b))),
            None => json!("empty"),
        };
        let date = stxo_range.or(utxo_range).map(|(a, _)| date_str(tables, a)).unwrap_or_default();
        return Report::fail(CHECK, date, show(stxo_range), show(utxo_range), "STXO and UTXO ranges differ".into());
    }
    Report::pass(CHECK)
}

pub fn run_all(tables: &CohortTables, halving: Option<&HalvingSchedule>) -> Vec<Report> {
    let mut reports = vec![check_continuity(tables), check_supply_consistency(tables)];
    if let Some(schedule) = halving {
        reports.push(check_halving(tables, schedule));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BucketId, BucketMap, Calendar, StxoRow, UtxoRow};

    /// Coinbase-only chain: `per_day[d]` minted on day `d`, nothing spent,
    /// all value sitting in the youngest bucket.
    fn coinbase_tables(per_day: &[u64]) -> CohortTables {
        let mut t = CohortTables::empty(Calendar::bitcoin());
        let mut supply = 0;
        for (i, &v) in per_day.iter().enumerate() {
            supply += v;
            let date = DayIndex(i as u32);
            t.stxo.push(StxoRow { date, newborn: Amount(v), dead: Amount(0), wal_seconds: None, lifespan: BucketMap::default() });
            let mut age = BucketMap::default();
            age[BucketId::UnderDay] = Amount(supply);
            t.utxo.push(UtxoRow { date, age });
        }
        t
    }

    #[test]
    fn supply_consistency_pass_fail_and_empty() {
        let mut t = coinbase_tables(&[10, 20, 30, 40]);
        assert!(check_supply_consistency(&t).passed());
        t.utxo[2].age[BucketId::FiveToTenYears].0 += 1;
        let r = check_supply_consistency(&t);
        assert_eq!(r.status, Status::Fail);
        let f = r.first_failure.as_ref().unwrap();
        assert_eq!(f.date, "2009-01-05");
        assert_eq!(f.expected, json!(60));
        assert_eq!(f.actual, json!(61));
        assert!(r.detail.as_deref().unwrap().contains("delta 1"));
        assert!(check_supply_consistency(&CohortTables::empty(Calendar::bitcoin())).passed());
    }

    #[test]
    fn report_json_shape() {
        let r = check_supply_consistency(&coinbase_tables(&[1]));
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v, json!({"check": "supply_consistency", "status": "PASS", "first_failure": null}));
    }

    #[test]
    fn halving_schedule_arithmetic() {
        let s = HalvingSchedule::new(Amount::from_btc(50), 2100, 144);
        assert_eq!(s.expected_for_day(DayIndex(0)), Amount::from_btc(7200));
        assert_eq!(s.expected_for_day(DayIndex(14)), Amount::from_btc(84 * 50 + 60 * 25));
        assert_eq!(s.expected_for_day(DayIndex(15)), Amount::from_btc(3600));
        assert_eq!(s.subsidy_at(2100 * 64), Amount::ZERO);
    }

    #[test]
    fn halving_check_detects_injected_issuance() {
        let s = HalvingSchedule::new(Amount::from_btc(50), 2100, 144);
        let per_day: Vec<u64> = (0..40).map(|d| s.expected_for_day(DayIndex(d)).0).collect();
        let t = coinbase_tables(&per_day);
        assert!(check_halving(&t, &s).passed());
        assert!(check_halving(&t, &s.exact()).passed());

        let mut bad = per_day.clone();
        bad[20] += 2 * 25 * 100_000_000;
        let r = check_halving(&coinbase_tables(&bad), &s);
        assert_eq!(r.first_failure.unwrap().date, "2009-01-23");

        let mut one_sat = per_day;
        one_sat[7] += 1;
        assert!(check_halving(&coinbase_tables(&one_sat), &s).passed());
        assert!(!check_halving(&coinbase_tables(&one_sat), &s.exact()).passed());
    }

    #[test]
    fn halving_without_halvings_is_constant() {
        let s = HalvingSchedule::new(Amount::from_btc(50), 1_000_000, 144);
        let t = coinbase_tables(&[720_000_000_000; 10]);
        assert!(check_halving(&t, &s.exact()).passed());
    }

    #[test]
    fn continuity_cases() {
        let t = coinbase_tables(&[1, 1, 1, 1, 1]);
        assert!(check_continuity(&t).passed());
        assert!(check_continuity(&CohortTables::empty(Calendar::bitcoin())).passed());

        let mut gap = t.clone();
        gap.stxo.remove(2);
        let r = check_continuity(&gap);
        assert_eq!(r.first_failure.unwrap().date, "2009-01-05");

        let mut short = t.clone();
        short.utxo.pop();
        let r = check_continuity(&short);
        assert_eq!(r.status, Status::Fail);
        assert!(r.detail.unwrap().contains("ranges differ"));

        let mut dup = t;
        dup.utxo[3].date = DayIndex(2);
        assert!(!check_continuity(&dup).passed());
    }
}
