//! Vega-Lite chart specs with the data inlined.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};
use thiserror::Error;

use crate::export::format_date;
use crate::model::{Amount, CohortTables};
use crate::series::{self, SeriesError};

const SCHEMA: &str = "https://vega.github.io/schema/vega-lite/v5.json";

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("unknown chart kind {0:?} (expected lifespan-share, age-stack, supply-reward, wal or velocity)")]
    UnknownKind(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    LifespanShare,
    AgeStack,
    SupplyReward,
    Wal,
    Velocity,
}

impl ChartKind {
    pub const ALL: [ChartKind; 5] =
        [ChartKind::LifespanShare, ChartKind::AgeStack, ChartKind::SupplyReward, ChartKind::Wal, ChartKind::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            ChartKind::LifespanShare => "lifespan-share",
            ChartKind::AgeStack => "age-stack",
            ChartKind::SupplyReward => "supply-reward",
            ChartKind::Wal => "wal",
            ChartKind::Velocity => "velocity",
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChartKind {
    type Err = ChartError;

    fn from_str(s: &str) -> Result<Self, ChartError> {
        ChartKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| ChartError::UnknownKind(s.into()))
    }
}

fn btc(v: Amount) -> f64 {
    v.0 as f64 / 1e8
}

fn date_field() -> Value {
    json!({"field": "date", "type": "temporal", "title": "date"})
}

pub fn chart_spec(tables: &CohortTables, kind: ChartKind) -> Result<Value, ChartError> {
    let date = |d| format_date(&tables.calendar, d);
    let spec = match kind {
        ChartKind::LifespanShare => {
            let mut rows = Vec::new();
            for r in tables.stxo.iter().filter(|r| r.dead.0 > 0) {
                for (b, v) in r.lifespan.iter().filter(|(_, v)| v.0 > 0) {
                    let pct = v.0 as f64 * 100.0 / r.dead.0 as f64;
                    rows.push(json!({"date": date(r.date), "bucket": b.label(), "percent": pct}));
                }
            }
            json!({
                "title": "Lifespan distribution of spent outputs",
                "data": {"values": rows},
                "mark": "line",
                "encoding": {
                    "x": date_field(),
                    "y": {"field": "percent", "type": "quantitative", "scale": {"type": "log"}, "title": "% of spent value"},
                    "color": {"field": "bucket", "type": "ordinal"}
                }
            })
        }
        ChartKind::AgeStack => {
            let rows: Vec<Value> = tables
                .utxo
                .iter()
                .flat_map(|r| r.age.iter().map(move |(b, v)| (r.date, b, v)))
                .map(|(d, b, v)| json!({"date": date(d), "bucket": b.label(), "btc": btc(v)}))
                .collect();
            json!({
                "title": "Age distribution of unspent outputs",
                "data": {"values": rows},
                "mark": "area",
                "encoding": {
                    "x": date_field(),
                    "y": {"field": "btc", "type": "quantitative", "stack": "zero", "title": "BTC"},
                    "color": {"field": "bucket", "type": "ordinal"}
                }
            })
        }
        ChartKind::SupplyReward => {
            let net = series::net_new(tables);
            let supply = series::circulating_supply(tables)?;
            let rows: Vec<Value> = net
                .points()
                .zip(&supply.values)
                .map(|((d, n), s)| json!({"date": date(d), "net_new": n as f64 / 1e8, "supply": btc(*s)}))
                .collect();
            let layer = |field: &str, title: &str| {
                json!({"mark": "line", "encoding": {
                    "x": date_field(),
                    "y": {"field": field, "type": "quantitative", "title": title}
                }})
            };
            json!({
                "title": "Daily net issuance and circulating supply",
                "data": {"values": rows},
                "layer": [layer("net_new", "net new BTC per day"), layer("supply", "supply BTC")],
                "resolve": {"scale": {"y": "independent"}}
            })
        }
        ChartKind::Wal => {
            let rows: Vec<Value> = tables
                .stxo
                .iter()
                .filter_map(|r| r.wal_seconds.map(|w| json!({"date": date(r.date), "wal_days": w / 86_400.0})))
                .collect();
            json!({
                "title": "Weighted average lifespan of spent outputs",
                "data": {"values": rows},
                "mark": "line",
                "encoding": {"x": date_field(), "y": {"field": "wal_days", "type": "quantitative", "title": "days"}}
            })
        }
        ChartKind::Velocity => {
            let v = series::velocity(tables)?;
            let rows: Vec<Value> =
                v.points().filter_map(|(d, x)| x.map(|x| json!({"date": date(d), "velocity": x}))).collect();
            json!({
                "title": "Trailing 30-day velocity",
                "data": {"values": rows},
                "mark": "line",
                "encoding": {"x": date_field(), "y": {"field": "velocity", "type": "quantitative"}}
            })
        }
    };
    let mut spec = spec;
    spec["$schema"] = json!(SCHEMA);
    Ok(spec)
}
