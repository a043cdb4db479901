//! CSV exports of the cohort tables and derived series, and the matching
//! importers.
//!
//! Dates are `YYYY/MM/DD`, amounts are BTC with eight decimals, and WAL is
//! in days with six decimals (empty when nothing was spent).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::model::{Amount, BucketId, BucketMap, Calendar, CohortTables, DayIndex, StxoRow, UtxoRow};
use crate::series::{self, SeriesError};

pub const DATE_FORMAT: &str = "%Y/%m/%d";
pub const STXO_HEADER: &str = "date,newborn,dead,WAL,-9,-7,-5,-3,-1,1,3,5,7,9,11";
pub const UTXO_HEADER: &str = "date,-9,-7,-5,-3,-1,1,3,5,7,9,11";
pub const SERIES_HEADER: &str = "date,net_new,supply,velocity";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

pub fn stxo_file_name(chain: &str, end: NaiveDate) -> String {
    format!("{chain}ResultSTXO{}.csv", end.format("%Y-%m-%d"))
}

pub fn utxo_file_name(chain: &str, end: NaiveDate) -> String {
    format!("{chain}ResultUTXO{}.csv", end.format("%Y-%m-%d"))
}

pub fn format_date(calendar: &Calendar, d: DayIndex) -> String {
    calendar.date_of(d).format(DATE_FORMAT).to_string()
}

pub fn format_wal_days(wal_seconds: Option<f64>) -> String {
    wal_seconds.map(|s| format!("{:.6}", s / 86_400.0)).unwrap_or_default()
}

fn format_signed_btc(v: i64) -> String {
    let sign = if v < 0 { "-" } else { "" };
    format!("{sign}{}", Amount(v.unsigned_abs()).to_btc_string())
}

fn push_buckets(line: &mut String, m: &BucketMap) {
    for (_, v) in m.iter() {
        line.push(',');
        line.push_str(&v.to_btc_string());
    }
}

pub fn write_stxo(tables: &CohortTables, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{STXO_HEADER}")?;
    for r in &tables.stxo {
        let mut line = format!(
            "{},{},{},{}",
            format_date(&tables.calendar, r.date),
            r.newborn.to_btc_string(),
            r.dead.to_btc_string(),
            format_wal_days(r.wal_seconds)
        );
        push_buckets(&mut line, &r.lifespan);
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn write_utxo(tables: &CohortTables, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{UTXO_HEADER}")?;
    for r in &tables.utxo {
        let mut line = format_date(&tables.calendar, r.date);
        push_buckets(&mut line, &r.age);
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn write_series(tables: &CohortTables, mut out: impl Write) -> Result<(), ExportError> {
    let net = series::net_new(tables);
    let supply = series::circulating_supply(tables)?;
    let velocity = series::velocity(tables)?;
    let w = |e| ExportError::Io { path: PathBuf::from("<series>"), source: e };
    writeln!(out, "{SERIES_HEADER}").map_err(w)?;
    for ((d, n), (s, v)) in net.points().zip(supply.values.iter().zip(&velocity.values)) {
        let v = v.map(|v| format!("{v:.12}")).unwrap_or_default();
        writeln!(out, "{},{},{},{v}", format_date(&tables.calendar, d), format_signed_btc(n), s.to_btc_string())
            .map_err(w)?;
    }
    out.flush().map_err(w)
}

fn create(path: &Path) -> Result<BufWriter<File>, ExportError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn export_stxo_csv(tables: &CohortTables, path: impl AsRef<Path>) -> Result<(), ExportError> {
    let path = path.as_ref();
    write_stxo(tables, create(path)?).map_err(io_err(path))
}

pub fn export_utxo_csv(tables: &CohortTables, path: impl AsRef<Path>) -> Result<(), ExportError> {
    let path = path.as_ref();
    write_utxo(tables, create(path)?).map_err(io_err(path))
}

pub fn export_series_csv(tables: &CohortTables, path: impl AsRef<Path>) -> Result<(), ExportError> {
    let path = path.as_ref();
    write_series(tables, create(path)?).map_err(|e| match e {
        ExportError::Io { source, .. } => ExportError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

struct Lines<'a> {
    path: &'a Path,
    calendar: &'a Calendar,
}

impl Lines<'_> {
    fn err(&self, line: usize, reason: impl Into<String>) -> ExportError {
        ExportError::Parse { path: self.path.to_path_buf(), line, reason: reason.into() }
    }

    fn read(&self, header: &str, width: usize) -> Result<Vec<(usize, Vec<String>)>, ExportError> {
        let text = std::fs::read_to_string(self.path).map_err(io_err(self.path))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == header => {}
            _ => return Err(self.err(1, format!("expected header {header:?}"))),
        }
        lines
            .map(|(i, l)| {
                let fields: Vec<String> = l.split(',').map(str::to_owned).collect();
                if fields.len() != width {
                    return Err(self.err(i + 1, format!("expected {width} fields, found {}", fields.len())));
                }
                Ok((i + 1, fields))
            })
            .collect()
    }

    fn date(&self, line: usize, s: &str) -> Result<DayIndex, ExportError> {
        let date = NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| self.err(line, format!("date {s:?}: {e}")))?;
        self.calendar.day_of_date(date).map_err(|e| self.err(line, e.to_string()))
    }

    fn amount(&self, line: usize, s: &str) -> Result<Amount, ExportError> {
        Amount::parse_btc(s).map_err(|e| self.err(line, e.to_string()))
    }

    fn buckets(&self, line: usize, fields: &[String]) -> Result<BucketMap, ExportError> {
        let mut m = BucketMap::default();
        for (b, s) in BucketId::ALL.iter().zip(fields) {
            m[*b] = self.amount(line, s)?;
        }
        Ok(m)
    }
}

pub fn import_stxo_csv(path: impl AsRef<Path>, calendar: &Calendar) -> Result<Vec<StxoRow>, ExportError> {
    let p = Lines { path: path.as_ref(), calendar };
    p.read(STXO_HEADER, 15)?
        .into_iter()
        .map(|(line, f)| {
            let wal_seconds = match f[3].as_str() {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|e| p.err(line, format!("WAL {s:?}: {e}")))? * 86_400.0),
            };
            Ok(StxoRow {
                date: p.date(line, &f[0])?,
                newborn: p.amount(line, &f[1])?,
                dead: p.amount(line, &f[2])?,
                wal_seconds,
                lifespan: p.buckets(line, &f[4..])?,
            })
        })
        .collect()
}

pub fn import_utxo_csv(path: impl AsRef<Path>, calendar: &Calendar) -> Result<Vec<UtxoRow>, ExportError> {
    let p = Lines { path: path.as_ref(), calendar };
    p.read(UTXO_HEADER, 12)?
        .into_iter()
        .map(|(line, f)| Ok(UtxoRow { date: p.date(line, &f[0])?, age: p.buckets(line, &f[1..])? }))
        .collect()
}

pub fn import_tables(stxo: impl AsRef<Path>, utxo: impl AsRef<Path>, calendar: Calendar) -> Result<CohortTables, ExportError> {
    Ok(CohortTables { stxo: import_stxo_csv(stxo, &calendar)?, utxo: import_utxo_csv(utxo, &calendar)?, calendar })
}
