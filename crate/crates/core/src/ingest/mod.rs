//! Reading input files and joining raw outputs with the inputs that spend
//! them into the derived `(value, block_timestamp, spent_block_timestamp)`
//! table.

pub mod extsort;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Amount, OutputRecord, Timestamp};
use extsort::{read_str, read_u64, write_str, ExternalSorter, Spill};

pub const DERIVED_HEADER: [&str; 3] = ["value", "block_timestamp", "spent_block_timestamp"];
pub const OUTPUTS_HEADER: [&str; 4] = ["tx_id", "output_index", "value", "block_timestamp"];
pub const INPUTS_HEADER: [&str; 3] = ["spent_tx_id", "spent_output_index", "spent_block_timestamp"];

/// Rejected rows kept verbatim in [`ParseStats`]; the rest are only counted.
const MAX_REPORTED_REJECTS: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    Schema { path: PathBuf, column: String },
    #[error("outpoint {tx_id}:{index} is spent more than once")]
    DuplicateSpend { tx_id: String, index: u32 },
    #[error("outpoint {tx_id}:{index} appears more than once in the outputs")]
    DuplicateOutput { tx_id: String, index: u32 },
    #[error("outpoint {tx_id}:{index} is spent at {spent} before it was created at {born}")]
    SpentBeforeBorn { tx_id: String, index: u32, born: Timestamp, spent: Timestamp },
    #[error("{path}:{line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("external sort: {0}")]
    Spill(#[source] io::Error),
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivedFormat {
    Csv,
    Ndjson,
}

impl DerivedFormat {
    pub fn from_path(path: &Path) -> DerivedFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson") | Some("jsonl") => DerivedFormat::Ndjson,
            _ => DerivedFormat::Csv,
        }
    }
}

impl std::str::FromStr for DerivedFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(DerivedFormat::Csv),
            "ndjson" | "jsonl" => Ok(DerivedFormat::Ndjson),
            other => Err(format!("unknown format `{other}` (expected csv or ndjson)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowReject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub accepted: u64,
    pub rejected: u64,
    /// The first rejected rows, with 1-based line numbers.
    pub rejects: Vec<RowReject>,
}

impl ParseStats {
    fn reject(&mut self, path: &Path, line: u64, reason: String) {
        log::warn!("{}:{line}: rejected row: {reason}", path.display());
        self.rejected += 1;
        if self.rejects.len() < MAX_REPORTED_REJECTS {
            self.rejects.push(RowReject { line, reason });
        }
    }
}

enum Source {
    Csv { reader: csv::Reader<BufReader<File>>, cols: [usize; 3], row: csv::StringRecord },
    Ndjson { lines: io::Lines<BufReader<File>>, line: u64 },
}

/// Streams [`OutputRecord`]s out of a derived-table file. Malformed rows
/// are skipped and tallied in [`DerivedReader::stats`].
pub struct DerivedReader {
    path: PathBuf,
    source: Source,
    stats: ParseStats,
}

impl DerivedReader {
    pub fn open(path: impl AsRef<Path>, format: DerivedFormat) -> Result<DerivedReader, IngestError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| IngestError::io(&path, e))?;
        let source = match format {
            DerivedFormat::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .from_reader(BufReader::with_capacity(1 << 20, file));
                let headers = reader
                    .headers()
                    .map_err(|e| IngestError::Csv { path: path.clone(), source: e })?
                    .clone();
                let mut cols = [0usize; 3];
                for (slot, name) in cols.iter_mut().zip(DERIVED_HEADER) {
                    *slot = headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
                        IngestError::Schema { path: path.clone(), column: name.to_string() }
                    })?;
                }
                Source::Csv { reader, cols, row: csv::StringRecord::new() }
            }
            DerivedFormat::Ndjson => {
                Source::Ndjson { lines: BufReader::with_capacity(1 << 20, file).lines(), line: 0 }
            }
        };
        Ok(DerivedReader { path, source, stats: ParseStats::default() })
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn into_stats(self) -> ParseStats {
        self.stats
    }

    /// Next accepted record. Row-level problems are recorded and skipped;
    /// only I/O and schema failures surface as errors.
    pub fn next_record(&mut self) -> Result<Option<OutputRecord>, IngestError> {
        loop {
            let (line, parsed) = match &mut self.source {
                Source::Csv { reader, cols, row } => {
                    match reader.read_record(row) {
                        Ok(false) => return Ok(None),
                        Ok(true) => {}
                        Err(e) => {
                            if e.is_io_error() {
                                return Err(IngestError::Csv { path: self.path.clone(), source: e });
                            }
                            let line = e.position().map_or(0, |p| p.line());
                            self.stats.reject(&self.path, line, e.to_string());
                            continue;
                        }
                    }
                    let line = row.position().map_or(0, |p| p.line());
                    let field = |i: usize| row.get(i).map(str::trim);
                    (line, parse_fields(field(cols[0]), field(cols[1]), field(cols[2])))
                }
                Source::Ndjson { lines, line } => {
                    let text = match lines.next() {
                        None => return Ok(None),
                        Some(Ok(t)) => t,
                        Some(Err(e)) => return Err(IngestError::io(&self.path, e)),
                    };
                    *line += 1;
                    if text.trim().is_empty() {
                        continue;
                    }
                    let parsed = match serde_json::from_str::<serde_json::Value>(&text) {
                        Ok(serde_json::Value::Object(obj)) => {
                            for required in &DERIVED_HEADER[..2] {
                                if !obj.contains_key(*required) {
                                    return Err(IngestError::Schema {
                                        path: self.path.clone(),
                                        column: required.to_string(),
                                    });
                                }
                            }
                            let text_of = |k: &str| match obj.get(k) {
                                None | Some(serde_json::Value::Null) => Some(String::new()),
                                Some(serde_json::Value::String(s)) => Some(s.clone()),
                                Some(serde_json::Value::Number(n)) => Some(n.to_string()),
                                Some(_) => None,
                            };
                            let (v, b, s) = (text_of("value"), text_of("block_timestamp"), text_of("spent_block_timestamp"));
                            parse_fields(v.as_deref(), b.as_deref(), s.as_deref())
                        }
                        Ok(_) => Err("expected a JSON object".to_string()),
                        Err(e) => Err(format!("invalid JSON: {e}")),
                    };
                    (*line, parsed)
                }
            };
            match parsed {
                Ok(rec) => {
                    self.stats.accepted += 1;
                    return Ok(Some(rec));
                }
                Err(reason) => self.stats.reject(&self.path, line, reason),
            }
        }
    }
}

impl Iterator for DerivedReader {
    type Item = Result<OutputRecord, IngestError>;
    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

fn parse_fields(value: Option<&str>, born: Option<&str>, spent: Option<&str>) -> Result<OutputRecord, String> {
    let value = value.ok_or("missing value field")?;
    let born = born.ok_or("missing block_timestamp field")?;
    let value: u64 = value.parse().map_err(|_| format!("invalid satoshi value `{value}`"))?;
    let born = Timestamp::parse(born).map_err(|e| e.to_string())?;
    let spent = match spent {
        None | Some("") => None,
        Some(s) => Some(Timestamp::parse(s).map_err(|e| e.to_string())?),
    };
    OutputRecord::new(Amount(value), born, spent).map_err(|e| format!("integrity error: {e}"))
}

#[derive(Debug, Clone)]
pub struct ParsedDerived {
    pub records: Vec<OutputRecord>,
    pub stats: ParseStats,
}

/// Reads a whole derived file into memory.
pub fn parse_derived_file(path: impl AsRef<Path>, format: DerivedFormat) -> Result<ParsedDerived, IngestError> {
    let mut reader = DerivedReader::open(path, format)?;
    let mut records = Vec::new();
    while let Some(rec) = reader.next_record()? {
        records.push(rec);
    }
    Ok(ParsedDerived { records, stats: reader.into_stats() })
}

/// Streaming writer for the derived CSV format. Timestamps are written as
/// ISO-8601 UTC; an unspent output has an empty `spent_block_timestamp`.
pub struct DerivedWriter<W: Write> {
    out: W,
}

impl DerivedWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        DerivedWriter::new(BufWriter::with_capacity(1 << 20, File::create(path)?))
    }
}

impl<W: Write> DerivedWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{}", DERIVED_HEADER.join(","))?;
        Ok(DerivedWriter { out })
    }

    pub fn write(&mut self, r: &OutputRecord) -> io::Result<()> {
        match r.spent {
            Some(s) => writeln!(self.out, "{},{},{}", r.value.0, r.born.to_iso(), s.to_iso()),
            None => writeln!(self.out, "{},{},", r.value.0, r.born.to_iso()),
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_derived_csv<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a OutputRecord>,
) -> io::Result<()> {
    let mut w = DerivedWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish().map(drop)
}

pub fn write_derived_ndjson<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a OutputRecord>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let row = serde_json::json!({
            "value": r.value.0,
            "block_timestamp": r.born.to_iso(),
            "spent_block_timestamp": r.spent.map(Timestamp::to_iso),
        });
        writeln!(w, "{row}")?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawOutput {
    pub tx_id: String,
    pub output_index: u32,
    pub value: Amount,
    pub block_timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawInput {
    pub spent_tx_id: String,
    pub spent_output_index: u32,
    pub spent_block_timestamp: Timestamp,
}

impl Spill for RawOutput {
    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_str(w, &self.tx_id)?;
        w.write_all(&self.output_index.to_le_bytes())?;
        w.write_all(&self.value.0.to_le_bytes())?;
        w.write_all(&self.block_timestamp.0.to_le_bytes())
    }

    fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Self>> {
        let Some(tx_id) = read_str(r)? else { return Ok(None) };
        let mut idx = [0u8; 4];
        r.read_exact(&mut idx)?;
        let value = read_u64(r)?;
        let ts = read_u64(r)? as i64;
        Ok(Some(RawOutput {
            tx_id,
            output_index: u32::from_le_bytes(idx),
            value: Amount(value),
            block_timestamp: Timestamp(ts),
        }))
    }
}

impl Spill for RawInput {
    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_str(w, &self.spent_tx_id)?;
        w.write_all(&self.spent_output_index.to_le_bytes())?;
        w.write_all(&self.spent_block_timestamp.0.to_le_bytes())
    }

    fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Self>> {
        let Some(spent_tx_id) = read_str(r)? else { return Ok(None) };
        let mut idx = [0u8; 4];
        r.read_exact(&mut idx)?;
        let ts = read_u64(r)? as i64;
        Ok(Some(RawInput {
            spent_tx_id,
            spent_output_index: u32::from_le_bytes(idx),
            spent_block_timestamp: Timestamp(ts),
        }))
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<(csv::Reader<BufReader<File>>, Vec<usize>), IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(BufReader::with_capacity(1 << 20, file));
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv { path: path.to_path_buf(), source: e })?
        .clone();
    let cols = expected
        .iter()
        .map(|name| {
            headers.iter().position(|h| h.trim() == *name).ok_or_else(|| IngestError::Schema {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((reader, cols))
}

fn raw_rows<T>(
    path: &Path,
    expected: &'static [&'static str],
    parse: fn(&[&str]) -> Result<T, String>,
) -> Result<impl Iterator<Item = Result<T, IngestError>>, IngestError> {
    let (reader, cols) = open_csv(path, expected)?;
    let path = path.to_path_buf();
    Ok(reader.into_records().map(move |row| {
        let row = row.map_err(|e| IngestError::Csv { path: path.clone(), source: e })?;
        let line = row.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = cols.iter().map(|&i| row.get(i).unwrap_or("").trim()).collect();
        parse(&fields).map_err(|reason| IngestError::Row { path: path.clone(), line, reason })
    }))
}

/// Streams `outputs.csv` rows. Raw files are expected to be well formed, so
/// a bad row is an error rather than a skip.
pub fn read_raw_outputs(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<RawOutput, IngestError>>, IngestError> {
    raw_rows(path.as_ref(), &OUTPUTS_HEADER, |f| {
        Ok(RawOutput {
            tx_id: f[0].to_string(),
            output_index: f[1].parse().map_err(|_| format!("invalid output_index `{}`", f[1]))?,
            value: Amount(f[2].parse().map_err(|_| format!("invalid value `{}`", f[2]))?),
            block_timestamp: Timestamp::parse(f[3]).map_err(|e| e.to_string())?,
        })
    })
}

pub fn read_raw_inputs(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<RawInput, IngestError>>, IngestError> {
    raw_rows(path.as_ref(), &INPUTS_HEADER, |f| {
        Ok(RawInput {
            spent_tx_id: f[0].to_string(),
            spent_output_index: f[1].parse().map_err(|_| format!("invalid spent_output_index `{}`", f[1]))?,
            spent_block_timestamp: Timestamp::parse(f[2]).map_err(|e| e.to_string())?,
        })
    })
}

pub fn write_raw_outputs<'a>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = &'a RawOutput>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", OUTPUTS_HEADER.join(","))?;
    for o in rows {
        writeln!(w, "{},{},{},{}", o.tx_id, o.output_index, o.value.0, o.block_timestamp.to_iso())?;
    }
    w.flush()
}

pub fn write_raw_inputs<'a>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = &'a RawInput>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", INPUTS_HEADER.join(","))?;
    for i in rows {
        writeln!(w, "{},{},{}", i.spent_tx_id, i.spent_output_index, i.spent_block_timestamp.to_iso())?;
    }
    w.flush()
}

#[derive(Debug, Clone)]
pub struct JoinOptions {
    /// Items held in memory per sorted run before spilling.
    pub run_len: usize,
    pub spill_dir: Option<PathBuf>,
}

impl Default for JoinOptions {
    fn default() -> Self {
        JoinOptions { run_len: 4_000_000, spill_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub records: u64,
    pub spent: u64,
    /// Inputs whose outpoint is absent from the outputs.
    pub dangling_inputs: u64,
}

/// Matches every output with the (at most one) input that spends it.
/// Both sides are sorted by outpoint with bounded memory, so the emitted
/// sequence is in outpoint order regardless of input file order.
pub fn join_inputs_outputs<O, I, F>(
    outputs: O,
    inputs: I,
    opts: &JoinOptions,
    mut sink: F,
) -> Result<JoinReport, IngestError>
where
    O: IntoIterator<Item = Result<RawOutput, IngestError>>,
    I: IntoIterator<Item = Result<RawInput, IngestError>>,
    F: FnMut(OutputRecord) -> Result<(), IngestError>,
{
    let mut out_sorter = ExternalSorter::new(opts.run_len, opts.spill_dir.clone());
    for o in outputs {
        out_sorter.push(o?).map_err(IngestError::Spill)?;
    }
    let mut in_sorter = ExternalSorter::new(opts.run_len, opts.spill_dir.clone());
    for i in inputs {
        in_sorter.push(i?).map_err(IngestError::Spill)?;
    }
    let mut outs = out_sorter.finish().map_err(IngestError::Spill)?;
    let mut ins = in_sorter.finish().map_err(IngestError::Spill)?.peekable();

    let mut report = JoinReport::default();
    let mut prev: Option<(String, u32)> = None;
    while let Some(out) = outs.next().transpose().map_err(IngestError::Spill)? {
        let key = (out.tx_id.as_str(), out.output_index);
        if prev.as_ref().is_some_and(|(t, i)| (t.as_str(), *i) == key) {
            return Err(IngestError::DuplicateOutput { tx_id: out.tx_id, index: out.output_index });
        }
        let mut spent = None;
        loop {
            let cmp = match ins.peek() {
                None => break,
                Some(Err(_)) => {
                    let err = ins.next().and_then(Result::err).expect("peeked error");
                    return Err(IngestError::Spill(err));
                }
                Some(Ok(inp)) => (inp.spent_tx_id.as_str(), inp.spent_output_index).cmp(&key),
            };
            match cmp {
                std::cmp::Ordering::Greater => break,
                std::cmp::Ordering::Less => {
                    report.dangling_inputs += 1;
                    ins.next();
                }
                std::cmp::Ordering::Equal => {
                    let inp = ins.next().and_then(Result::ok).expect("peeked input");
                    if spent.is_some() {
                        return Err(IngestError::DuplicateSpend { tx_id: out.tx_id, index: out.output_index });
                    }
                    spent = Some(inp.spent_block_timestamp);
                }
            }
        }
        let record = OutputRecord::new(out.value, out.block_timestamp, spent).map_err(|_| {
            IngestError::SpentBeforeBorn {
                tx_id: out.tx_id.clone(),
                index: out.output_index,
                born: out.block_timestamp,
                spent: spent.unwrap_or(out.block_timestamp),
            }
        })?;
        report.records += 1;
        report.spent += u64::from(spent.is_some());
        sink(record)?;
        prev = Some((out.tx_id, out.output_index));
    }
    for rest in ins {
        rest.map_err(IngestError::Spill)?;
        report.dangling_inputs += 1;
    }
    if report.dangling_inputs > 0 {
        log::warn!("{} input(s) reference outpoints absent from the outputs", report.dangling_inputs);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn out(tx: &str, idx: u32, v: u64, t: i64) -> Result<RawOutput, IngestError> {
        Ok(RawOutput { tx_id: tx.into(), output_index: idx, value: Amount(v), block_timestamp: Timestamp(t) })
    }

    fn inp(tx: &str, idx: u32, t: i64) -> Result<RawInput, IngestError> {
        Ok(RawInput { spent_tx_id: tx.into(), spent_output_index: idx, spent_block_timestamp: Timestamp(t) })
    }

    fn join(o: Vec<Result<RawOutput, IngestError>>, i: Vec<Result<RawInput, IngestError>>) -> Result<(Vec<OutputRecord>, JoinReport), IngestError> {
        let mut recs = Vec::new();
        let rep = join_inputs_outputs(o, i, &JoinOptions::default(), |r| {
            recs.push(r);
            Ok(())
        })?;
        Ok((recs, rep))
    }

    #[test]
    fn genesis_row_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "d.csv", "value,block_timestamp,spent_block_timestamp\n5000000000,2009-01-03T18:15:05Z,\n");
        let parsed = parse_derived_file(&p, DerivedFormat::Csv).unwrap();
        assert_eq!(parsed.records, vec![OutputRecord::unspent(Amount::from_btc(50), Timestamp(1_231_006_505))]);
        assert_eq!(parsed.stats.accepted, 1);
        assert_eq!(parsed.stats.rejected, 0);
    }

    #[test]
    fn same_block_spend_accepted_and_backwards_spend_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "d.csv",
            "value,block_timestamp,spent_block_timestamp\n\
             10,2009-01-03T18:15:05Z,2009-01-03T18:15:05Z\n\
             10,2009-01-03T18:15:05Z,2009-01-03T18:15:04Z\n\
             abc,2009-01-03T18:15:05Z,\n\
             7,1231006505,\n",
        );
        let parsed = parse_derived_file(&p, DerivedFormat::Csv).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.records[0].lifespan_secs(), Some(0));
        assert_eq!(parsed.stats.rejected, 2);
        assert_eq!(parsed.stats.rejects[0].line, 3);
        assert!(parsed.stats.rejects[0].reason.contains("integrity"));
        assert_eq!(parsed.stats.rejects[1].line, 4);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "d.csv", "value,block_timestamp\n1,2009-01-03T18:15:05Z\n");
        match DerivedReader::open(&p, DerivedFormat::Csv) {
            Err(IngestError::Schema { column, .. }) => assert_eq!(column, "spent_block_timestamp"),
            other => panic!("expected schema error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn ndjson_parses_like_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "d.ndjson",
            "{\"value\":5000000000,\"block_timestamp\":\"2009-01-03T18:15:05Z\",\"spent_block_timestamp\":null}\n\
             \n\
             {\"value\":\"3\",\"block_timestamp\":1231006505,\"spent_block_timestamp\":1231006600}\n\
             {\"value\":3,\"block_timestamp\":1231006505,\"spent_block_timestamp\":1}\n",
        );
        let parsed = parse_derived_file(&p, DerivedFormat::Ndjson).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.records[1].spent, Some(Timestamp(1_231_006_600)));
        assert_eq!(parsed.stats.rejects[0].line, 4);

        let bad = write_tmp(&dir, "e.ndjson", "{\"value\":1}\n");
        assert!(matches!(parse_derived_file(&bad, DerivedFormat::Ndjson), Err(IngestError::Schema { .. })));
    }

    #[test]
    fn join_examples() {
        let (recs, rep) = join(vec![out("A", 0, 5, 100)], vec![]).unwrap();
        assert_eq!(recs, vec![OutputRecord::unspent(Amount(5), Timestamp(100))]);
        assert_eq!(rep.spent, 0);

        let (recs, _) = join(vec![out("A", 0, 5, 100)], vec![inp("A", 0, 250)]).unwrap();
        assert_eq!(recs[0].lifespan_secs(), Some(150));

        match join(vec![out("A", 0, 5, 100)], vec![inp("A", 0, 250), inp("A", 0, 260)]) {
            Err(IngestError::DuplicateSpend { tx_id, index }) => assert_eq!((tx_id.as_str(), index), ("A", 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn join_reports_dangling_and_rejects_bad_spends() {
        let (recs, rep) = join(
            vec![out("B", 1, 5, 100), out("B", 0, 1, 100)],
            vec![inp("A", 0, 200), inp("B", 1, 300), inp("C", 9, 300)],
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(rep, JoinReport { records: 2, spent: 1, dangling_inputs: 2 });

        assert!(matches!(
            join(vec![out("A", 0, 5, 100)], vec![inp("A", 0, 50)]),
            Err(IngestError::SpentBeforeBorn { .. })
        ));
        assert!(matches!(
            join(vec![out("A", 0, 5, 100), out("A", 0, 6, 100)], vec![]),
            Err(IngestError::DuplicateOutput { .. })
        ));
    }

    #[test]
    fn join_with_spilling_matches_in_memory() {
        let outputs: Vec<RawOutput> = (0..500u32)
            .map(|i| RawOutput { tx_id: format!("{:04x}", (i * 7919) % 500), output_index: i % 3, value: Amount(u64::from(i)), block_timestamp: Timestamp(i64::from(i)) })
            .collect();
        let inputs: Vec<RawInput> = outputs
            .iter()
            .filter(|o| o.value.0 % 2 == 0)
            .map(|o| RawInput { spent_tx_id: o.tx_id.clone(), spent_output_index: o.output_index, spent_block_timestamp: Timestamp(o.block_timestamp.0 + 10) })
            .collect();
        let run = |run_len| {
            let mut recs = Vec::new();
            let opts = JoinOptions { run_len, spill_dir: None };
            join_inputs_outputs(outputs.iter().cloned().map(Ok), inputs.iter().cloned().rev().map(Ok), &opts, |r| {
                recs.push(r);
                Ok(())
            })
            .unwrap();
            recs
        };
        let small = run(17);
        assert_eq!(small, run(1_000_000));
        assert_eq!(small.len(), 500);
        assert_eq!(small.iter().filter(|r| r.spent.is_some()).count(), 250);
    }

    #[test]
    fn raw_files_roundtrip_through_join() {
        let dir = tempfile::tempdir().unwrap();
        let o = write_tmp(&dir, "outputs.csv", "tx_id,output_index,value,block_timestamp\naa,0,100,2009-01-03T00:00:00Z\naa,1,200,2009-01-03T00:00:00Z\n");
        let i = write_tmp(&dir, "inputs.csv", "spent_tx_id,spent_output_index,spent_block_timestamp\naa,1,2009-01-05T00:00:00Z\n");
        let mut recs = Vec::new();
        let rep = join_inputs_outputs(read_raw_outputs(&o).unwrap(), read_raw_inputs(&i).unwrap(), &JoinOptions::default(), |r| {
            recs.push(r);
            Ok(())
        })
        .unwrap();
        assert_eq!(rep.spent, 1);
        assert_eq!(recs[1].lifespan_secs(), Some(2 * 86_400));

        let bad = write_tmp(&dir, "bad.csv", "tx_id,value,block_timestamp\n");
        assert!(matches!(read_raw_outputs(&bad).err(), Some(IngestError::Schema { .. })));
    }
}
