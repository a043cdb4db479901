//! On-disk record store laid out twice: once partitioned by birth date and
//! once by spend date.
//!
//! ```text
//! root/manifest.json
//! root/birth/<YYYY-MM-DD>.seg
//! root/death/<YYYY-MM-DD>.seg
//! ```
//!
//! A segment is a sequence of fixed-width 24-byte little-endian records
//! `(value: u64, born: i64, spent: i64)` sorted by `(born, spent, value)`;
//! an unspent output stores `i64::MAX` as its spend time. Every segment's
//! record count and SHA-256 are listed in the manifest and checked on open
//! and on every read. Writers (build, append) hold `root/.lock`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Amount, Calendar, DayIndex, ModelError, OutputRecord, Timestamp};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const RECORD_WIDTH: usize = 24;
pub const UNSPENT_SENTINEL: i64 = i64::MAX;
const STAGING_DIR: &str = ".staging";
const FORMAT_VERSION: u32 = 1;
/// Bytes of encoded records buffered in memory during `build` before they
/// are spooled to per-day scratch files.
const DEFAULT_SPOOL_BYTES: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: segment does not match its manifest entry ({reason})")]
    Checksum { path: PathBuf, reason: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("sequencing error: expected day {expected}, got day {got}")]
    Sequencing { expected: u32, got: u32 },
    #[error("spend of unknown outpoint: no unspent record of {value} sat born at {born}")]
    UnknownOutpoint { value: u64, born: Timestamp },
    #[error("inverted day range: {start} > {end}")]
    InvertedRange { start: u32, end: u32 },
    #[error("day {day} is outside the store range (0..{day_count})")]
    OutOfRange { day: u32, day_count: u32 },
    #[error("{0}: another writer holds the store lock")]
    Locked(PathBuf),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("record source failed: {0}")]
    Source(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Birth,
    Death,
}

impl Family {
    pub fn dir_name(self) -> &'static str {
        match self {
            Family::Birth => "birth",
            Family::Death => "death",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub records: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub genesis: NaiveDate,
    /// Number of complete days; days `0..day_count` are covered.
    pub day_count: u32,
    pub last_complete_day: Option<NaiveDate>,
    pub total_records: u64,
    pub spent_records: u64,
    pub birth: BTreeMap<NaiveDate, SegmentMeta>,
    pub death: BTreeMap<NaiveDate, SegmentMeta>,
}

impl Manifest {
    fn partitions(&self, family: Family) -> &BTreeMap<NaiveDate, SegmentMeta> {
        match family {
            Family::Birth => &self.birth,
            Family::Death => &self.death,
        }
    }

    fn partitions_mut(&mut self, family: Family) -> &mut BTreeMap<NaiveDate, SegmentMeta> {
        match family {
            Family::Birth => &mut self.birth,
            Family::Death => &mut self.death,
        }
    }
}

fn sort_key(r: &OutputRecord) -> (Timestamp, i64, Amount) {
    (r.born, r.spent.map_or(UNSPENT_SENTINEL, |s| s.0), r.value)
}

pub fn encode_segment(records: &mut [OutputRecord]) -> Vec<u8> {
    records.sort_unstable_by_key(sort_key);
    let mut buf = Vec::with_capacity(records.len() * RECORD_WIDTH);
    for r in records.iter() {
        encode_record(r, &mut buf);
    }
    buf
}

fn encode_record(r: &OutputRecord, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&r.value.0.to_le_bytes());
    buf.extend_from_slice(&r.born.0.to_le_bytes());
    buf.extend_from_slice(&r.spent.map_or(UNSPENT_SENTINEL, |s| s.0).to_le_bytes());
}

pub fn decode_segment(bytes: &[u8]) -> Result<Vec<OutputRecord>, StoreError> {
    if !bytes.len().is_multiple_of(RECORD_WIDTH) {
        return Err(StoreError::Integrity(format!("segment length {} is not a multiple of {RECORD_WIDTH}", bytes.len())));
    }
    Ok(bytes.chunks_exact(RECORD_WIDTH).map(decode_record).collect())
}

fn decode_record(c: &[u8]) -> OutputRecord {
    let word = |i: usize| <[u8; 8]>::try_from(&c[i * 8..i * 8 + 8]).expect("8 bytes");
    let spent = i64::from_le_bytes(word(2));
    OutputRecord {
        value: Amount(u64::from_le_bytes(word(0))),
        born: Timestamp(i64::from_le_bytes(word(1))),
        spent: (spent != UNSPENT_SENTINEL).then_some(Timestamp(spent)),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Exclusive writer guard backed by a lock file created with `O_EXCL`.
struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    fn acquire(root: &Path) -> Result<WriterLock, StoreError> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriterLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(root.to_path_buf())),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Last complete day; defaults to the latest birth or spend day seen.
    pub last_day: Option<DayIndex>,
    pub spool_bytes: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { last_day: None, spool_bytes: DEFAULT_SPOOL_BYTES }
    }
}

/// Records of one new day handed to [`PartitionStore::append_day`]: outputs
/// created that day, and spends that day of outputs already in the store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayBatch {
    pub day: DayIndex,
    pub births: Vec<OutputRecord>,
    /// Stored records (spent field still absent in the store) together with
    /// their new spend time, carried in `spent`.
    pub spends: Vec<OutputRecord>,
}

impl DayBatch {
    /// Splits records that touch `day` into births and spends as they would
    /// have been observed at the end of that day. Births whose spend falls
    /// on a later day are recorded as unspent; records untouched by `day`
    /// are ignored.
    pub fn from_records<'a>(
        calendar: &Calendar,
        day: DayIndex,
        records: impl IntoIterator<Item = &'a OutputRecord>,
    ) -> Result<DayBatch, ModelError> {
        let mut batch = DayBatch { day, ..DayBatch::default() };
        for r in records {
            let born_day = calendar.day_index(r.born)?;
            let spent_day = r.spent.map(|s| calendar.day_index(s)).transpose()?;
            if born_day == day {
                let spent = r.spent.filter(|_| spent_day == Some(day));
                batch.births.push(OutputRecord { spent, ..*r });
            } else if born_day < day && spent_day == Some(day) {
                batch.spends.push(*r);
            }
        }
        Ok(batch)
    }
}

#[derive(Debug, Clone)]
pub struct PartitionStore {
    root: PathBuf,
    calendar: Calendar,
    manifest: Manifest,
}

impl PartitionStore {
    /// Lays `records` out into birth and death partitions under `root`,
    /// replacing any store already there. Output is staged and only moved
    /// into place once complete; on failure the staging area is removed.
    pub fn build(
        records: impl IntoIterator<Item = OutputRecord>,
        calendar: Calendar,
        root: impl AsRef<Path>,
        opts: &BuildOptions,
    ) -> Result<PartitionStore, StoreError> {
        Self::build_fallible(records.into_iter().map(Ok::<_, StoreError>), calendar, root, opts)
    }

    pub fn build_fallible<E: std::fmt::Display>(
        records: impl IntoIterator<Item = Result<OutputRecord, E>>,
        calendar: Calendar,
        root: impl AsRef<Path>,
        opts: &BuildOptions,
    ) -> Result<PartitionStore, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let _lock = WriterLock::acquire(&root)?;
        let staging = root.join(STAGING_DIR);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        let result = Self::build_staged(records, calendar, &root, &staging, opts);
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result
    }

    fn build_staged<E: std::fmt::Display>(
        records: impl IntoIterator<Item = Result<OutputRecord, E>>,
        calendar: Calendar,
        root: &Path,
        staging: &Path,
        opts: &BuildOptions,
    ) -> Result<PartitionStore, StoreError> {
        let spool_dir = staging.join("spool");
        for dir in [spool_dir.clone(), staging.join("birth"), staging.join("death")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let mut spool = Spool::new(spool_dir.clone(), opts.spool_bytes);
        let mut max_day: Option<DayIndex> = None;
        let (mut total, mut spent_total) = (0u64, 0u64);
        for r in records {
            let r = r.map_err(|e| StoreError::Source(e.to_string()))?;
            let r = OutputRecord::new(r.value, r.born, r.spent)?;
            let born_day = calendar.day_index(r.born)?;
            spool.push(Family::Birth, born_day, &r)?;
            max_day = max_day.max(Some(born_day));
            if let Some(s) = r.spent {
                let death_day = calendar.day_index(s)?;
                spool.push(Family::Death, death_day, &r)?;
                max_day = max_day.max(Some(death_day));
                spent_total += 1;
            }
            total += 1;
        }
        let day_count = match (opts.last_day, max_day) {
            (Some(last), Some(seen)) if seen > last => {
                return Err(StoreError::Integrity(format!(
                    "record on {} is past the requested last day {}",
                    calendar.date_of(seen),
                    calendar.date_of(last)
                )))
            }
            (Some(last), _) => last.0 + 1,
            (None, Some(seen)) => seen.0 + 1,
            (None, None) => 0,
        };

        let keys = spool.keys();
        let metas = keys
            .par_iter()
            .map(|&(family, day)| {
                let mut recs = spool.take(family, day)?;
                let bytes = encode_segment(&mut recs);
                let date = calendar.date_of(day);
                let path = staging.join(family.dir_name()).join(format!("{date}.seg"));
                fs::write(&path, &bytes).map_err(io_err(&path))?;
                Ok((family, date, SegmentMeta { records: recs.len() as u64, sha256: sha256_hex(&bytes) }))
            })
            .collect::<Result<Vec<_>, StoreError>>()?;

        let mut manifest = Manifest {
            format_version: FORMAT_VERSION,
            genesis: calendar.genesis(),
            day_count,
            last_complete_day: day_count.checked_sub(1).map(|d| calendar.date_of(DayIndex(d))),
            total_records: total,
            spent_records: spent_total,
            birth: BTreeMap::new(),
            death: BTreeMap::new(),
        };
        for (family, date, meta) in metas {
            manifest.partitions_mut(family).insert(date, meta);
        }
        fs::remove_dir_all(&spool_dir).map_err(io_err(&spool_dir))?;

        for family in [Family::Birth, Family::Death] {
            let live = root.join(family.dir_name());
            if live.exists() {
                fs::remove_dir_all(&live).map_err(io_err(&live))?;
            }
            let staged = staging.join(family.dir_name());
            fs::rename(&staged, &live).map_err(io_err(&live))?;
        }
        let manifest_path = root.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&manifest_path, &json)?;
        fs::remove_dir_all(staging).map_err(io_err(staging))?;
        log::info!("built store at {}: {total} records over {day_count} days", root.display());
        Ok(PartitionStore { root: root.to_path_buf(), calendar, manifest })
    }

    /// Opens an existing store, verifying every segment against the manifest.
    pub fn open(root: impl AsRef<Path>) -> Result<PartitionStore, StoreError> {
        let store = Self::open_unverified(root)?;
        store.verify()?;
        Ok(store)
    }

    /// Opens without reading segments; reads are still checksummed.
    pub fn open_unverified(root: impl AsRef<Path>) -> Result<PartitionStore, StoreError> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|source| StoreError::Manifest { path: path.clone(), source })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Integrity(format!("unsupported store format version {}", manifest.format_version)));
        }
        Ok(PartitionStore { calendar: Calendar::new(manifest.genesis), root, manifest })
    }

    /// Checks every segment's checksum and that partition counts reconcile
    /// with the manifest totals.
    pub fn verify(&self) -> Result<(), StoreError> {
        for family in [Family::Birth, Family::Death] {
            self.manifest
                .partitions(family)
                .par_iter()
                .map(|(date, _)| self.read_segment(family, *date).map(drop))
                .collect::<Result<(), StoreError>>()?;
        }
        let birth: u64 = self.manifest.birth.values().map(|m| m.records).sum();
        let death: u64 = self.manifest.death.values().map(|m| m.records).sum();
        if birth != self.manifest.total_records || death != self.manifest.spent_records {
            return Err(StoreError::Integrity(format!(
                "partition counts ({birth} births, {death} deaths) disagree with manifest totals ({}, {})",
                self.manifest.total_records, self.manifest.spent_records
            )));
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn day_count(&self) -> u32 {
        self.manifest.day_count
    }

    pub fn last_day(&self) -> Option<DayIndex> {
        self.manifest.day_count.checked_sub(1).map(DayIndex)
    }

    pub fn check_day(&self, d: DayIndex) -> Result<(), StoreError> {
        if d.0 >= self.manifest.day_count {
            return Err(StoreError::OutOfRange { day: d.0, day_count: self.manifest.day_count });
        }
        Ok(())
    }

    pub fn has_partition(&self, family: Family, d: DayIndex) -> bool {
        self.manifest.partitions(family).contains_key(&self.calendar.date_of(d))
    }

    pub fn partition_count(&self, family: Family) -> usize {
        self.manifest.partitions(family).len()
    }

    pub fn segment_path(&self, family: Family, date: NaiveDate) -> PathBuf {
        self.root.join(family.dir_name()).join(format!("{date}.seg"))
    }

    fn read_segment(&self, family: Family, date: NaiveDate) -> Result<Vec<OutputRecord>, StoreError> {
        let Some(meta) = self.manifest.partitions(family).get(&date) else {
            return Ok(Vec::new());
        };
        let path = self.segment_path(family, date);
        let mut bytes = Vec::with_capacity(meta.records as usize * RECORD_WIDTH);
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(&path))?;
        if bytes.len() as u64 != meta.records * RECORD_WIDTH as u64 {
            return Err(StoreError::Checksum {
                path,
                reason: format!("{} bytes for {} records", bytes.len(), meta.records),
            });
        }
        if sha256_hex(&bytes) != meta.sha256 {
            return Err(StoreError::Checksum { path, reason: "sha256 mismatch".into() });
        }
        decode_segment(&bytes)
    }

    /// Records created on day `d`.
    pub fn birth_cohort(&self, d: DayIndex) -> Result<Vec<OutputRecord>, StoreError> {
        self.read_segment(Family::Birth, self.calendar.date_of(d))
    }

    /// Records spent on day `d`.
    pub fn death_cohort(&self, d: DayIndex) -> Result<Vec<OutputRecord>, StoreError> {
        self.read_segment(Family::Death, self.calendar.date_of(d))
    }

    /// Every record alive at some end-of-day in `[start, end]`: created
    /// before `end_of(end)` and not spent before `end_of(start)`.
    pub fn scan_alive_window(&self, start: DayIndex, end: DayIndex) -> Result<Vec<OutputRecord>, StoreError> {
        if start > end {
            return Err(StoreError::InvertedRange { start: start.0, end: end.0 });
        }
        let horizon = self.calendar.end_of(start);
        let last_date = self.calendar.date_of(end);
        let dates: Vec<NaiveDate> = self.manifest.birth.range(..=last_date).map(|(d, _)| *d).collect();
        let parts = dates
            .par_iter()
            .map(|date| {
                let mut recs = self.read_segment(Family::Birth, *date)?;
                recs.retain(|r| r.spent.is_none_or(|s| s >= horizon));
                Ok(recs)
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(parts.concat())
    }

    /// Appends the next day. Births get new birth segments; spends update
    /// the stored record in its birth segment and are written to the new
    /// death segment. Both segments for the day are written even if empty.
    pub fn append_day(&mut self, batch: &DayBatch) -> Result<&Manifest, StoreError> {
        let _lock = WriterLock::acquire(&self.root)?;
        let expected = self.manifest.day_count;
        if batch.day.0 != expected {
            return Err(StoreError::Sequencing { expected, got: batch.day.0 });
        }
        let day = batch.day;
        let date = self.calendar.date_of(day);

        let mut new_births = Vec::with_capacity(batch.births.len());
        let mut deaths = Vec::new();
        for r in &batch.births {
            let r = OutputRecord::new(r.value, r.born, r.spent)?;
            if self.calendar.day_index(r.born)? != day {
                return Err(StoreError::Integrity(format!("birth at {} is not on {date}", r.born)));
            }
            if let Some(s) = r.spent {
                if self.calendar.day_index(s)? != day {
                    return Err(StoreError::Integrity(format!("spend at {s} is not on {date}")));
                }
                deaths.push(r);
            }
            new_births.push(r);
        }

        let mut by_birth_day: BTreeMap<DayIndex, Vec<&OutputRecord>> = BTreeMap::new();
        for s in &batch.spends {
            let spent = s.spent.ok_or_else(|| StoreError::Integrity(format!("spend of {} sat has no spend time", s.value.0)))?;
            OutputRecord::new(s.value, s.born, s.spent)?;
            if self.calendar.day_index(spent)? != day {
                return Err(StoreError::Integrity(format!("spend at {spent} is not on {date}")));
            }
            let born_day = self.calendar.day_index(s.born)?;
            if born_day >= day {
                return Err(StoreError::Integrity(format!("spend of an output born at {} is not of a stored record", s.born)));
            }
            by_birth_day.entry(born_day).or_default().push(s);
        }

        let mut writes: Vec<(Family, NaiveDate, Vec<u8>, u64)> = Vec::new();
        for (born_day, spends) in by_birth_day {
            let born_date = self.calendar.date_of(born_day);
            let mut recs = self.read_segment(Family::Birth, born_date)?;
            for s in spends {
                let slot = recs
                    .iter_mut()
                    .find(|r| r.spent.is_none() && r.value == s.value && r.born == s.born)
                    .ok_or(StoreError::UnknownOutpoint { value: s.value.0, born: s.born })?;
                slot.spent = s.spent;
                deaths.push(*slot);
            }
            let n = recs.len() as u64;
            writes.push((Family::Birth, born_date, encode_segment(&mut recs), n));
        }
        let n = new_births.len() as u64;
        writes.push((Family::Birth, date, encode_segment(&mut new_births), n));
        let n = deaths.len() as u64;
        writes.push((Family::Death, date, encode_segment(&mut deaths), n));

        for family in [Family::Birth, Family::Death] {
            let dir = self.root.join(family.dir_name());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let mut manifest = self.manifest.clone();
        for (family, seg_date, bytes, records) in &writes {
            write_atomic(&self.segment_path(*family, *seg_date), bytes)?;
            manifest
                .partitions_mut(*family)
                .insert(*seg_date, SegmentMeta { records: *records, sha256: sha256_hex(bytes) });
        }
        manifest.day_count += 1;
        manifest.last_complete_day = Some(date);
        manifest.total_records += batch.births.len() as u64;
        manifest.spent_records += n;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), &json)?;
        self.manifest = manifest;
        Ok(&self.manifest)
    }
}

/// Per-(family, day) record buffers that overflow to scratch files once
/// `limit` bytes are held in memory.
struct Spool {
    dir: PathBuf,
    limit: usize,
    held: usize,
    buffers: HashMap<(Family, DayIndex), Vec<u8>>,
    spilled: std::collections::HashSet<(Family, DayIndex)>,
}

impl Spool {
    fn new(dir: PathBuf, limit: usize) -> Spool {
        Spool { dir, limit, held: 0, buffers: HashMap::new(), spilled: Default::default() }
    }

    fn path(&self, family: Family, day: DayIndex) -> PathBuf {
        self.dir.join(format!("{}-{}.spool", family.dir_name(), day.0))
    }

    fn push(&mut self, family: Family, day: DayIndex, r: &OutputRecord) -> Result<(), StoreError> {
        encode_record(r, self.buffers.entry((family, day)).or_default());
        self.held += RECORD_WIDTH;
        if self.held >= self.limit {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), StoreError> {
        let mut keys: Vec<_> = self.buffers.keys().copied().collect();
        keys.sort();
        for key in keys {
            let buf = self.buffers.get_mut(&key).expect("key present");
            if buf.is_empty() {
                continue;
            }
            let path = self.dir.join(format!("{}-{}.spool", key.0.dir_name(), key.1 .0));
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
            f.write_all(buf).map_err(io_err(&path))?;
            buf.clear();
            buf.shrink_to_fit();
            self.spilled.insert(key);
        }
        self.held = 0;
        Ok(())
    }

    fn keys(&self) -> Vec<(Family, DayIndex)> {
        let mut keys: Vec<_> = self.buffers.keys().chain(self.spilled.iter()).copied().collect();
        keys.sort();
        keys.dedup();
        keys
    }

    fn take(&self, family: Family, day: DayIndex) -> Result<Vec<OutputRecord>, StoreError> {
        let mut bytes = Vec::new();
        if self.spilled.contains(&(family, day)) {
            let path = self.path(family, day);
            bytes = fs::read(&path).map_err(io_err(&path))?;
        }
        if let Some(buf) = self.buffers.get(&(family, day)) {
            bytes.extend_from_slice(buf);
        }
        decode_segment(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> Calendar {
        Calendar::new(NaiveDate::from_ymd_opt(2009, 1, 3).unwrap())
    }

    fn at(day: u32, secs: i64) -> Timestamp {
        Timestamp(cal().start_of(DayIndex(day)).0 + secs)
    }

    fn rec(v: u64, born: Timestamp, spent: Option<Timestamp>) -> OutputRecord {
        OutputRecord::new(Amount(v), born, spent).unwrap()
    }

    #[test]
    fn segment_encoding_roundtrip() {
        let mut recs = vec![rec(5, Timestamp(10), None), rec(1, Timestamp(3), Some(Timestamp(4))), rec(0, Timestamp(3), None)];
        let bytes = encode_segment(&mut recs);
        assert_eq!(bytes.len(), 3 * RECORD_WIDTH);
        // (3, 4) sorts before (3, unspent)
        assert_eq!(&bytes[40..48], &i64::MAX.to_le_bytes()[..]);
        assert_eq!(decode_segment(&bytes).unwrap(), recs);
        assert!(decode_segment(&bytes[..23]).is_err());
    }

    #[test]
    fn build_unspent_on_distinct_days() {
        let dir = tempfile::tempdir().unwrap();
        let recs = [rec(1, at(0, 5), None), rec(2, at(1, 5), None), rec(3, at(2, 5), None)];
        let store = PartitionStore::build(recs, cal(), dir.path(), &BuildOptions::default()).unwrap();
        assert_eq!(store.partition_count(Family::Birth), 3);
        assert_eq!(store.partition_count(Family::Death), 0);
        assert_eq!(store.day_count(), 3);
        assert!(!dir.path().join(STAGING_DIR).exists());
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn build_spent_record_lands_in_both_families() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(7, at(0, 100), Some(at(5, 100)));
        let store = PartitionStore::build([r], cal(), dir.path(), &BuildOptions::default()).unwrap();
        assert_eq!(store.birth_cohort(DayIndex(0)).unwrap(), vec![r]);
        assert_eq!(store.death_cohort(DayIndex(5)).unwrap(), vec![r]);
        assert!(store.death_cohort(DayIndex(4)).unwrap().is_empty());
        assert!(dir.path().join("birth/2009-01-03.seg").exists());
        assert!(dir.path().join("death/2009-01-08.seg").exists());
    }

    #[test]
    fn cohort_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let late = rec(1, at(3, 86_399), Some(at(4, 86_400)));
        let store = PartitionStore::build([late], cal(), dir.path(), &BuildOptions::default()).unwrap();
        assert_eq!(store.birth_cohort(DayIndex(3)).unwrap().len(), 1);
        assert!(store.birth_cohort(DayIndex(4)).unwrap().is_empty());
        assert_eq!(store.death_cohort(DayIndex(5)).unwrap().len(), 1);
        assert!(store.death_cohort(DayIndex(4)).unwrap().is_empty());
    }

    #[test]
    fn build_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..50).map(|i| rec(i, at(i as u32 % 7, i as i64), (i % 3 == 0).then(|| at(9, 0)))).collect();
        let a = PartitionStore::build(recs.clone(), cal(), dir.path(), &BuildOptions::default()).unwrap();
        let b = PartitionStore::build(recs.into_iter().rev(), cal(), dir.path(), &BuildOptions::default()).unwrap();
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn spooling_matches_in_memory_build() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..2000u64).map(|i| rec(i, at((i % 13) as u32, i as i64), (i % 4 == 0).then(|| at(20, i as i64)))).collect();
        let a = PartitionStore::build(recs.clone(), cal(), dir_a.path(), &BuildOptions::default()).unwrap();
        let small = BuildOptions { spool_bytes: RECORD_WIDTH * 37, ..BuildOptions::default() };
        let b = PartitionStore::build(recs, cal(), dir_b.path(), &small).unwrap();
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn corrupted_segment_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = PartitionStore::build([rec(9, at(0, 1), None)], cal(), dir.path(), &BuildOptions::default()).unwrap();
        let path = dir.path().join("birth/2009-01-03.seg");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.birth_cohort(DayIndex(0)), Err(StoreError::Checksum { .. })));
        assert!(matches!(PartitionStore::open(dir.path()), Err(StoreError::Checksum { .. })));
    }

    #[test]
    fn last_day_option_and_range_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = BuildOptions { last_day: Some(DayIndex(9)), ..BuildOptions::default() };
        let store = PartitionStore::build([rec(1, at(2, 0), None)], cal(), dir.path(), &opts).unwrap();
        assert_eq!(store.day_count(), 10);
        let early = BuildOptions { last_day: Some(DayIndex(1)), ..BuildOptions::default() };
        assert!(PartitionStore::build([rec(1, at(2, 0), None)], cal(), dir.path(), &early).is_err());
        assert!(!dir.path().join(STAGING_DIR).exists());
        // the failed rebuild left the previous store intact
        assert_eq!(PartitionStore::open(dir.path()).unwrap().day_count(), 10);

        let before = Timestamp(cal().genesis_midnight().0 - 1);
        assert!(matches!(
            PartitionStore::build([rec(1, before, None)], cal(), dir.path(), &BuildOptions::default()),
            Err(StoreError::Model(ModelError::BeforeGenesis { .. }))
        ));
    }

    #[test]
    fn scan_alive_window_filters_dead_records() {
        let dir = tempfile::tempdir().unwrap();
        let dead_early = rec(1, at(0, 0), Some(at(2, 0)));
        let immortal = rec(2, at(0, 0), None);
        let spent_in_window = rec(3, at(1, 0), Some(at(7, 0)));
        let born_after = rec(4, at(11, 0), None);
        let store = PartitionStore::build([dead_early, immortal, spent_in_window, born_after], cal(), dir.path(), &BuildOptions::default()).unwrap();
        let mut got = store.scan_alive_window(DayIndex(5), DayIndex(10)).unwrap();
        got.sort();
        assert_eq!(got, vec![immortal, spent_in_window]);
        assert!(matches!(store.scan_alive_window(DayIndex(3), DayIndex(2)), Err(StoreError::InvertedRange { .. })));
    }

    #[test]
    fn append_day_sequence_and_backfill() {
        let dir = tempfile::tempdir().unwrap();
        let genesis_out = rec(50, at(0, 10), None);
        let mut store = PartitionStore::build([genesis_out], cal(), dir.path(), &BuildOptions::default()).unwrap();

        let empty = DayBatch { day: DayIndex(1), ..Default::default() };
        store.append_day(&empty).unwrap();
        assert_eq!(store.day_count(), 2);
        assert!(store.has_partition(Family::Birth, DayIndex(1)));
        assert!(store.has_partition(Family::Death, DayIndex(1)));

        let gap = DayBatch { day: DayIndex(5), ..Default::default() };
        assert!(matches!(store.append_day(&gap), Err(StoreError::Sequencing { expected: 2, got: 5 })));

        for d in 2..100 {
            store.append_day(&DayBatch { day: DayIndex(d), ..Default::default() }).unwrap();
        }
        let spend = OutputRecord { spent: Some(at(100, 10)), ..genesis_out };
        store.append_day(&DayBatch { day: DayIndex(100), births: vec![], spends: vec![spend] }).unwrap();
        let dead = store.death_cohort(DayIndex(100)).unwrap();
        assert_eq!(dead, vec![spend]);
        assert_eq!(dead[0].lifespan_secs(), Some(100 * 86_400));
        assert_eq!(store.birth_cohort(DayIndex(0)).unwrap(), vec![spend]);

        let respend = OutputRecord { spent: Some(at(101, 0)), ..genesis_out };
        let again = DayBatch { day: DayIndex(101), births: vec![], spends: vec![respend] };
        assert!(matches!(store.append_day(&again), Err(StoreError::UnknownOutpoint { .. })));
        assert_eq!(store.day_count(), 101);
        let reopened = PartitionStore::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest(), store.manifest());
        assert_eq!(reopened.manifest().spent_records, 1);
    }

    #[test]
    fn concurrent_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PartitionStore::build([rec(1, at(0, 0), None)], cal(), dir.path(), &BuildOptions::default()).unwrap();
        let _held = WriterLock::acquire(dir.path()).unwrap();
        assert!(matches!(store.append_day(&DayBatch { day: DayIndex(1), ..Default::default() }), Err(StoreError::Locked(_))));
    }

    #[test]
    fn day_batch_splits_births_and_spends() {
        let c = cal();
        let a = rec(1, at(0, 0), Some(at(3, 0)));
        let b = rec(2, at(3, 5), Some(at(3, 9)));
        let later = rec(3, at(3, 5), Some(at(8, 0)));
        let batch = DayBatch::from_records(&c, DayIndex(3), [a, b, later].iter()).unwrap();
        assert_eq!(batch.spends, vec![a]);
        assert_eq!(batch.births, vec![b, OutputRecord { spent: None, ..later }]);
    }
}
