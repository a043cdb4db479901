//! Bounded-memory sort: runs of `run_len` items are sorted in memory and
//! spilled to temporary files, then k-way merged.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::PathBuf;

/// Binary encoding for items that may be spilled to disk.
pub trait Spill: Sized {
    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()>;
    /// `Ok(None)` on clean end of stream.
    fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Self>>;
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

/// Reads a length-prefixed string; `Ok(None)` if the stream ends before the prefix.
pub(crate) fn read_str<R: Read>(r: &mut R) -> io::Result<Option<String>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub struct ExternalSorter<T> {
    run_len: usize,
    spill_dir: Option<PathBuf>,
    buffer: Vec<T>,
    runs: Vec<File>,
}

impl<T: Spill + Ord> ExternalSorter<T> {
    pub fn new(run_len: usize, spill_dir: Option<PathBuf>) -> Self {
        ExternalSorter { run_len: run_len.max(1), spill_dir, buffer: Vec::new(), runs: Vec::new() }
    }

    pub fn push(&mut self, item: T) -> io::Result<()> {
        self.buffer.push(item);
        if self.buffer.len() >= self.run_len {
            self.spill()?;
        }
        Ok(())
    }

    pub fn spilled_runs(&self) -> usize {
        self.runs.len()
    }

    fn spill(&mut self) -> io::Result<()> {
        self.buffer.sort_unstable();
        let mut file = match &self.spill_dir {
            Some(dir) => tempfile::tempfile_in(dir)?,
            None => tempfile::tempfile()?,
        };
        {
            let mut w = BufWriter::new(&mut file);
            for item in self.buffer.drain(..) {
                item.write_to(&mut w)?;
            }
            w.flush()?;
        }
        file.seek(SeekFrom::Start(0))?;
        self.runs.push(file);
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<Sorted<T>> {
        if self.runs.is_empty() {
            self.buffer.sort_unstable();
            return Ok(Sorted::Memory(self.buffer.into_iter()));
        }
        if !self.buffer.is_empty() {
            self.spill()?;
        }
        let mut readers: Vec<BufReader<File>> =
            self.runs.into_iter().map(|f| BufReader::with_capacity(1 << 16, f)).collect();
        let mut heap = BinaryHeap::with_capacity(readers.len());
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some(item) = T::read_from(r)? {
                heap.push(Reverse(Keyed(item, i)));
            }
        }
        Ok(Sorted::Merge { readers, heap })
    }
}

#[doc(hidden)]
pub struct Keyed<T>(T, usize);

impl<T: Ord> PartialEq for Keyed<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl<T: Ord> Eq for Keyed<T> {}
impl<T: Ord> PartialOrd for Keyed<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Ord> Ord for Keyed<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

pub enum Sorted<T> {
    Memory(std::vec::IntoIter<T>),
    Merge { readers: Vec<BufReader<File>>, heap: BinaryHeap<Reverse<Keyed<T>>> },
}

impl<T: Spill + Ord> Iterator for Sorted<T> {
    type Item = io::Result<T>;

    fn next(&mut self) -> Option<io::Result<T>> {
        match self {
            Sorted::Memory(it) => it.next().map(Ok),
            Sorted::Merge { readers, heap } => {
                let Reverse(Keyed(item, run)) = heap.pop()?;
                match T::read_from(&mut readers[run]) {
                    Ok(Some(next)) => heap.push(Reverse(Keyed(next, run))),
                    Ok(None) => {}
                    Err(e) => return Some(Err(e)),
                }
                Some(Ok(item))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    impl Spill for u64 {
        fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
            w.write_all(&self.to_le_bytes())
        }
        fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Self>> {
            let mut b = [0u8; 8];
            match r.read_exact(&mut b) {
                Ok(()) => Ok(Some(u64::from_le_bytes(b))),
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
                Err(e) => Err(e),
            }
        }
    }

    #[test]
    fn spilled_merge_matches_std_sort() {
        let input: Vec<u64> = (0..10_000u64).map(|i| i.wrapping_mul(0x9E37_79B9_7F4A_7C15) % 997).collect();
        let mut sorter = ExternalSorter::new(333, None);
        for &x in &input {
            sorter.push(x).unwrap();
        }
        assert!(sorter.spilled_runs() > 1);
        let out: Vec<u64> = sorter.finish().unwrap().map(Result::unwrap).collect();
        let mut expected = input;
        expected.sort();
        assert_eq!(out, expected);
    }

    #[test]
    fn small_input_stays_in_memory() {
        let mut sorter = ExternalSorter::new(100, None);
        for x in [3u64, 1, 2] {
            sorter.push(x).unwrap();
        }
        assert_eq!(sorter.spilled_runs(), 0);
        let out: Vec<u64> = sorter.finish().unwrap().map(Result::unwrap).collect();
        assert_eq!(out, vec![1, 2, 3]);
    }
}
