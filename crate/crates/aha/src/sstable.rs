//! Immutable sorted table files (`sst_<id>.aha`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header:  "AHAT" magic, u16 format version
//! body:    repeated [u32 key_len][key][u64 seq][u8 kind][u32 value_len][value]
//! footer:  [u64 entry_count][u32 min_key_len][min_key]
//!          [u32 max_key_len][max_key][u32 crc32-of-body]
//! ```
//!
//! Entries are strictly sorted by key with no duplicate keys inside one file.
//! Files are immutable once written; readers build a sparse in-memory index on
//! first access (verifying the body checksum at the same time) and then serve
//! range scans with positioned reads. A table handle marked obsolete removes
//! its file from disk once the last reference drops, which is how superseded
//! files outlive in-flight readers without any extra bookkeeping.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use crate::entry::{Entry, Key, MAX_KEY_LEN};
use crate::error::{Error, Result};
use crate::stats::{IoCounters, WriteClass};

pub const MAGIC: &[u8; 4] = b"AHAT";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 6;
/// One sparse-index anchor is kept per this many body bytes.
const INDEX_GRANULARITY: usize = 4096;
/// Positioned reads pull this much per call (grown for oversized records).
const READ_CHUNK: usize = 64 * 1024;

pub type TableId = u64;
pub type TableRef = Arc<TableFile>;

pub fn table_file_name(id: TableId) -> String {
    format!("sst_{id}.aha")
}

/// An open, immutable table file plus its footer metadata.
#[derive(Debug)]
pub struct TableFile {
    pub id: TableId,
    pub path: PathBuf,
    pub min_key: Key,
    pub max_key: Key,
    pub entry_count: u64,
    pub byte_size: u64,
    body_len: u64,
    body_crc: u32,
    file: OnceLock<File>,
    index: OnceLock<SparseIndex>,
    obsolete: AtomicBool,
    io: Arc<IoCounters>,
}

#[derive(Debug)]
struct SparseIndex {
    /// `(absolute file offset of a record start, key at that record)`,
    /// ascending; always starts at the first record.
    anchors: Vec<(u64, Key)>,
}

impl TableFile {
    /// Opens an existing table by recovering its footer. No body bytes are
    /// read unless the footer location is ambiguous, in which case the body
    /// checksum disambiguates.
    pub fn open(id: TableId, path: PathBuf, io: Arc<IoCounters>) -> Result<TableRef> {
        let mut file = File::open(&path).map_err(|e| Error::io(e, &path))?;
        let byte_size = file
            .metadata()
            .map_err(|e| Error::io(e, &path))?
            .len();
        let corrupt = |detail: &str| Error::CorruptTable {
            path: path.clone(),
            detail: detail.to_string(),
        };
        if byte_size < HEADER_LEN + 20 {
            return Err(corrupt("file shorter than header plus footer"));
        }
        let mut header = [0u8; 6];
        file.read_exact(&mut header).map_err(|e| Error::io(e, &path))?;
        if &header[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if u16::from_le_bytes([header[4], header[5]]) != FORMAT_VERSION {
            return Err(corrupt("unsupported format version"));
        }

        let tail_len = (byte_size - HEADER_LEN).min((20 + 2 * MAX_KEY_LEN) as u64);
        let tail_at = byte_size - tail_len;
        let mut tail = vec![0u8; tail_len as usize];
        file.seek(SeekFrom::Start(tail_at))
            .map_err(|e| Error::io(e, &path))?;
        file.read_exact(&mut tail).map_err(|e| Error::io(e, &path))?;

        let mut candidates = footer_candidates(&tail, tail_at, byte_size);
        let footer = match candidates.len() {
            0 => return Err(corrupt("no structurally valid footer")),
            1 => candidates.pop().unwrap(),
            _ => {
                // Body bytes can coincidentally look like a footer; the body
                // checksum picks the real one.
                let mut winner = None;
                for cand in candidates {
                    let mut body = vec![0u8; (cand.body_end - HEADER_LEN) as usize];
                    file.seek(SeekFrom::Start(HEADER_LEN))
                        .map_err(|e| Error::io(e, &path))?;
                    file.read_exact(&mut body).map_err(|e| Error::io(e, &path))?;
                    if crc32fast::hash(&body) == cand.crc {
                        winner = Some(cand);
                        break;
                    }
                }
                winner.ok_or_else(|| corrupt("no footer candidate matches body checksum"))?
            }
        };

        Ok(Arc::new(TableFile {
            id,
            path,
            min_key: footer.min_key,
            max_key: footer.max_key,
            entry_count: footer.entry_count,
            byte_size,
            body_len: footer.body_end - HEADER_LEN,
            body_crc: footer.crc,
            file: OnceLock::new(),
            index: OnceLock::new(),
            obsolete: AtomicBool::new(false),
            io,
        }))
    }

    /// Marks the file for deletion once the final handle drops. Readers that
    /// already hold this `Arc` keep working against the open file.
    pub fn mark_obsolete(&self) {
        self.obsolete.store(true, Ordering::Release);
    }

    pub fn is_obsolete(&self) -> bool {
        self.obsolete.load(Ordering::Acquire)
    }

    /// True when every key of this table falls inside `[lo, hi)`.
    pub fn within(&self, lo: Option<&[u8]>, hi: Option<&[u8]>) -> bool {
        if let Some(lo) = lo {
            if self.min_key.as_slice() < lo {
                return false;
            }
        }
        if let Some(hi) = hi {
            if self.max_key.as_slice() >= hi {
                return false;
            }
        }
        true
    }

    /// True when this table may hold keys in `[lo, hi)`.
    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        lo < hi && self.min_key.as_slice() < hi && self.max_key.as_slice() >= lo
    }

    fn shared_file(&self) -> Result<&File> {
        if self.file.get().is_none() {
            let f = File::open(&self.path).map_err(|e| Error::io(e, &self.path))?;
            let _ = self.file.set(f);
        }
        Ok(self.file.get().unwrap())
    }

    /// Builds (once) the sparse index, verifying the body checksum in the
    /// same pass. Every read path funnels through here first, so corruption
    /// surfaces on first access and is reported with the file name.
    fn ensure_index(&self) -> Result<&SparseIndex> {
        if let Some(idx) = self.index.get() {
            return Ok(idx);
        }
        let file = self.shared_file()?;
        let mut body = vec![0u8; self.body_len as usize];
        file.read_exact_at(&mut body, HEADER_LEN)
            .map_err(|e| Error::io(e, &self.path))?;
        self.io.add_data_read(body.len() as u64);
        if crc32fast::hash(&body) != self.body_crc {
            return Err(Error::CorruptTable {
                path: self.path.clone(),
                detail: "body checksum mismatch".into(),
            });
        }
        let mut anchors = Vec::new();
        let mut at = 0usize;
        let mut since_anchor = usize::MAX; // force an anchor at the first record
        let mut records = 0u64;
        while at < body.len() {
            let (entry, used) = Entry::decode_from(&body[at..]).ok_or_else(|| {
                Error::CorruptTable {
                    path: self.path.clone(),
                    detail: format!("undecodable record at body offset {at}"),
                }
            })?;
            if since_anchor >= INDEX_GRANULARITY {
                anchors.push((HEADER_LEN + at as u64, entry.key.clone()));
                since_anchor = 0;
            }
            since_anchor += used;
            at += used;
            records += 1;
        }
        if records != self.entry_count {
            return Err(Error::CorruptTable {
                path: self.path.clone(),
                detail: format!(
                    "footer claims {} entries, body holds {records}",
                    self.entry_count
                ),
            });
        }
        let _ = self.index.set(SparseIndex { anchors });
        Ok(self.index.get().unwrap())
    }

    /// Ascending iterator over entries with keys in `[lo, hi)`.
    pub fn range_iter(self: &Arc<Self>, lo: &[u8], hi: &[u8]) -> Result<TableIter> {
        let idx = self.ensure_index()?;
        // Last anchor at or before `lo`; anchors are ascending by key.
        let start = match idx.anchors.partition_point(|(_, k)| k.as_slice() <= lo) {
            0 => HEADER_LEN,
            p => idx.anchors[p - 1].0,
        };
        Ok(TableIter {
            table: Arc::clone(self),
            pos: start,
            body_end: HEADER_LEN + self.body_len,
            buf: Vec::new(),
            buf_at: 0,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            done: false,
        })
    }

    /// Reads the entire table in one pass. Used by compactions and audits.
    pub fn scan_all(self: &Arc<Self>) -> Result<TableIter> {
        let lo = self.min_key.clone();
        let mut hi = self.max_key.clone();
        hi.push(0);
        self.range_iter(&lo, &hi)
    }
}

impl Drop for TableFile {
    fn drop(&mut self) {
        if self.obsolete.load(Ordering::Acquire) {
            let _ = std::fs::remove_file(&self.path);
            self.io.note_table_deleted();
        }
    }
}

struct FooterCandidate {
    entry_count: u64,
    min_key: Key,
    max_key: Key,
    crc: u32,
    /// Absolute offset one past the last body byte.
    body_end: u64,
}

/// Scans the file tail backwards for structurally valid footers. `tail_at` is
/// the absolute offset of `tail[0]`.
fn footer_candidates(tail: &[u8], tail_at: u64, file_len: u64) -> Vec<FooterCandidate> {
    let mut out = Vec::new();
    let end = tail.len();
    let u32_at = |at: usize| -> Option<u32> {
        Some(u32::from_le_bytes(tail.get(at..at + 4)?.try_into().ok()?))
    };
    for max_len in 1..=MAX_KEY_LEN {
        let Some(max_len_at) = end.checked_sub(4 + max_len + 4) else {
            break;
        };
        if u32_at(max_len_at) != Some(max_len as u32) {
            continue;
        }
        let max_key = tail[max_len_at + 4..max_len_at + 4 + max_len].to_vec();
        for min_len in 1..=MAX_KEY_LEN {
            let Some(min_len_at) = max_len_at.checked_sub(min_len + 4) else {
                break;
            };
            if u32_at(min_len_at) != Some(min_len as u32) {
                continue;
            }
            let min_key = tail[min_len_at + 4..min_len_at + 4 + min_len].to_vec();
            if min_key > max_key {
                continue;
            }
            let Some(count_at) = min_len_at.checked_sub(8) else {
                break;
            };
            let entry_count =
                u64::from_le_bytes(tail[count_at..count_at + 8].try_into().unwrap());
            let body_end = tail_at + count_at as u64;
            if entry_count == 0 || body_end <= HEADER_LEN {
                continue;
            }
            // Each record costs at least 17 bytes plus one key byte.
            if entry_count.saturating_mul(18) > body_end - HEADER_LEN {
                continue;
            }
            let crc = u32_at(end - 4).unwrap();
            debug_assert_eq!(tail_at + end as u64, file_len);
            out.push(FooterCandidate {
                entry_count,
                min_key,
                max_key: max_key.clone(),
                crc,
                body_end,
            });
        }
    }
    out
}

/// Streaming ascending reader over one table's `[lo, hi)` range.
pub struct TableIter {
    table: TableRef,
    pos: u64,
    body_end: u64,
    buf: Vec<u8>,
    buf_at: usize,
    lo: Key,
    hi: Key,
    done: bool,
}

impl TableIter {
    fn refill(&mut self) -> Result<bool> {
        if self.pos >= self.body_end {
            return Ok(false);
        }
        let want = READ_CHUNK.min((self.body_end - self.pos) as usize);
        self.buf.drain(..self.buf_at);
        self.buf_at = 0;
        let old_len = self.buf.len();
        self.buf.resize(old_len + want, 0);
        let file = self.table.shared_file()?;
        file.read_exact_at(&mut self.buf[old_len..], self.pos)
            .map_err(|e| Error::io(e, &self.table.path))?;
        self.table.io.add_data_read(want as u64);
        self.pos += want as u64;
        Ok(true)
    }

    fn next_inner(&mut self) -> Result<Option<Entry>> {
        if self.done {
            return Ok(None);
        }
        loop {
            if let Some((entry, used)) = Entry::decode_from(&self.buf[self.buf_at..]) {
                self.buf_at += used;
                if entry.key.as_slice() < self.lo.as_slice() {
                    continue;
                }
                if entry.key.as_slice() >= self.hi.as_slice() {
                    self.done = true;
                    return Ok(None);
                }
                return Ok(Some(entry));
            }
            // Truncated record in the buffer: either read more or we are at
            // the clean end of the body.
            if !self.refill()? {
                if self.buf_at < self.buf.len() {
                    return Err(Error::CorruptTable {
                        path: self.table.path.clone(),
                        detail: "record truncated at end of body".into(),
                    });
                }
                self.done = true;
                return Ok(None);
            }
        }
    }
}

impl Iterator for TableIter {
    type Item = Result<Entry>;

    fn next(&mut self) -> Option<Result<Entry>> {
        self.next_inner().transpose()
    }
}

/// Writer for one table file. Entries must arrive in strictly ascending key
/// order; duplicate keys are rejected. `finish` seals the footer and returns
/// an open handle; a writer dropped without `finish` removes its partial file.
pub struct TableWriter {
    id: TableId,
    path: PathBuf,
    out: BufWriter<File>,
    hasher: crc32fast::Hasher,
    min_key: Option<Key>,
    last_key: Option<Key>,
    entry_count: u64,
    body_len: u64,
    scratch: Vec<u8>,
    io: Arc<IoCounters>,
    class: WriteClass,
    finished: bool,
}

impl TableWriter {
    pub fn create(
        id: TableId,
        path: PathBuf,
        io: Arc<IoCounters>,
        class: WriteClass,
    ) -> Result<TableWriter> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(e, &path))?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC).map_err(|e| Error::io(e, &path))?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())
            .map_err(|e| Error::io(e, &path))?;
        Ok(TableWriter {
            id,
            path,
            out,
            hasher: crc32fast::Hasher::new(),
            min_key: None,
            last_key: None,
            entry_count: 0,
            body_len: 0,
            scratch: Vec::new(),
            io,
            class,
            finished: false,
        })
    }

    pub fn add(&mut self, entry: &Entry) -> Result<()> {
        debug_assert!(entry.validate().is_ok());
        if let Some(last) = &self.last_key {
            if entry.key.as_slice() <= last.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "table writer requires strictly ascending keys ({:?} after {:?})",
                    entry.key, last
                )));
            }
        } else {
            self.min_key = Some(entry.key.clone());
        }
        self.scratch.clear();
        entry.encode_into(&mut self.scratch);
        self.hasher.update(&self.scratch);
        self.out
            .write_all(&self.scratch)
            .map_err(|e| Error::io(e, &self.path))?;
        self.body_len += self.scratch.len() as u64;
        self.last_key = Some(entry.key.clone());
        self.entry_count += 1;
        Ok(())
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    pub fn body_len(&self) -> u64 {
        self.body_len
    }

    pub fn finish(mut self) -> Result<TableRef> {
        let (min_key, max_key) = match (self.min_key.take(), self.last_key.take()) {
            (Some(mn), Some(mx)) => (mn, mx),
            _ => {
                return Err(Error::InvalidArgument(
                    "cannot finish an empty table file".into(),
                ))
            }
        };
        let crc = self.hasher.clone().finalize();
        let mut footer = Vec::with_capacity(20 + min_key.len() + max_key.len());
        footer.extend_from_slice(&self.entry_count.to_le_bytes());
        footer.extend_from_slice(&(min_key.len() as u32).to_le_bytes());
        footer.extend_from_slice(&min_key);
        footer.extend_from_slice(&(max_key.len() as u32).to_le_bytes());
        footer.extend_from_slice(&max_key);
        footer.extend_from_slice(&crc.to_le_bytes());
        self.out
            .write_all(&footer)
            .map_err(|e| Error::io(e, &self.path))?;
        self.out.flush().map_err(|e| Error::io(e, &self.path))?;
        let byte_size = HEADER_LEN + self.body_len + footer.len() as u64;
        self.io.add_table_write(self.class, byte_size);
        self.finished = true;
        Ok(Arc::new(TableFile {
            id: self.id,
            path: self.path.clone(),
            min_key,
            max_key,
            entry_count: self.entry_count,
            byte_size,
            body_len: self.body_len,
            body_crc: crc,
            file: OnceLock::new(),
            index: OnceLock::new(),
            obsolete: AtomicBool::new(false),
            io: Arc::clone(&self.io),
        }))
    }
}

impl Drop for TableWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

/// Collects every entry of `[lo, hi)` from a table into a vector.
pub fn read_range(table: &TableRef, lo: &[u8], hi: &[u8]) -> Result<Vec<Entry>> {
    table.range_iter(lo, hi)?.collect()
}

pub fn corrupt_table_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::CorruptTable {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}
