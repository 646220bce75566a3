//! Sorted leaf-page storage for read-optimized ("adapted") leaves.
//!
//! An adapted leaf keeps its entries in *segments*: short sorted runs of
//! encoded entries, each stored across one or more fixed-size pages in the
//! page store. Segments are the rewrite unit — a point write decodes,
//! edits and re-encodes one segment (usually a single page) instead of the
//! whole leaf. Entries keep their sequence numbers so leaf pages merge
//! correctly against fresher sources above them; tombstones are never
//! stored here (they die on the merge that feeds a leaf page).
//!
//! A `LeafStore` is shared between tree snapshots via `Arc`; its interior
//! latch serializes direct writers, scans and maintenance rebuilds, and the
//! `retired` flag tells writers the leaf was replaced by a split and the
//! write must be retried against the current tree. Pages of a replaced
//! leaf are returned to the pager's free list only when the last snapshot
//! holding the leaf drops it, so readers of older snapshots never see a
//! page recycled under them.

use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use std::sync::Arc;

use crate::entry::{Entry, Key};
use crate::error::{Error, Result};
use crate::merge::{strip_tombstones, vec_stream, EntryStream, MergeIter};
use crate::pager::PageId;
use crate::store::Store;

/// One sorted run of encoded entries occupying `pages` in order; only the
/// final page is partially filled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seg {
    pub first_key: Key,
    pub entry_count: u32,
    pub byte_len: u32,
    pub pages: Vec<PageId>,
}

#[derive(Debug, Default)]
pub struct LeafSegs {
    /// Sorted by `first_key`, key ranges disjoint.
    pub segs: Vec<Seg>,
    /// Sum of all segments' `byte_len`.
    pub total_bytes: u64,
}

#[derive(Debug)]
pub struct LeafStore {
    inner: RwLock<LeafSegs>,
    retired: AtomicBool,
    /// The pager's free list; this leaf's pages are pushed there on drop.
    sink: Arc<Mutex<Vec<PageId>>>,
}

/// Result of a maintenance merge into an adapted leaf.
pub enum MergeOutcome {
    /// Content was rebuilt in place; the new total byte size.
    Rebuilt(u64),
    /// The merged content exceeds the leaf cap. The store has been retired
    /// (under its own latch, so no write can slip in) and the merged,
    /// tombstone-free entries are handed back for redistribution.
    Overflow(Vec<Entry>),
}

impl LeafStore {
    pub fn new_empty(store: &Store) -> LeafStore {
        LeafStore::from_segs(store, Vec::new())
    }

    pub fn from_segs(store: &Store, segs: Vec<Seg>) -> LeafStore {
        let total_bytes = segs.iter().map(|s| s.byte_len as u64).sum();
        LeafStore {
            inner: RwLock::new(LeafSegs { segs, total_bytes }),
            retired: AtomicBool::new(false),
            sink: store.pager.free_sink(),
        }
    }

    /// Bulk-builds a store from ascending, tombstone-free entries.
    pub fn build(store: &Store, entries: &[Entry]) -> Result<LeafStore> {
        let segs = build_segs(store, entries)?;
        Ok(LeafStore::from_segs(store, segs))
    }

    pub fn is_retired(&self) -> bool {
        self.retired.load(Ordering::Acquire)
    }

    pub fn total_bytes(&self) -> u64 {
        self.inner.read().total_bytes
    }

    pub fn read(&self) -> RwLockReadGuard<'_, LeafSegs> {
        self.inner.read()
    }

    pub fn segs_snapshot(&self) -> Vec<Seg> {
        self.inner.read().segs.clone()
    }

    /// All entries of keys in `[lo, hi)` plus the number of pages fetched.
    pub fn scan(&self, store: &Store, lo: &[u8], hi: &[u8]) -> Result<(Vec<Entry>, u64)> {
        let guard = self.inner.read();
        let mut out = Vec::new();
        let mut pages = 0u64;
        for (i, seg) in guard.segs.iter().enumerate() {
            if seg.first_key.as_slice() >= hi {
                break;
            }
            let next_first = guard.segs.get(i + 1).map(|s| s.first_key.as_slice());
            if let Some(nf) = next_first {
                if nf <= lo {
                    continue; // the whole segment sits below the range
                }
            }
            let entries = read_seg(store, seg)?;
            pages += seg.pages.len() as u64;
            for e in entries {
                if e.key.as_slice() >= hi {
                    break;
                }
                if e.key.as_slice() >= lo {
                    out.push(e);
                }
            }
        }
        Ok((out, pages))
    }

    /// Every entry in the leaf, ascending.
    pub fn all_entries(&self, store: &Store) -> Result<Vec<Entry>> {
        let guard = self.inner.read();
        read_all_locked(store, &guard)
    }

    /// Inserts or replaces one entry, rewriting only its segment; an
    /// existing strictly newer version of the key wins over `entry`.
    /// Returns `None` without writing when the leaf is retired (the caller
    /// must re-route against the current tree); otherwise the leaf's new
    /// total byte size, from which the caller schedules a split.
    pub fn insert_if_live(&self, store: &Store, entry: Entry) -> Result<Option<u64>> {
        debug_assert!(!entry.is_tombstone());
        let mut guard = self.inner.write();
        if self.is_retired() {
            return Ok(None);
        }
        if guard.segs.is_empty() {
            let seg = write_seg(store, std::slice::from_ref(&entry))?;
            guard.total_bytes = seg.byte_len as u64;
            guard.segs.push(seg);
            return Ok(Some(guard.total_bytes));
        }
        let at = locate_seg(&guard.segs, &entry.key);
        let old = guard.segs[at].clone();
        let mut entries = read_seg(store, &old)?;
        match entries.binary_search_by(|e| e.key.as_slice().cmp(entry.key.as_slice())) {
            Ok(i) => {
                if entries[i].seq >= entry.seq {
                    return Ok(Some(guard.total_bytes)); // concurrent newer write stays
                }
                entries[i] = entry;
            }
            Err(i) => entries.insert(i, entry),
        }
        let page_size = store.pager.page_size();
        let total_len: usize = entries.iter().map(Entry::encoded_len).sum();
        let replacements = if total_len > page_size && entries.len() >= 2 {
            let mid = entries.len() / 2;
            vec![
                write_seg_reusing(store, &entries[..mid], &old.pages)?,
                write_seg(store, &entries[mid..])?,
            ]
        } else {
            vec![write_seg_reusing(store, &entries, &old.pages)?]
        };
        // Free pages the rewrite no longer uses (safe: the latch excludes
        // every reader of this store, and no other store shares pages).
        let kept: Vec<PageId> = replacements.iter().flat_map(|s| s.pages.clone()).collect();
        for p in &old.pages {
            if !kept.contains(p) {
                store.pager.free(*p);
            }
        }
        let added: u64 = replacements.iter().map(|s| s.byte_len as u64).sum();
        guard.total_bytes = guard.total_bytes - old.byte_len as u64 + added;
        guard.segs.splice(at..=at, replacements);
        Ok(Some(guard.total_bytes))
    }

    /// Physically removes a key if present. Valid only when nothing above
    /// or below this leaf can hold another version of the key (the
    /// direct-write contract). `None` when retired.
    pub fn remove_if_live(&self, store: &Store, key: &[u8]) -> Result<Option<bool>> {
        let mut guard = self.inner.write();
        if self.is_retired() {
            return Ok(None);
        }
        if guard.segs.is_empty() {
            return Ok(Some(false));
        }
        let at = locate_seg(&guard.segs, key);
        let old = guard.segs[at].clone();
        let mut entries = read_seg(store, &old)?;
        let Ok(i) = entries.binary_search_by(|e| e.key.as_slice().cmp(key)) else {
            return Ok(Some(false));
        };
        entries.remove(i);
        if entries.is_empty() {
            for p in &old.pages {
                store.pager.free(*p);
            }
            guard.total_bytes -= old.byte_len as u64;
            guard.segs.remove(at);
            return Ok(Some(true));
        }
        let seg = write_seg_reusing(store, &entries, &old.pages)?;
        for p in &old.pages {
            if !seg.pages.contains(p) {
                store.pager.free(*p);
            }
        }
        guard.total_bytes = guard.total_bytes - old.byte_len as u64 + seg.byte_len as u64;
        guard.segs[at] = seg;
        Ok(Some(true))
    }

    /// Maintenance entry point: merges `extra` (fresher-or-equal sources,
    /// resolved by sequence number) into this leaf's content, dropping
    /// tombstones. Rebuilds in place when the result fits `leaf_cap`;
    /// otherwise retires the leaf and returns the merged entries so the
    /// caller can split it. Entirely under the write latch, so direct
    /// writes serialize cleanly before or after.
    pub fn merge_streams(
        &self,
        store: &Store,
        extra: Vec<EntryStream>,
        leaf_cap: u64,
    ) -> Result<MergeOutcome> {
        let mut guard = self.inner.write();
        let existing = read_all_locked(store, &guard)?;
        let mut streams = extra;
        streams.push(vec_stream(existing));
        let merged: Vec<Entry> =
            strip_tombstones(MergeIter::new(streams)?).collect::<Result<_>>()?;
        let total: u64 = merged.iter().map(|e| e.encoded_len() as u64).sum();
        if total > leaf_cap && merged.len() >= 2 {
            self.retired.store(true, Ordering::Release);
            return Ok(MergeOutcome::Overflow(merged));
        }
        for seg in &guard.segs {
            for p in &seg.pages {
                store.pager.free(*p);
            }
        }
        guard.segs = build_segs(store, &merged)?;
        guard.total_bytes = total;
        Ok(MergeOutcome::Rebuilt(total))
    }
}

impl Drop for LeafStore {
    fn drop(&mut self) {
        let guard = self.inner.get_mut();
        let mut sink = self.sink.lock();
        for seg in &guard.segs {
            sink.extend_from_slice(&seg.pages);
        }
    }
}

fn read_all_locked(store: &Store, guard: &LeafSegs) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for seg in &guard.segs {
        out.extend(read_seg(store, seg)?);
    }
    Ok(out)
}

/// Index of the segment that covers `key`.
fn locate_seg(segs: &[Seg], key: &[u8]) -> usize {
    let p = segs.partition_point(|s| s.first_key.as_slice() <= key);
    p.saturating_sub(1)
}

fn read_seg(store: &Store, seg: &Seg) -> Result<Vec<Entry>> {
    let page_size = store.pager.page_size();
    let mut blob = Vec::with_capacity(seg.byte_len as usize);
    let mut remaining = seg.byte_len as usize;
    for &p in &seg.pages {
        let take = remaining.min(page_size);
        let guard = store.pager.fetch(p)?;
        blob.extend_from_slice(&guard.read()[..take]);
        remaining -= take;
    }
    let mut out = Vec::with_capacity(seg.entry_count as usize);
    let mut at = 0usize;
    for _ in 0..seg.entry_count {
        let (e, used) = Entry::decode_from(&blob[at..]).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "undecodable leaf segment starting at {:?} (page {:?})",
                seg.first_key, seg.pages
            ))
        })?;
        at += used;
        out.push(e);
    }
    Ok(out)
}

fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut blob = Vec::new();
    for e in entries {
        debug_assert!(!e.is_tombstone(), "leaf pages never store tombstones");
        e.encode_into(&mut blob);
    }
    blob
}

fn write_seg(store: &Store, entries: &[Entry]) -> Result<Seg> {
    write_seg_reusing(store, entries, &[])
}

/// Writes entries as one segment, reusing `reuse` page ids as far as they
/// go and allocating the rest.
fn write_seg_reusing(store: &Store, entries: &[Entry], reuse: &[PageId]) -> Result<Seg> {
    debug_assert!(!entries.is_empty());
    debug_assert!(entries.windows(2).all(|w| w[0].key < w[1].key));
    let blob = encode_entries(entries);
    let page_size = store.pager.page_size();
    let n_pages = blob.len().div_ceil(page_size);
    let mut pages = Vec::with_capacity(n_pages);
    for i in 0..n_pages {
        let id = reuse.get(i).copied().unwrap_or_else(|| store.pager.alloc());
        let chunk = &blob[i * page_size..(i * page_size + page_size).min(blob.len())];
        let guard = store.pager.fetch_new(id)?;
        guard.write()[..chunk.len()].copy_from_slice(chunk);
        pages.push(id);
    }
    Ok(Seg {
        first_key: entries[0].key.clone(),
        entry_count: entries.len() as u32,
        byte_len: blob.len() as u32,
        pages,
    })
}

/// Packs ascending entries into segments of at most one page each (oversized
/// single entries get a multi-page segment of their own).
pub fn build_segs(store: &Store, entries: &[Entry]) -> Result<Vec<Seg>> {
    let page_size = store.pager.page_size();
    let mut segs = Vec::new();
    let mut start = 0usize;
    let mut bytes = 0usize;
    for (i, e) in entries.iter().enumerate() {
        let len = e.encoded_len();
        if bytes > 0 && bytes + len > page_size {
            segs.push(write_seg(store, &entries[start..i])?);
            start = i;
            bytes = 0;
        }
        bytes += len;
    }
    if start < entries.len() {
        segs.push(write_seg(store, &entries[start..])?);
    }
    Ok(segs)
}

/// Splits tombstone-free ascending entries into groups of roughly
/// `fill_target` encoded bytes each; used to cut new sibling leaves.
pub fn cut_into_leaves(entries: Vec<Entry>, fill_target: usize) -> Vec<Vec<Entry>> {
    let mut groups = Vec::new();
    let mut current = Vec::new();
    let mut bytes = 0usize;
    for e in entries {
        let len = e.encoded_len();
        if bytes > 0 && bytes + len > fill_target {
            groups.push(std::mem::take(&mut current));
            bytes = 0;
        }
        bytes += len;
        current.push(e);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use std::collections::BTreeMap;
    use std::path::Path;

    fn store(dir: &Path) -> Store {
        let mut c = EngineConfig::new(dir);
        c.page_size = 256;
        c.pool_pages = 16;
        Store::open(c).unwrap()
    }

    fn e(i: u32, seq: u64) -> Entry {
        Entry::put(format!("k{i:05}").into_bytes(), seq, vec![b'v'; 20])
    }

    #[test]
    fn build_and_scan_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let entries: Vec<Entry> = (0..100).map(|i| e(i, i as u64 + 1)).collect();
        let leaf = LeafStore::build(&s, &entries).unwrap();
        let (got, pages) = leaf.scan(&s, b"", b"z").unwrap();
        assert_eq!(got, entries);
        assert!(pages > 1, "content spans several pages");
        // Sub-range scan touches fewer pages than a full scan.
        let (sub, sub_pages) = leaf.scan(&s, b"k00040", b"k00045").unwrap();
        assert_eq!(sub, entries[40..45].to_vec());
        assert!(sub_pages < pages);
        // Segments fill pages tightly.
        for seg in leaf.segs_snapshot() {
            assert!(seg.byte_len as usize <= 256);
        }
    }

    #[test]
    fn point_insert_updates_one_segment() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let entries: Vec<Entry> = (0..50).map(|i| e(i * 2, i as u64 + 1)).collect();
        let leaf = LeafStore::build(&s, &entries).unwrap();
        let before = leaf.segs_snapshot();
        leaf.insert_if_live(&s, e(21, 1000)).unwrap().unwrap();
        leaf.insert_if_live(&s, e(20, 1001)).unwrap().unwrap();
        let after = leaf.segs_snapshot();
        let rewritten = after.iter().filter(|s| !before.contains(s)).count();
        assert!(
            rewritten <= 3,
            "a point write must not rewrite the whole leaf ({rewritten} of {} segs new)",
            after.len()
        );
        assert!(after.len() > 4);
        let (got, _) = leaf.scan(&s, b"k00020", b"k00023").unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].seq, 1001);
        assert_eq!(got[1].seq, 1000);
    }

    #[test]
    fn stale_insert_loses_to_newer_resident_entry() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let leaf = LeafStore::build(&s, &[e(5, 100)]).unwrap();
        leaf.insert_if_live(&s, e(5, 90)).unwrap().unwrap();
        let (got, _) = leaf.scan(&s, b"", b"z").unwrap();
        assert_eq!(got[0].seq, 100, "older sequence number must not clobber");
    }

    #[test]
    fn random_inserts_and_removes_match_oracle() {
        use rand::prelude::*;
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let leaf = LeafStore::new_empty(&s);
        let mut oracle: BTreeMap<Key, Entry> = BTreeMap::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for seq in 1..600u64 {
            let i = rng.random_range(0..80u32);
            if rng.random_bool(0.25) {
                let removed = leaf
                    .remove_if_live(&s, format!("k{i:05}").as_bytes())
                    .unwrap()
                    .unwrap();
                assert_eq!(removed, oracle.remove(&format!("k{i:05}").into_bytes()).is_some());
            } else {
                let entry = e(i, seq);
                oracle.insert(entry.key.clone(), entry.clone());
                leaf.insert_if_live(&s, entry).unwrap().unwrap();
            }
        }
        let want: Vec<Entry> = oracle.values().cloned().collect();
        let (got, _) = leaf.scan(&s, b"", b"z").unwrap();
        assert_eq!(got, want);
        let want_bytes: u64 = want.iter().map(|e| e.encoded_len() as u64).sum();
        assert_eq!(leaf.total_bytes(), want_bytes);
    }

    #[test]
    fn oversized_entries_span_pages() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let jumbo = Entry::put(b"big".to_vec(), 1, vec![0xEE; 1000]); // ~4 pages of 256
        let small = Entry::put(b"aaa".to_vec(), 2, b"v".to_vec());
        let leaf = LeafStore::build(&s, &[small.clone(), jumbo.clone()]).unwrap();
        let snapshot = leaf.segs_snapshot();
        assert!(snapshot.iter().any(|seg| seg.pages.len() >= 4));
        let (got, _) = leaf.scan(&s, b"a", b"z").unwrap();
        assert_eq!(got, vec![small, jumbo]);
    }

    #[test]
    fn merge_streams_rebuilds_in_place_and_drops_tombstones() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let base: Vec<Entry> = (0..20).map(|i| e(i, i as u64 + 1)).collect();
        let leaf = LeafStore::build(&s, &base).unwrap();
        let extra = vec![
            Entry::tombstone(format!("k{:05}", 3).into_bytes(), 100),
            e(5, 101),
            Entry::put(b"k00099".to_vec(), 102, b"new".to_vec()),
        ];
        match leaf.merge_streams(&s, vec![vec_stream(extra)], 1 << 20).unwrap() {
            MergeOutcome::Rebuilt(total) => assert_eq!(total, leaf.total_bytes()),
            MergeOutcome::Overflow(_) => panic!("fits comfortably"),
        }
        let (got, _) = leaf.scan(&s, b"", b"z").unwrap();
        assert_eq!(got.len(), 20, "one removed, one added");
        assert!(got.iter().all(|x| x.key != format!("k{:05}", 3).into_bytes()));
        assert_eq!(got.iter().find(|x| x.key == format!("k{:05}", 5).into_bytes()).unwrap().seq, 101);
        assert!(!leaf.is_retired());
    }

    #[test]
    fn merge_streams_overflow_retires_and_returns_entries() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let base: Vec<Entry> = (0..10).map(|i| e(i, i as u64 + 1)).collect();
        let leaf = LeafStore::build(&s, &base).unwrap();
        let extra: Vec<Entry> = (10..40).map(|i| e(i, 100 + i as u64)).collect();
        match leaf.merge_streams(&s, vec![vec_stream(extra)], 200).unwrap() {
            MergeOutcome::Overflow(entries) => {
                assert_eq!(entries.len(), 40);
                assert!(leaf.is_retired());
                // A write arriving after retirement is refused.
                assert!(leaf.insert_if_live(&s, e(0, 9999)).unwrap().is_none());
                assert!(leaf.remove_if_live(&s, b"k00001").unwrap().is_none());
            }
            MergeOutcome::Rebuilt(_) => panic!("must overflow a 200-byte cap"),
        }
    }

    #[test]
    fn dropping_a_leaf_returns_its_pages_to_the_free_list() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let entries: Vec<Entry> = (0..40).map(|i| e(i, i as u64 + 1)).collect();
        let leaf = LeafStore::build(&s, &entries).unwrap();
        let hwm = s.pager.next_page_id();
        assert!(hwm >= 4);
        drop(leaf);
        // All pages recycled: a fresh build of the same size allocates none.
        let _leaf2 = LeafStore::build(&s, &entries).unwrap();
        assert_eq!(s.pager.next_page_id(), hwm);
    }

    #[test]
    fn cut_into_leaves_respects_fill_target() {
        let entries: Vec<Entry> = (0..100).map(|i| e(i, i as u64 + 1)).collect();
        let one = entries[0].encoded_len();
        let groups = cut_into_leaves(entries.clone(), one * 10);
        assert_eq!(groups.len(), 10);
        let flat: Vec<Entry> = groups.into_iter().flatten().collect();
        assert_eq!(flat, entries);
        assert_eq!(cut_into_leaves(Vec::new(), 100).len(), 0);
    }
}
