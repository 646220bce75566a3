//! In-memory write buffer.
//!
//! The engine owns at most two of these at a time: one mutable table taking
//! new writes and one immutable table waiting to be flushed to a table file.
//! Each memtable is an ordered map from key to the newest entry for that key;
//! older versions of a key are overwritten in place since only the newest one
//! could ever win a merge.

use std::collections::BTreeMap;
use std::ops::Bound;

use crate::entry::{Entry, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Accepted,
    /// The write would push the table past its byte budget; the caller must
    /// rotate this table to immutable (flushing the previous immutable first
    /// if one is still pending) and retry.
    NeedsRotation,
}

#[derive(Debug)]
pub struct MemTable {
    map: BTreeMap<Key, Entry>,
    bytes: usize,
    byte_budget: usize,
}

impl MemTable {
    pub fn new(byte_budget: usize) -> MemTable {
        MemTable {
            map: BTreeMap::new(),
            bytes: 0,
            byte_budget,
        }
    }

    /// Attempts to insert `entry`. An entry whose encoded size alone exceeds
    /// the budget is still accepted into an empty table so oversized writes
    /// cannot live-lock the rotation loop.
    pub fn put(&mut self, entry: Entry) -> PutOutcome {
        let add = entry.encoded_len();
        let replaced = self.map.get(&entry.key).map(Entry::encoded_len);
        let projected = self.bytes + add - replaced.unwrap_or(0);
        if projected > self.byte_budget && !self.map.is_empty() {
            return PutOutcome::NeedsRotation;
        }
        debug_assert!(
            self.map
                .get(&entry.key)
                .map(|old| old.seq < entry.seq)
                .unwrap_or(true),
            "sequence numbers must be monotonic per key"
        );
        self.bytes = projected;
        self.map.insert(entry.key.clone(), entry);
        PutOutcome::Accepted
    }

    pub fn get(&self, key: &[u8]) -> Option<&Entry> {
        self.map.get(key)
    }

    /// Copies out all entries with keys in `[lo, hi)`, ascending.
    pub fn range_copy(&self, lo: &[u8], hi: &[u8]) -> Vec<Entry> {
        self.map
            .range::<[u8], _>((Bound::Included(lo), Bound::Excluded(hi)))
            .map(|(_, e)| e.clone())
            .collect()
    }

    pub fn has_key_in(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.map
            .range::<[u8], _>((Bound::Included(lo), Bound::Excluded(hi)))
            .next()
            .is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.map.values()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn max_seq(&self) -> Option<u64> {
        self.map.values().map(|e| e.seq).max()
    }
}
