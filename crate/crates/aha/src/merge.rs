//! K-way newest-wins merging of sorted entry streams.
//!
//! Every read and every compaction in the engine funnels through
//! [`MergeIter`]: given any number of streams that each yield entries in
//! ascending key order, it emits one entry per distinct key — the one with
//! the highest sequence number — in ascending key order. Tombstones are
//! passed through; callers that materialize user-visible results or merge
//! into leaf pages strip them afterwards.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::entry::{Entry, Key};
use crate::error::Result;

pub type EntryStream = Box<dyn Iterator<Item = Result<Entry>> + Send>;

pub fn vec_stream(entries: Vec<Entry>) -> EntryStream {
    Box::new(entries.into_iter().map(Ok))
}

struct HeapItem {
    entry: Entry,
    src: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // BinaryHeap pops the maximum, so "greater" must mean "merges first":
    // smaller key, then higher sequence number, then lower source index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .entry
            .key
            .cmp(&self.entry.key)
            .then(self.entry.seq.cmp(&other.entry.seq))
            .then(other.src.cmp(&self.src))
    }
}

pub struct MergeIter {
    heap: BinaryHeap<HeapItem>,
    streams: Vec<EntryStream>,
    last_key: Option<Key>,
    /// Source whose replacement has not been pulled yet. Deferring the pull
    /// until the next call means an entry already handed out is never lost
    /// to a later stream error.
    pending: Option<usize>,
    failed: bool,
}

impl MergeIter {
    pub fn new(streams: Vec<EntryStream>) -> Result<MergeIter> {
        let mut it = MergeIter {
            heap: BinaryHeap::with_capacity(streams.len()),
            streams,
            last_key: None,
            pending: None,
            failed: false,
        };
        for src in 0..it.streams.len() {
            it.pull(src)?;
        }
        Ok(it)
    }

    fn pull(&mut self, src: usize) -> Result<()> {
        if let Some(next) = self.streams[src].next() {
            self.heap.push(HeapItem { entry: next?, src });
        }
        Ok(())
    }

    fn next_inner(&mut self) -> Result<Option<Entry>> {
        if self.failed {
            return Ok(None);
        }
        loop {
            if let Some(src) = self.pending.take() {
                self.pull(src)?;
            }
            let Some(top) = self.heap.pop() else {
                return Ok(None);
            };
            self.pending = Some(top.src);
            if self.last_key.as_deref() == Some(top.entry.key.as_slice()) {
                continue; // an older version of a key already emitted
            }
            self.last_key = Some(top.entry.key.clone());
            return Ok(Some(top.entry));
        }
    }
}

impl Iterator for MergeIter {
    type Item = Result<Entry>;

    fn next(&mut self) -> Option<Result<Entry>> {
        match self.next_inner() {
            Ok(v) => v.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Drops tombstones from a merged stream. Only valid on the *output* of a
/// newest-wins merge over every source that could hold the key, which is why
/// the engine applies it only when materializing query results or merging
/// into leaf pages.
pub fn strip_tombstones(
    iter: impl Iterator<Item = Result<Entry>>,
) -> impl Iterator<Item = Result<Entry>> {
    iter.filter(|r| match r {
        Ok(e) => !e.is_tombstone(),
        Err(_) => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn e(k: &str, seq: u64) -> Entry {
        Entry::put(k.as_bytes().to_vec(), seq, format!("v{seq}").into_bytes())
    }

    fn run_merge(runs: Vec<Vec<Entry>>) -> Vec<Entry> {
        let streams = runs.into_iter().map(vec_stream).collect();
        MergeIter::new(streams)
            .unwrap()
            .map(|r| r.unwrap())
            .collect()
    }

    fn oracle(runs: &[Vec<Entry>]) -> Vec<Entry> {
        let mut best: BTreeMap<Key, Entry> = BTreeMap::new();
        for run in runs {
            for entry in run {
                match best.get(&entry.key) {
                    Some(cur) if cur.seq >= entry.seq => {}
                    _ => {
                        best.insert(entry.key.clone(), entry.clone());
                    }
                }
            }
        }
        best.into_values().collect()
    }

    #[test]
    fn newest_version_wins_across_streams() {
        let runs = vec![
            vec![e("a", 1), e("c", 7), e("d", 2)],
            vec![e("a", 5), e("b", 3), e("c", 4)],
        ];
        let got = run_merge(runs.clone());
        assert_eq!(got, oracle(&runs));
        assert_eq!(got[0].seq, 5, "a@5 shadows a@1");
        assert_eq!(got[2].seq, 7, "c@7 shadows c@4");
    }

    #[test]
    fn tombstones_shadow_and_can_be_stripped() {
        let runs = vec![
            vec![e("a", 1), e("b", 2)],
            vec![Entry::tombstone(b"a".to_vec(), 9)],
        ];
        let merged = run_merge(runs);
        assert_eq!(merged.len(), 2);
        assert!(merged[0].is_tombstone());
        let visible: Vec<Entry> = strip_tombstones(merged.into_iter().map(Ok))
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(visible.len(), 1);
        assert_eq!(visible[0].key, b"b".to_vec());
    }

    #[test]
    fn handles_empty_and_single_streams() {
        assert!(run_merge(vec![]).is_empty());
        assert!(run_merge(vec![vec![], vec![]]).is_empty());
        let one = vec![e("x", 1), e("y", 2)];
        assert_eq!(run_merge(vec![one.clone(), vec![]]), one);
    }

    #[test]
    fn randomized_runs_match_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xA11CE);
        let mut seq = 0u64;
        for _ in 0..200 {
            let n_runs = rng.random_range(0..6);
            let mut runs = Vec::new();
            for _ in 0..n_runs {
                let n = rng.random_range(0..30);
                let mut keys: Vec<u32> =
                    (0..n).map(|_| rng.random_range(0..40u32)).collect();
                keys.sort_unstable();
                keys.dedup();
                let run: Vec<Entry> = keys
                    .into_iter()
                    .map(|k| {
                        seq += 1;
                        if rng.random_bool(0.2) {
                            Entry::tombstone(format!("k{k:04}").into_bytes(), seq)
                        } else {
                            Entry::put(
                                format!("k{k:04}").into_bytes(),
                                seq,
                                format!("v{seq}").into_bytes(),
                            )
                        }
                    })
                    .collect();
                runs.push(run);
            }
            assert_eq!(run_merge(runs.clone()), oracle(&runs));
        }
    }

    #[test]
    fn errors_propagate_and_fuse_the_iterator() {
        let bad: EntryStream = Box::new(
            vec![
                Ok(e("a", 1)),
                Err(crate::error::Error::InvalidArgument("boom".into())),
            ]
            .into_iter(),
        );
        let mut it = MergeIter::new(vec![bad, vec_stream(vec![e("b", 2)])]).unwrap();
        assert_eq!(
            it.next().unwrap().unwrap().key,
            b"a".to_vec(),
            "entries before the fault are still delivered"
        );
        assert!(it.next().unwrap().is_err());
        assert!(it.next().is_none(), "iterator fuses after an error");
    }
}
