//! Hotspot tracking and the read-optimization machinery.
//!
//! Adaptation is incremental and query-driven: when the workload turns
//! read-heavy, queries that cross still-write-optimized structure enqueue
//! the nodes they touched, and the tree maintenance role drains that queue
//! by *hotspot-emptying* interior nodes (expelling hot-range data downward
//! while rewriting cold data in place) and converting hot leaves to page
//! form. Cold regions keep their write-optimized shape, which is the whole
//! point: only the structure that hot queries actually traverse pays the
//! conversion cost.
//!
//! Certification is epoch-based. Emptying a node stamps it with the
//! current adaptation epoch; bumping the epoch (new hotspots, or a switch
//! back to write-optimized form) lazily invalidates every stamp at once
//! without walking the tree.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::config::LeafStrategy;
use crate::entry::{key_successor, Key, KeyRange};
use crate::error::{Error, Result};
use crate::merge::{vec_stream, EntryStream, MergeIter};
use crate::sstable::TableRef;
use crate::stats::WriteClass;
use crate::store::Store;
use crate::tree::{
    child_slot, grow_down, leaf_merge_to_pages, merge_into_adapted_leaf, NodeId, NodePage,
    TreeMut, TreeView,
};

/// An immutable, validated set of disjoint hot key ranges.
#[derive(Debug, Default)]
pub struct HotspotSet {
    /// Sorted by lower bound; pairwise disjoint; every range non-empty.
    ranges: Vec<KeyRange>,
}

impl HotspotSet {
    pub fn new(mut ranges: Vec<KeyRange>) -> Result<HotspotSet> {
        for r in &ranges {
            if let (Some(lo), Some(hi)) = (&r.lo, &r.hi) {
                if lo >= hi {
                    return Err(Error::InvalidArgument(format!(
                        "empty hotspot range {lo:?}..{hi:?}"
                    )));
                }
            }
        }
        ranges.sort_by(|a, b| a.lo.cmp(&b.lo));
        for w in ranges.windows(2) {
            let disjoint = match (&w[0].hi, &w[1].lo) {
                (Some(hi), Some(lo)) => hi <= lo,
                // An unbounded side in either range makes them overlap.
                _ => false,
            };
            if !disjoint {
                return Err(Error::InvalidArgument(format!(
                    "hotspot ranges overlap: {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(HotspotSet { ranges })
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> &[KeyRange] {
        &self.ranges
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.ranges.iter().any(|r| r.contains(key))
    }

    /// True when any hot range intersects the half-open `[lo, hi)`.
    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.ranges.iter().any(|r| r.overlaps(lo, hi))
    }

    /// True when any hot range intersects the closed key span `[min, max]`.
    pub fn overlaps_span(&self, min: &[u8], max: &[u8]) -> bool {
        let hi = key_successor(max);
        self.overlaps(min, &hi)
    }

    /// True when `[lo, hi)` lies entirely inside hot ranges (no cold gap).
    pub fn covers(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.split(lo, hi).iter().all(|(_, _, hot)| *hot)
    }

    /// Cuts `[lo, hi)` into maximal subranges, each flagged hot or cold,
    /// in key order. Concatenated, the pieces reproduce the input exactly.
    pub fn split(&self, lo: &[u8], hi: &[u8]) -> Vec<(Key, Key, bool)> {
        let mut out = Vec::new();
        let mut at = lo.to_vec();
        if lo >= hi {
            return out;
        }
        for r in &self.ranges {
            if !r.overlaps(&at, hi) {
                continue;
            }
            let seg_lo = match &r.lo {
                Some(rlo) if rlo.as_slice() > at.as_slice() => rlo.clone(),
                _ => at.clone(),
            };
            let seg_hi = match &r.hi {
                Some(rhi) if rhi.as_slice() < hi => rhi.clone(),
                _ => hi.to_vec(),
            };
            if seg_lo.as_slice() > at.as_slice() {
                out.push((at.clone(), seg_lo.clone(), false));
            }
            out.push((seg_lo, seg_hi.clone(), true));
            at = seg_hi;
            if at.as_slice() >= hi {
                break;
            }
        }
        if at.as_slice() < hi {
            out.push((at, hi.to_vec(), false));
        }
        out
    }
}

/// FIFO of nodes awaiting adaptation work. Deduplicates while queued; a
/// node may be re-enqueued once popped (queries keep nominating nodes
/// until they stop observing write-optimized structure).
#[derive(Debug, Default)]
pub struct AdaptQueue {
    inner: Mutex<QueueInner>,
}

#[derive(Debug, Default)]
struct QueueInner {
    order: VecDeque<NodeId>,
    queued: HashSet<NodeId>,
}

impl AdaptQueue {
    pub fn push(&self, id: NodeId) -> bool {
        let mut g = self.inner.lock();
        if g.queued.insert(id) {
            g.order.push_back(id);
            true
        } else {
            false
        }
    }

    pub fn pop(&self) -> Option<NodeId> {
        let mut g = self.inner.lock();
        let id = g.order.pop_front()?;
        g.queued.remove(&id);
        Some(id)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        let mut g = self.inner.lock();
        g.order.clear();
        g.queued.clear();
    }
}

/// Which direction the workload has shifted, as reported by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadHint {
    ReadHeavy,
    WriteHeavy,
}

/// How far along the read-optimization currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptPhase {
    /// Write-optimized operation; no read adaptation in progress.
    WriteOptimized,
    /// Read adaptation requested and under way; queries still consult LSMs.
    Adapting,
    /// Hot ranges fully page-resident and certified; hot queries bypass
    /// every LSM and writes to hot keys go directly to leaf pages.
    ReadOptimized,
}

/// Snapshot of the adaptation state, swapped atomically as one `Arc` so a
/// query sees a consistent (phase, hotspots, epoch) triple.
#[derive(Debug)]
pub struct AdaptStatus {
    pub phase: AdaptPhase,
    pub hotspots: Arc<HotspotSet>,
    /// Bumped whenever certifications must be discarded (hotspot change or
    /// a return to write-optimized operation).
    pub epoch: u64,
}

impl AdaptStatus {
    pub fn write_optimized(epoch: u64) -> AdaptStatus {
        AdaptStatus {
            phase: AdaptPhase::WriteOptimized,
            hotspots: Arc::new(HotspotSet::default()),
            epoch,
        }
    }
}

/// Expels hot-range data from an interior node's LSM: cold tables survive
/// untouched (by pointer), mixed tables are rewritten cold-only at their
/// own level, and the hot entries of every level are merged once and
/// pushed into the children — page merges for read-optimized children,
/// fresh level-one runs otherwise. The node is stamped certified for
/// `epoch`. Returns the children that received hot data and still hold an
/// LSM (they inherit the emptying obligation).
pub fn hotspot_empty(
    store: &Store,
    m: &mut TreeMut,
    node_id: NodeId,
    hs: &HotspotSet,
    epoch: u64,
) -> Result<Vec<NodeId>> {
    let node = Arc::clone(m.node(node_id));
    let Some(lsm) = &node.lsm else {
        return Ok(Vec::new());
    };
    let NodePage::NonLeaf {
        routing_keys,
        children,
    } = &node.page
    else {
        return Err(Error::InvalidArgument(
            "hotspot emptying applies to interior nodes; leaves are transformed".into(),
        ));
    };

    let touched = lsm
        .all_tables()
        .any(|t| hs.overlaps_span(&t.min_key, &t.max_key));
    if !touched {
        // Nothing hot here: certification costs no reads or writes.
        let mut n = node.as_ref().clone();
        n.hotspot_free = Some(epoch);
        m.put(n);
        return Ok(Vec::new());
    }

    // Cold survivors are cut at the hotspot boundaries: a table whose span
    // straddled a hot range would read as "may hold hot data" forever and
    // the node could never count as done.
    let mut hot_bounds: Vec<Key> = hs
        .ranges()
        .iter()
        .flat_map(|r| [r.lo.clone(), r.hi.clone()])
        .flatten()
        .collect();
    hot_bounds.dedup();

    let mut new_levels: Vec<Vec<TableRef>> = vec![Vec::new(); lsm.levels().len()];
    let mut hot_streams: Vec<EntryStream> = Vec::new();
    for (li, level) in lsm.levels().iter().enumerate() {
        for t in level {
            if !hs.overlaps_span(&t.min_key, &t.max_key) {
                new_levels[li].push(Arc::clone(t));
                continue;
            }
            let mut hot = Vec::new();
            let mut cold = store.multi_writer(WriteClass::Structure, hot_bounds.clone());
            for entry in t.scan_all()? {
                let entry = entry?;
                if hs.contains(&entry.key) {
                    hot.push(entry);
                } else {
                    cold.add(&entry)?;
                }
            }
            new_levels[li].extend(cold.finish()?);
            if !hot.is_empty() {
                hot_streams.push(vec_stream(hot));
            }
            m.obsolete.push(Arc::clone(t));
        }
    }

    // One merge of all expelled data, cut at the separators so every
    // output lands wholly inside one child.
    let merged = MergeIter::new(hot_streams)?;
    let mut w = store.multi_writer(WriteClass::Structure, routing_keys.clone());
    for entry in merged {
        w.add(&entry?)?;
    }
    let outputs = w.finish()?;
    let mut per_child: Vec<Vec<TableRef>> = vec![Vec::new(); children.len()];
    for t in outputs {
        let slot = child_slot(routing_keys, &t.min_key);
        debug_assert_eq!(slot, child_slot(routing_keys, &t.max_key));
        per_child[slot].push(t);
    }

    // Record the emptied, certified node before handing anything out: a
    // page merge below can overflow a child, and the resulting splice may
    // reshape (or split away) this very node. Those edits must see it with
    // the hot data already expelled, and nothing here may touch it after.
    let mut n = node.as_ref().clone();
    n.lsm = Some(lsm.replace_levels(new_levels, lsm.guards_version()));
    n.hotspot_free = Some(epoch);
    m.put(n);

    let children = children.clone();
    let mut follow_up = Vec::new();
    for (slot, tables) in per_child.into_iter().enumerate() {
        if tables.is_empty() {
            continue;
        }
        let child_id = children[slot];
        let child = Arc::clone(m.node(child_id));
        if child.is_adapted_leaf() {
            let mut streams: Vec<EntryStream> = Vec::with_capacity(tables.len());
            for t in &tables {
                streams.push(Box::new(t.scan_all()?));
            }
            merge_into_adapted_leaf(store, m, child_id, streams)?;
            for t in tables {
                t.mark_obsolete();
            }
        } else {
            let mut next = child.as_ref().clone();
            next.lsm = Some(next.lsm.as_ref().unwrap().add_runs(tables));
            next.hotspot_free = None;
            m.put(next);
            m.touched.push(child_id);
            follow_up.push(child_id);
        }
    }
    Ok(follow_up)
}

/// Converts a hot, write-optimized leaf to page form using the configured
/// strategy. The growth strategy first pushes the leaf's bottom level down
/// as new children and then page-merges each child separately (many small
/// merges); the flat strategy merges the whole leaf LSM in one pass.
/// Returns nodes needing follow-up emptying (the grown node itself, whose
/// upper levels may still hold hot data).
pub fn adapt_leaf(
    store: &Store,
    m: &mut TreeMut,
    leaf_id: NodeId,
    strategy: LeafStrategy,
) -> Result<Vec<NodeId>> {
    let node = Arc::clone(m.node(leaf_id));
    if node.is_adapted_leaf() {
        return Ok(Vec::new());
    }
    match strategy {
        LeafStrategy::SideSplit => {
            leaf_merge_to_pages(store, m, leaf_id)?;
            Ok(Vec::new())
        }
        LeafStrategy::DownSplit => {
            match grow_down(store, m, leaf_id) {
                Ok(kids) => {
                    for k in kids {
                        leaf_merge_to_pages(store, m, k)?;
                    }
                    // The node is now interior; any upper levels it kept
                    // still need emptying toward the fresh page children.
                    Ok(vec![leaf_id])
                }
                // Too small to divide: fall back to the one-pass merge.
                Err(Error::InvalidArgument(_)) => {
                    leaf_merge_to_pages(store, m, leaf_id)?;
                    Ok(Vec::new())
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Scans a snapshot for remaining adaptation work: interior nodes whose
/// LSM still holds (or may hold) hot-range data without a current-epoch
/// certificate, and hot leaves that are still write-optimized. An empty
/// answer (together with hot-free memtables, which the caller checks)
/// means the read optimization is complete.
pub fn pending_nodes(view: &TreeView, hs: &HotspotSet, epoch: u64) -> Vec<NodeId> {
    let mut pending = Vec::new();
    let mut stack = vec![view.root];
    while let Some(id) = stack.pop() {
        let node = view.node(id);
        let hot_node = hs.overlaps(node.covered.lo_bound(), node.covered.hi_bound());
        if !hot_node {
            continue; // wholly cold subtree: stays write-optimized by design
        }
        match &node.page {
            NodePage::Leaf => {
                if !node.is_adapted_leaf() {
                    pending.push(id);
                }
            }
            NodePage::NonLeaf { children, .. } => {
                if let Some(lsm) = &node.lsm {
                    let certified = node.hotspot_free == Some(epoch);
                    // Overlap despite a certificate means data arrived
                    // after stamping; an empty LSM needs no treatment.
                    let overlapping = lsm
                        .all_tables()
                        .any(|t| hs.overlaps_span(&t.min_key, &t.max_key));
                    if overlapping || (!certified && !lsm.is_empty()) {
                        pending.push(id);
                    }
                }
                stack.extend(children.iter().copied());
            }
        }
    }
    pending.sort_unstable();
    pending.dedup();
    pending
}
