//! Public index facade.
//!
//! An [`Engine`] routes every operation according to the current state:
//!
//! * **Write-optimized** (fresh engines, and any time after a write-heavy
//!   signal): puts and deletes batch in a memtable; full memtables rotate
//!   to an immutable buffer and flush into the root node's LSM, from where
//!   background maintenance migrates data down the tree in bulk.
//! * **Read-optimized** (after a read-heavy signal, once the declared hot
//!   ranges are fully reorganized): hot-range queries run against sorted
//!   leaf pages without consulting any LSM, and hot-range writes go
//!   straight into those pages under per-leaf latches.
//!
//! The switch is gradual and query-driven: after a read-heavy signal,
//! queries nominate the write-optimized nodes they route through, and the
//! tree role reorganizes exactly those. State is reported read-optimized
//! only once every node intersecting a hot range is certified clean and
//! the hot data has left the memtables.
//!
//! Concurrency contract: any number of reader and writer threads, plus
//! exactly two maintenance roles — one owning flushes and root-LSM
//! compaction, one owning all structural tree work. Readers snapshot the
//! memtables first and then the tree (data moves memtable → tree, never
//! the other way, so that order cannot lose a version) and are never
//! blocked by maintenance; structural edits build a successor tree view
//! and install it with a single pointer swap.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, RwLock};

use crate::adapt::{
    adapt_leaf, hotspot_empty, pending_nodes, AdaptPhase, AdaptQueue, AdaptStatus, HotspotSet,
    WorkloadHint,
};
use crate::config::{EngineConfig, Mode};
use crate::entry::{key_successor, Entry, Key, KeyRange, Seq};
use crate::error::{Error, Result};
use crate::lsm::LsmOverflow;
use crate::manifest;
use crate::memtable::{MemTable, PutOutcome};
use crate::merge::{strip_tombstones, vec_stream, EntryStream, MergeIter};
use crate::stats::{IoSnapshot, QueryStats, WriteClass};
use crate::store::Store;
use crate::tree::{
    check_freshness, grow_down, merge_into_adapted_leaf, node_empty, split_leaf, FrozenTree,
    NodeId, TreeMut, TreeView,
};

/// Externally visible operating state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineState {
    /// Initial write-optimized form: the whole index is one root LSM.
    W0,
    /// Read-optimized: hot ranges are page-resident and certified.
    R,
    /// Write-optimized with a grown tree (after bootstrap, or any time a
    /// write-heavy signal ends a read-optimized period).
    WPlus,
}

impl std::fmt::Display for EngineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineState::W0 => "w0",
            EngineState::R => "r",
            EngineState::WPlus => "w+",
        })
    }
}

/// Engine-level counters and gauges (see [`QueryStats`] for per-query ones).
#[derive(Debug, Clone)]
pub struct EngineStats {
    pub state: EngineState,
    pub io: IoSnapshot,
    pub tree_height: usize,
    pub node_count: usize,
    pub adapt_queue_len: usize,
    /// Most recent error a maintenance role hit (it retries after noting it).
    pub last_maintenance_error: Option<String>,
}

struct MemArea {
    active: MemTable,
    frozen: Option<Arc<MemTable>>,
}

struct Inner {
    store: Arc<Store>,
    view: RwLock<Arc<TreeView>>,
    status: RwLock<Arc<AdaptStatus>>,
    mem: Mutex<MemArea>,
    /// Signaled when the immutable slot frees up (writers block on it).
    mem_freed: Condvar,
    seq: AtomicU64,
    /// Serializes every tree-view mutation end to end, so each unit builds
    /// on the current view and installation is a plain swap.
    maint: Mutex<()>,
    /// Keeps one flush in flight at a time even when maintenance is driven
    /// manually from several threads.
    flush_mx: Mutex<()>,
    /// Hot nodes nominated by queries, awaiting reorganization.
    queue: AdaptQueue,
    /// Adapted leaves that outgrew the leaf capacity.
    splits: AdaptQueue,
    work_mx: Mutex<()>,
    work_cv: Condvar,
    /// Set when adaptation wants the memtables drained ahead of budget.
    force_flush: AtomicBool,
    shutdown: AtomicBool,
    closed: AtomicBool,
    last_error: Mutex<Option<String>>,
    /// Fault injection for the verification harness: when n > 0, every nth
    /// accepted write is silently dropped.
    drop_every: AtomicU64,
    write_count: AtomicU64,
}

/// The index facade. All methods take `&self`; share it across threads
/// behind an [`Arc`].
pub struct Engine {
    inner: Arc<Inner>,
    roles: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    pub fn open(config: EngineConfig) -> Result<Engine> {
        validate_config(&config)?;
        let store = Arc::new(Store::open(config)?);
        let catalog = manifest::load(&store)?;
        let (view, seq, epoch, hot_ranges) = match catalog {
            Some(c) => (c.view, c.seq, c.epoch, c.hotspots),
            None => (TreeView::initial(&store), 0, 0, Vec::new()),
        };
        manifest::sweep_orphans(&store, &view)?;
        let hotspots = HotspotSet::new(hot_ranges)?;
        let budget = store.config.memtable_budget;
        let background = store.config.background_maintenance;
        let inner = Arc::new(Inner {
            store,
            view: RwLock::new(Arc::new(view)),
            status: RwLock::new(Arc::new(AdaptStatus {
                phase: AdaptPhase::WriteOptimized,
                hotspots: Arc::new(hotspots),
                epoch,
            })),
            mem: Mutex::new(MemArea {
                active: MemTable::new(budget),
                frozen: None,
            }),
            mem_freed: Condvar::new(),
            seq: AtomicU64::new(seq),
            maint: Mutex::new(()),
            flush_mx: Mutex::new(()),
            queue: AdaptQueue::default(),
            splits: AdaptQueue::default(),
            work_mx: Mutex::new(()),
            work_cv: Condvar::new(),
            force_flush: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            closed: AtomicBool::new(false),
            last_error: Mutex::new(None),
            drop_every: AtomicU64::new(0),
            write_count: AtomicU64::new(0),
        });
        let engine = Engine {
            inner,
            roles: Mutex::new(Vec::new()),
        };
        if background {
            let mut roles = engine.roles.lock();
            for (name, is_root) in [("aha-root", true), ("aha-tree", false)] {
                let inner = Arc::clone(&engine.inner);
                let handle = std::thread::Builder::new()
                    .name(name.to_string())
                    .spawn(move || role_loop(inner, is_root))
                    .map_err(|e| Error::io(e, &engine.inner.store.dir))?;
                roles.push(handle);
            }
        }
        Ok(engine)
    }

    /// Persists the catalog (table set, tree layout, leaf pages) without
    /// flushing the memtables; their contents are volatile until the next
    /// flush or [`Engine::close`].
    pub fn checkpoint(&self) -> Result<()> {
        self.inner.ensure_open()?;
        self.inner.checkpoint()
    }

    /// Flushes the memtables, persists the catalog, and stops the
    /// maintenance roles. Idempotent; also invoked on drop.
    pub fn close(&self) -> Result<()> {
        if self.inner.closed.swap(true, Ordering::SeqCst) {
            return Ok(());
        }
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.wake();
        {
            let g = self.inner.mem.lock();
            self.inner.mem_freed.notify_all();
            drop(g);
        }
        for handle in self.roles.lock().drain(..) {
            let _ = handle.join();
        }
        self.inner.flush_memtables()?;
        self.inner.checkpoint()
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner
            .write(Entry::put(key.to_vec(), 0, value.to_vec()))
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.inner.write(Entry::tombstone(key.to_vec(), 0))
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.get_with_stats(key)?.0)
    }

    pub fn get_with_stats(&self, key: &[u8]) -> Result<(Option<Vec<u8>>, QueryStats)> {
        self.inner.ensure_open()?;
        let (mut entries, stats) = self.inner.read_range(key, &key_successor(key))?;
        Ok((entries.pop().map(|e| e.value), stats))
    }

    /// All live `(key, value)` pairs in `[lo, hi)`, ascending.
    pub fn range(&self, lo: &[u8], hi: &[u8]) -> Result<Vec<(Key, Vec<u8>)>> {
        Ok(self.range_with_stats(lo, hi)?.0)
    }

    pub fn range_with_stats(
        &self,
        lo: &[u8],
        hi: &[u8],
    ) -> Result<(Vec<(Key, Vec<u8>)>, QueryStats)> {
        self.inner.ensure_open()?;
        if lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "range lower bound {lo:?} not below upper bound {hi:?}"
            )));
        }
        let (entries, stats) = self.inner.read_range(lo, hi)?;
        let pairs = entries.into_iter().map(|e| (e.key, e.value)).collect();
        Ok((pairs, stats))
    }

    /// Declares the hot ranges subsequent read-heavy periods optimize for.
    /// Replacing the set invalidates all previous certifications.
    pub fn set_hotspots(&self, ranges: Vec<KeyRange>) -> Result<()> {
        self.inner.ensure_open()?;
        let hs = HotspotSet::new(ranges)?;
        {
            let mut status = self.inner.status.write();
            let phase = match status.phase {
                AdaptPhase::WriteOptimized => AdaptPhase::WriteOptimized,
                // A changed target while read-optimizing (or optimized)
                // restarts the certification for the new ranges.
                _ => AdaptPhase::Adapting,
            };
            *status = Arc::new(AdaptStatus {
                phase,
                hotspots: Arc::new(hs),
                epoch: status.epoch + 1,
            });
        }
        self.inner.queue.clear();
        self.inner.wake();
        Ok(())
    }

    /// Signals the prevailing workload. Read-heavy starts the query-driven
    /// reorganization toward leaf-resident hot data; write-heavy reverts to
    /// batched writes immediately (no data movement). Baseline modes ignore
    /// the signal. Returns the state after the signal.
    pub fn transition(&self, hint: WorkloadHint) -> EngineState {
        if self.inner.store.config.mode == Mode::Aha && !self.inner.closed.load(Ordering::SeqCst)
        {
            let mut status = self.inner.status.write();
            let phase = match (hint, status.phase) {
                (WorkloadHint::WriteHeavy, _) => AdaptPhase::WriteOptimized,
                (WorkloadHint::ReadHeavy, AdaptPhase::ReadOptimized) => AdaptPhase::ReadOptimized,
                (WorkloadHint::ReadHeavy, _) => AdaptPhase::Adapting,
            };
            if phase != status.phase {
                *status = Arc::new(AdaptStatus {
                    phase,
                    hotspots: Arc::clone(&status.hotspots),
                    epoch: status.epoch,
                });
                if phase == AdaptPhase::WriteOptimized {
                    self.inner.queue.clear();
                }
            }
            drop(status);
            self.inner.wake();
        }
        self.state()
    }

    pub fn state(&self) -> EngineState {
        self.inner.state()
    }

    pub fn stats(&self) -> EngineStats {
        let view = self.inner.current_view();
        EngineStats {
            state: self.inner.state(),
            io: self.inner.store.io.snapshot(),
            tree_height: view.height(),
            node_count: view.nodes.len(),
            adapt_queue_len: self.inner.queue.len(),
            last_maintenance_error: self.inner.last_error.lock().clone(),
        }
    }

    /// One unit of the flush/root-compaction role. Returns whether any work
    /// was done. Safe to call concurrently with the background roles.
    pub fn maintenance_step_root(&self) -> Result<bool> {
        self.inner.step_root()
    }

    /// One unit of the tree role, in priority order: root hand-off, then
    /// node emptying/compaction, then leaf splits, then adaptation work.
    pub fn maintenance_step_tree(&self) -> Result<bool> {
        self.inner.step_tree()
    }

    /// Rotates and flushes until both memtables are empty.
    pub fn flush(&self) -> Result<()> {
        self.inner.ensure_open()?;
        self.inner.flush_memtables()
    }

    /// Runs maintenance units until both roles report no work.
    pub fn drain_maintenance(&self) -> Result<()> {
        loop {
            let rooted = self.inner.step_root()?;
            let treed = self.inner.step_tree()?;
            if !rooted && !treed {
                return Ok(());
            }
        }
    }

    /// Audits the structural and freshness invariants of the current state;
    /// returns an error describing the first violation found.
    pub fn check_invariants(&self) -> Result<()> {
        // A flush hands off in two moves (install the new view, then clear
        // the immutable memtable); holding the flush lock keeps the audit
        // from sampling between them, where one version sits in both places.
        let _fg = self.inner.flush_mx.lock();
        let _g = self.inner.maint.lock();
        let view = self.inner.current_view();
        view.check_well_formed(self.inner.store.config.fanout)
            .map_err(Error::Invariant)?;
        let floor = {
            let g = self.inner.mem.lock();
            let mut floor: HashMap<Key, Seq> = HashMap::new();
            for e in g.active.iter() {
                floor.insert(e.key.clone(), e.seq);
            }
            if let Some(f) = &g.frozen {
                for e in f.iter() {
                    if let Some(newer) = g.active.get(&e.key) {
                        if newer.seq <= e.seq {
                            return Err(Error::Invariant(format!(
                                "immutable memtable holds key {:?} at seq {} but the \
                                 mutable one is older at {}",
                                e.key, e.seq, newer.seq
                            )));
                        }
                    }
                    floor.insert(e.key.clone(), e.seq);
                }
            }
            floor
        };
        check_freshness(&self.inner.store, &view, &floor)?.map_err(Error::Invariant)
    }

    #[doc(hidden)]
    pub fn set_drop_every(&self, n: u64) {
        self.inner.drop_every.store(n, Ordering::SeqCst);
    }

    /// Snapshot of the current tree structure, for tests that reason about
    /// routing (heights, paths, certificates).
    #[doc(hidden)]
    pub fn debug_view(&self) -> Arc<TreeView> {
        self.inner.current_view()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn validate_config(c: &EngineConfig) -> Result<()> {
    let complain = |msg: String| Err(Error::InvalidArgument(msg));
    if c.root_max_levels < 1 || c.node_max_levels < 1 {
        return complain("level limits must be at least 1".into());
    }
    if c.memtable_budget == 0 || c.sstable_target == 0 {
        return complain("memtable budget and table size target must be positive".into());
    }
    if c.page_size < 64 || c.pool_pages < 8 {
        return complain(format!(
            "page size {} / pool {} too small",
            c.page_size, c.pool_pages
        ));
    }
    if c.fanout < 2 {
        return complain(format!("fanout {} below 2", c.fanout));
    }
    if c.leaf_fill_target == 0 || c.leaf_fill_target > c.leaf_cap_bytes {
        return complain(format!(
            "leaf fill target {} outside 1..={}",
            c.leaf_fill_target, c.leaf_cap_bytes
        ));
    }
    Ok(())
}

fn role_loop(inner: Arc<Inner>, is_root: bool) {
    let mut backoff = Duration::from_millis(2);
    while !inner.shutdown.load(Ordering::SeqCst) {
        let step = if is_root {
            inner.step_root()
        } else {
            inner.step_tree()
        };
        match step {
            Ok(true) => {
                backoff = Duration::from_millis(2);
            }
            Ok(false) => {
                let mut g = inner.work_mx.lock();
                if !inner.shutdown.load(Ordering::SeqCst) {
                    inner
                        .work_cv
                        .wait_for(&mut g, Duration::from_millis(20));
                }
            }
            Err(e) => {
                // Versions are immutable and installs atomic, so a failed
                // unit left no partial state; note it and retry.
                *inner.last_error.lock() = Some(e.to_string());
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_millis(200));
            }
        }
    }
}

impl Inner {
    fn ensure_open(&self) -> Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::ShutDown);
        }
        Ok(())
    }

    fn current_view(&self) -> Arc<TreeView> {
        Arc::clone(&self.view.read())
    }

    fn current_status(&self) -> Arc<AdaptStatus> {
        Arc::clone(&self.status.read())
    }

    fn next_seq(&self) -> Seq {
        self.seq.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn wake(&self) {
        let _g = self.work_mx.lock();
        self.work_cv.notify_all();
    }

    /// Installs a finished unit's view. Caller holds `maint`.
    fn install(&self, frozen: FrozenTree) {
        let FrozenTree { view, obsolete, .. } = frozen;
        *self.view.write() = Arc::new(view);
        for t in obsolete {
            t.mark_obsolete();
        }
    }

    fn state(&self) -> EngineState {
        match self.store.config.mode {
            Mode::PureLsm => EngineState::W0,
            Mode::PureBtree => EngineState::R,
            Mode::Aha => {
                if self.current_status().phase == AdaptPhase::ReadOptimized {
                    return EngineState::R;
                }
                let view = self.current_view();
                let root = view.node(view.root);
                if root.is_leaf() && !root.is_adapted_leaf() {
                    EngineState::W0
                } else {
                    EngineState::WPlus
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Write path
    // ------------------------------------------------------------------

    fn write(&self, mut entry: Entry) -> Result<()> {
        self.ensure_open()?;
        entry.seq = 1; // placeholder so validation sees a complete entry
        entry.validate()?;
        let n = self.drop_every.load(Ordering::Relaxed);
        if n > 0 && self.write_count.fetch_add(1, Ordering::Relaxed) % n == n - 1 {
            return Ok(()); // injected fault: admit and forget
        }
        match self.store.config.mode {
            Mode::PureBtree => self.direct_leaf_write(entry),
            Mode::PureLsm => self.memtable_write(entry),
            Mode::Aha => {
                let status = self.current_status();
                if status.phase == AdaptPhase::ReadOptimized
                    && status.hotspots.contains(&entry.key)
                {
                    self.direct_leaf_write(entry)
                } else {
                    self.memtable_write(entry)
                }
            }
        }
    }

    fn memtable_write(&self, mut entry: Entry) -> Result<()> {
        let logical = (entry.key.len() + entry.value.len()) as usize;
        let budget = self.store.config.memtable_budget;
        let mut g = self.mem.lock();
        loop {
            entry.seq = self.next_seq();
            match g.active.put(entry.clone()) {
                PutOutcome::Accepted => {
                    self.store.io.add_logical(logical);
                    return Ok(());
                }
                PutOutcome::NeedsRotation => {
                    if g.frozen.is_none() {
                        let full = std::mem::replace(&mut g.active, MemTable::new(budget));
                        g.frozen = Some(Arc::new(full));
                        self.wake();
                        continue;
                    }
                    // Both buffers full: wait for the flush role rather
                    // than rejecting the write.
                    if self.store.config.background_maintenance {
                        self.mem_freed
                            .wait_for(&mut g, self.store.config.rotation_wait);
                        if self.closed.load(Ordering::SeqCst) {
                            return Err(Error::ShutDown);
                        }
                    } else {
                        drop(g);
                        self.step_root()?;
                        g = self.mem.lock();
                    }
                }
            }
        }
    }

    fn direct_leaf_write(&self, mut entry: Entry) -> Result<()> {
        let logical = entry.key.len() + entry.value.len();
        loop {
            let view = self.current_view();
            let leaf_id = view.leaf_for(&entry.key);
            let node = view.node(leaf_id);
            let Some(leaf) = &node.leaf_data else {
                // The routed leaf is still write-optimized. For the adaptive
                // mode this is a transient window around a hotspot change;
                // batching the write is always correct.
                if self.store.config.mode == Mode::Aha {
                    return self.memtable_write(entry);
                }
                return Err(Error::Invariant(format!(
                    "direct write routed to unorganized leaf {leaf_id}"
                )));
            };
            // A direct delete removes the page copy outright: this leaf is
            // the key's only possible holder here (that is what makes the
            // direct path legal at all), so no tombstone is needed.
            if entry.is_tombstone() {
                match leaf.remove_if_live(&self.store, &entry.key)? {
                    Some(_) => {
                        self.store.io.add_logical(logical);
                        return Ok(());
                    }
                    None => continue, // leaf retired under us; reroute
                }
            }
            entry.seq = self.next_seq();
            match leaf.insert_if_live(&self.store, entry.clone())? {
                Some(total) => {
                    self.store.io.add_logical(logical);
                    if total > self.store.config.leaf_cap_bytes as u64 {
                        self.splits.push(leaf_id);
                        self.wake();
                    }
                    return Ok(());
                }
                None => continue, // leaf retired under us; reroute on the new view
            }
        }
    }

    // ------------------------------------------------------------------
    // Read path
    // ------------------------------------------------------------------

    fn read_range(&self, lo: &[u8], hi: &[u8]) -> Result<(Vec<Entry>, QueryStats)> {
        let mut stats = QueryStats::default();
        let status = self.current_status();
        // Memtables strictly before the tree: data moves memtable → tree,
        // and the flush slot is cleared only after the tree install, so
        // this order can duplicate a version but never lose one.
        let mut streams: Vec<EntryStream> = {
            let g = self.mem.lock();
            let mut v = Vec::new();
            let copy = g.active.range_copy(lo, hi);
            if !copy.is_empty() {
                v.push(vec_stream(copy));
            }
            if let Some(f) = &g.frozen {
                let copy = f.range_copy(lo, hi);
                if !copy.is_empty() {
                    v.push(vec_stream(copy));
                }
            }
            v
        };
        let view = self.current_view();
        let adapting = status.phase == AdaptPhase::Adapting;
        let pieces: Vec<(Key, Key, bool)> = match status.phase {
            AdaptPhase::WriteOptimized => vec![(lo.to_vec(), hi.to_vec(), false)],
            _ => status.hotspots.split(lo, hi),
        };
        let mut nominated = false;
        for (plo, phi, hot) in &pieces {
            let range = KeyRange::new(Some(plo.clone()), Some(phi.clone()));
            for level in view.route_range(&range) {
                for id in level {
                    let node = view.node(id);
                    if let Some(leaf) = &node.leaf_data {
                        let (entries, pages) = leaf.scan(&self.store, plo, phi)?;
                        stats.pages_read += pages;
                        if !entries.is_empty() {
                            streams.push(vec_stream(entries));
                        }
                    }
                    let Some(lsm) = &node.lsm else { continue };
                    if *hot && node.hotspot_free == Some(status.epoch) {
                        continue; // certified clean for this epoch: skip
                    }
                    if *hot && adapting && self.queue.push(id) {
                        nominated = true;
                    }
                    if lsm.is_empty() {
                        continue;
                    }
                    let (lsm_streams, touched) = lsm.range_streams(plo, phi)?;
                    stats.nodelsm_probes += 1;
                    stats.sstables_touched += touched;
                    streams.extend(lsm_streams);
                }
            }
        }
        if nominated {
            self.wake();
        }
        let mut out = Vec::new();
        for entry in strip_tombstones(MergeIter::new(streams)?) {
            out.push(entry?);
        }
        stats.entries_emitted = out.len() as u64;
        Ok((out, stats))
    }

    // ------------------------------------------------------------------
    // Flush / root role
    // ------------------------------------------------------------------

    fn step_root(&self) -> Result<bool> {
        let _flush_guard = self.flush_mx.lock();
        // 1) Flush a pending immutable memtable.
        let frozen = self.mem.lock().frozen.clone();
        if let Some(im) = frozen {
            self.flush_immutable(&im)?;
            self.mem.lock().frozen = None;
            self.mem_freed.notify_all();
            self.wake();
            return Ok(true);
        }
        // 2) Early rotation requested (adaptation wants memory drained).
        if self.force_flush.swap(false, Ordering::SeqCst) {
            let mut g = self.mem.lock();
            if !g.active.is_empty() && g.frozen.is_none() {
                let budget = self.store.config.memtable_budget;
                let full = std::mem::replace(&mut g.active, MemTable::new(budget));
                g.frozen = Some(Arc::new(full));
                return Ok(true); // flushed by the next unit
            }
        }
        drop(_flush_guard);
        // 3) One root-LSM compaction unit. The root limit is soft: levels
        //    may temporarily exceed it so writes are never blocked.
        let _g = self.maint.lock();
        let base = self.current_view();
        let root = base.node(base.root);
        let Some(lsm) = &root.lsm else {
            return Ok(false);
        };
        let policy = &self.store.config.level_policy;
        let target = self.store.config.sstable_target;
        if let Some(source) = lsm.needs_internal_compaction(policy, target, true) {
            let (guards, page_version) = match &root.page {
                crate::tree::NodePage::NonLeaf { routing_keys, .. } => {
                    (routing_keys.clone(), root.page_version)
                }
                crate::tree::NodePage::Leaf => (Vec::new(), root.page_version),
            };
            let compaction =
                lsm.compact_once(&self.store, source, &guards, &self.hot_cut_keys(), page_version)?;
            let mut m = TreeMut::new(&base);
            let mut new_root = m.node(base.root).as_ref().clone();
            new_root.lsm = Some(compaction.lsm);
            m.put(new_root);
            m.obsolete.extend(compaction.replaced);
            self.install(m.freeze());
            self.wake();
            return Ok(true);
        }
        if lsm.overflow(policy, target, true) == LsmOverflow::Soft {
            self.wake(); // hand-off is the tree role's job
        }
        Ok(false)
    }

    /// Current hotspot boundary keys. Compactions keep a node's hotspot
    /// certificate (they introduce no new data), so their outputs must be
    /// cut here: a table left spanning across a hot range would read as
    /// "may hold hot data" and park the node in the adaptation backlog for
    /// good.
    fn hot_cut_keys(&self) -> Vec<Key> {
        let status = self.current_status();
        let mut bounds: Vec<Key> = status
            .hotspots
            .ranges()
            .iter()
            .flat_map(|r| [r.lo.clone(), r.hi.clone()])
            .flatten()
            .collect();
        bounds.dedup();
        bounds
    }

    fn flush_immutable(&self, im: &MemTable) -> Result<()> {
        let _g = self.maint.lock();
        let base = self.current_view();
        let root = base.node(base.root);
        if root.is_adapted_leaf() {
            // The whole index is page-resident: merge the batch straight in.
            let batch: Vec<Entry> = im.iter().cloned().collect();
            if batch.is_empty() {
                return Ok(());
            }
            let mut m = TreeMut::new(&base);
            merge_into_adapted_leaf(&self.store, &mut m, base.root, vec![vec_stream(batch)])?;
            self.install(m.freeze());
            return Ok(());
        }
        let mut writer = self.store.multi_writer(WriteClass::Flush, Vec::new());
        for entry in im.iter() {
            writer.add(entry)?;
        }
        let runs = writer.finish()?;
        if runs.is_empty() {
            return Ok(());
        }
        let mut m = TreeMut::new(&base);
        let mut new_root = root.as_ref().clone();
        new_root.lsm = Some(new_root.lsm.as_ref().expect("root keeps an LSM").add_runs(runs));
        // Fresh data voids any hotspot certification.
        new_root.hotspot_free = None;
        m.put(new_root);
        self.install(m.freeze());
        Ok(())
    }

    fn flush_memtables(&self) -> Result<()> {
        loop {
            {
                let mut g = self.mem.lock();
                if g.frozen.is_none() {
                    if g.active.is_empty() {
                        return Ok(());
                    }
                    let budget = self.store.config.memtable_budget;
                    let full = std::mem::replace(&mut g.active, MemTable::new(budget));
                    g.frozen = Some(Arc::new(full));
                }
            }
            self.step_root()?;
        }
    }

    // ------------------------------------------------------------------
    // Tree role
    // ------------------------------------------------------------------

    fn step_tree(&self) -> Result<bool> {
        let _g = self.maint.lock();
        let base = self.current_view();
        let policy = &self.store.config.level_policy;
        let target = self.store.config.sstable_target;

        // 1) Root hand-off: bulk-migrate the root's bottom level into the
        //    tree (bootstrapping the tree from a root leaf if necessary).
        let root = base.node(base.root);
        if let Some(lsm) = &root.lsm {
            if lsm.overflow(policy, target, true) == LsmOverflow::Soft {
                let mut m = TreeMut::new(&base);
                if root.is_leaf() {
                    grow_down(&self.store, &mut m, base.root)?;
                } else {
                    node_empty(&self.store, &mut m, base.root)?;
                }
                self.install(m.freeze());
                self.wake();
                return Ok(true);
            }
        }

        // 2) Node upkeep, ancestors before descendants: hard overflows are
        //    emptied or split; otherwise levels past their trigger compact.
        for id in bfs_order(&base) {
            if id == base.root {
                continue;
            }
            let node = base.node(id);
            let Some(lsm) = &node.lsm else { continue };
            match lsm.overflow(policy, target, false) {
                LsmOverflow::Hard => {
                    let mut m = TreeMut::new(&base);
                    if node.is_leaf() {
                        split_leaf(&self.store, &mut m, id)?;
                    } else {
                        node_empty(&self.store, &mut m, id)?;
                    }
                    self.install(m.freeze());
                    self.wake();
                    return Ok(true);
                }
                LsmOverflow::Soft | LsmOverflow::None => {}
            }
            if let Some(source) = lsm.needs_internal_compaction(policy, target, false) {
                let (guards, page_version) = match &node.page {
                    crate::tree::NodePage::NonLeaf { routing_keys, .. } => {
                        (routing_keys.clone(), node.page_version)
                    }
                    crate::tree::NodePage::Leaf => (Vec::new(), node.page_version),
                };
                let compaction = lsm.compact_once(
                    &self.store,
                    source,
                    &guards,
                    &self.hot_cut_keys(),
                    page_version,
                )?;
                let mut m = TreeMut::new(&base);
                let mut next = node.as_ref().clone();
                next.lsm = Some(compaction.lsm);
                m.put(next);
                m.obsolete.extend(compaction.replaced);
                self.install(m.freeze());
                self.wake();
                return Ok(true);
            }
        }

        // 3) Adapted leaves that outgrew the capacity split into siblings.
        while let Some(id) = self.splits.pop() {
            let Some(node) = base.nodes.get(&id) else { continue };
            let Some(leaf) = &node.leaf_data else { continue };
            if leaf.total_bytes() <= self.store.config.leaf_cap_bytes as u64 {
                continue;
            }
            let mut m = TreeMut::new(&base);
            merge_into_adapted_leaf(&self.store, &mut m, id, Vec::new())?;
            self.install(m.freeze());
            self.wake();
            return Ok(true);
        }

        // 4) Query-nominated adaptation work.
        let status = self.current_status();
        if status.phase != AdaptPhase::Adapting {
            return Ok(false);
        }
        while let Some(id) = self.queue.pop() {
            let Some(node) = base.nodes.get(&id) else { continue };
            if node.hotspot_free == Some(status.epoch) || node.is_adapted_leaf() {
                continue;
            }
            let mut m = TreeMut::new(&base);
            let follow_ups = if node.is_leaf() {
                adapt_leaf(&self.store, &mut m, id, self.store.config.leaf_strategy)?
            } else {
                hotspot_empty(&self.store, &mut m, id, &status.hotspots, status.epoch)?
            };
            self.install(m.freeze());
            for f in follow_ups {
                self.queue.push(f);
            }
            self.wake();
            return Ok(true);
        }

        // 5) Completion: flip to read-optimized once nothing on a hot path
        //    is left to reorganize and no hot key is still memory-resident.
        if !pending_nodes(&base, &status.hotspots, status.epoch).is_empty() {
            return Ok(false); // queries will nominate what they touch
        }
        let hot_in_memory = {
            let g = self.mem.lock();
            status.hotspots.ranges().iter().any(|r| {
                g.active.has_key_in(r.lo_bound(), r.hi_bound())
                    || g.frozen
                        .as_ref()
                        .is_some_and(|f| f.has_key_in(r.lo_bound(), r.hi_bound()))
            })
        };
        if hot_in_memory {
            self.force_flush.store(true, Ordering::SeqCst);
            self.wake();
            return Ok(false);
        }
        let mut status_slot = self.status.write();
        if status_slot.phase == AdaptPhase::Adapting && status_slot.epoch == status.epoch {
            *status_slot = Arc::new(AdaptStatus {
                phase: AdaptPhase::ReadOptimized,
                hotspots: Arc::clone(&status.hotspots),
                epoch: status.epoch,
            });
            return Ok(true);
        }
        Ok(false)
    }

    fn checkpoint(&self) -> Result<()> {
        let _g = self.maint.lock();
        let view = self.current_view();
        let status = self.current_status();
        self.store.pager.flush_all()?;
        manifest::save(
            &self.store,
            &view,
            self.seq.load(Ordering::SeqCst),
            status.epoch,
            status.hotspots.ranges(),
        )
    }
}

/// Root-first traversal order (every parent before its children).
fn bfs_order(view: &TreeView) -> Vec<NodeId> {
    let mut order = vec![view.root];
    let mut at = 0;
    while at < order.len() {
        let node = view.node(order[at]);
        if let crate::tree::NodePage::NonLeaf { children, .. } = &node.page {
            order.extend(children.iter().copied());
        }
        at += 1;
    }
    order
}
