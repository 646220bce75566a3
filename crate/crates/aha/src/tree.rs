//! The tree skeleton: immutable snapshots of nodes, routing, and the
//! structural operations that reshape the tree.
//!
//! A snapshot ([`TreeView`]) is a persistent map from node id to an
//! immutable [`Node`]. Readers clone the current `Arc<TreeView>` and are
//! never blocked by maintenance; maintenance edits a [`TreeMut`] copy and
//! freezes it into the next snapshot, which the engine installs with a
//! single pointer swap. Table files and leaf pages referenced by an old
//! snapshot stay alive until its last reader drops it.
//!
//! Node layout follows one rule everywhere: data in a node is strictly
//! fresher (higher sequence numbers, per key) than data for the same key
//! anywhere in its subtree. Every operation here preserves that ordering,
//! and [`check_freshness`] audits it from first principles by rescanning
//! the files.

use std::collections::HashMap;
use std::sync::Arc;

use crate::config::Mode;
use crate::entry::{Entry, Key, KeyRange, Seq, KEY_CEILING};
use crate::error::{Error, Result};
use crate::leafpage::{build_segs, cut_into_leaves, LeafStore, MergeOutcome};
use crate::lsm::NodeLsm;
use crate::merge::{strip_tombstones, EntryStream, MergeIter};
use crate::sstable::TableRef;
use crate::stats::WriteClass;
use crate::store::Store;

pub type NodeId = u64;

/// Routing structure of a node.
#[derive(Debug, Clone)]
pub enum NodePage {
    NonLeaf {
        /// Strictly ascending separator keys; child `i` covers
        /// `[keys[i-1], keys[i])` within the node's own range.
        routing_keys: Vec<Key>,
        children: Vec<NodeId>,
    },
    Leaf,
}

/// One immutable node of a snapshot. A leaf holds either a per-node LSM
/// (write-optimized) or sorted leaf pages (read-optimized), never both; a
/// non-leaf may carry an LSM of in-flight data above its children.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub covered: KeyRange,
    pub page: NodePage,
    /// Bumped whenever `routing_keys` change; LSM bottoms remember the
    /// version their tables were cut against.
    pub page_version: u64,
    pub lsm: Option<NodeLsm>,
    pub leaf_data: Option<Arc<LeafStore>>,
    /// Adaptation epoch at which this node's LSM was last certified free
    /// of hotspot data; stale epochs mean "unknown".
    pub hotspot_free: Option<u64>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.page, NodePage::Leaf)
    }

    pub fn is_adapted_leaf(&self) -> bool {
        self.leaf_data.is_some()
    }

    pub fn routing(&self) -> (&[Key], &[NodeId]) {
        match &self.page {
            NodePage::NonLeaf {
                routing_keys,
                children,
            } => (routing_keys, children),
            NodePage::Leaf => panic!("routing() on a leaf"),
        }
    }

    pub fn child_for(&self, key: &[u8]) -> NodeId {
        let (keys, children) = self.routing();
        children[child_slot(keys, key)]
    }
}

/// Index of the child interval that covers `key`.
pub fn child_slot(keys: &[Key], key: &[u8]) -> usize {
    keys.partition_point(|k| k.as_slice() <= key)
}

/// The covered range of child `slot` under a parent covering `outer` with
/// the given separators.
fn child_range(outer: &KeyRange, keys: &[Key], slot: usize) -> KeyRange {
    let lo = if slot == 0 {
        outer.lo.clone()
    } else {
        Some(keys[slot - 1].clone())
    };
    let hi = if slot == keys.len() {
        outer.hi.clone()
    } else {
        Some(keys[slot].clone())
    };
    KeyRange { lo, hi }
}

/// An immutable snapshot of the whole tree.
#[derive(Debug)]
pub struct TreeView {
    pub epoch: u64,
    pub root: NodeId,
    pub nodes: HashMap<NodeId, Arc<Node>>,
}

impl TreeView {
    /// The starting layout: one leaf covering the whole key space. In the
    /// LSM-style modes it carries the root LSM; in the pure page mode it
    /// starts as an empty adapted leaf.
    pub fn initial(store: &Store) -> TreeView {
        let id = store.alloc_node_id();
        let (lsm, leaf_data) = if store.config.mode == Mode::PureBtree {
            (None, Some(Arc::new(LeafStore::new_empty(store))))
        } else {
            (
                Some(NodeLsm::new(store.config.effective_root_levels())),
                None,
            )
        };
        let root = Node {
            id,
            parent: None,
            covered: KeyRange::all(),
            page: NodePage::Leaf,
            page_version: 0,
            lsm,
            leaf_data,
            hotspot_free: None,
        };
        TreeView {
            epoch: 0,
            root: id,
            nodes: HashMap::from([(id, Arc::new(root))]),
        }
    }

    pub fn node(&self, id: NodeId) -> &Arc<Node> {
        self.nodes.get(&id).expect("node id present in snapshot")
    }

    /// Root-to-leaf path for a point key.
    pub fn path_to_key(&self, key: &[u8]) -> Vec<NodeId> {
        let mut path = vec![self.root];
        let mut at = self.node(self.root);
        while !at.is_leaf() {
            let next = at.child_for(key);
            path.push(next);
            at = self.node(next);
        }
        path
    }

    pub fn leaf_for(&self, key: &[u8]) -> NodeId {
        *self.path_to_key(key).last().unwrap()
    }

    /// Root-to-leaf paths for every leaf intersecting `range`, left to
    /// right. Shared prefixes are repeated in each path, so callers that
    /// gather per-node state should dedup by node id.
    pub fn route_range(&self, range: &KeyRange) -> Vec<Vec<NodeId>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![self.root]];
        while let Some(path) = stack.pop() {
            let node = self.node(*path.last().unwrap());
            match &node.page {
                NodePage::Leaf => out.push(path),
                NodePage::NonLeaf {
                    routing_keys,
                    children,
                } => {
                    let lo_slot = match &range.lo {
                        Some(lo) => child_slot(routing_keys, lo),
                        None => 0,
                    };
                    let hi_slot = match &range.hi {
                        Some(hi) => routing_keys.partition_point(|k| k.as_slice() < hi),
                        None => routing_keys.len(),
                    };
                    // Reverse push so the stack pops children left-to-right.
                    for slot in (lo_slot..=hi_slot).rev() {
                        let mut p = path.clone();
                        p.push(children[slot]);
                        stack.push(p);
                    }
                }
            }
        }
        out
    }

    /// All leaf ids in key order.
    pub fn leaves_in_order(&self) -> Vec<NodeId> {
        self.route_range(&KeyRange::all())
            .into_iter()
            .map(|p| *p.last().unwrap())
            .collect()
    }

    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut at = self.node(self.root);
        while let NodePage::NonLeaf { children, .. } = &at.page {
            h += 1;
            at = self.node(children[0]);
        }
        h
    }

    /// Structural invariants: reachability, parent links, separator order,
    /// covered-range bookkeeping, fanout, LSM shape, and containment of
    /// every node's data inside its covered range.
    pub fn check_well_formed(&self, fanout: usize) -> std::result::Result<(), String> {
        let root = self
            .nodes
            .get(&self.root)
            .ok_or_else(|| "root id missing from node map".to_string())?;
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }
        if !root.covered.is_all() {
            return Err("root does not cover the full key space".into());
        }
        let mut seen = 0usize;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            seen += 1;
            let node = self
                .nodes
                .get(&id)
                .ok_or_else(|| format!("node {id} referenced but missing"))?;
            if node.id != id {
                return Err(format!("node {id} stores mismatched id {}", node.id));
            }
            if let Some(lsm) = &node.lsm {
                lsm.check_well_formed()
                    .map_err(|e| format!("node {id}: {e}"))?;
                for t in lsm.all_tables() {
                    if !node.covered.contains_span(&t.min_key, &t.max_key) {
                        return Err(format!(
                            "node {id}: table {} [{:?}..{:?}] escapes covered range {:?}",
                            t.id, t.min_key, t.max_key, node.covered
                        ));
                    }
                }
            }
            match &node.page {
                NodePage::Leaf => {
                    if node.lsm.is_some() == node.leaf_data.is_some() {
                        return Err(format!(
                            "leaf {id} must hold exactly one of an LSM or leaf pages"
                        ));
                    }
                    if let Some(store) = &node.leaf_data {
                        let segs = store.segs_snapshot();
                        for w in segs.windows(2) {
                            if w[0].first_key >= w[1].first_key {
                                return Err(format!("leaf {id}: segments out of order"));
                            }
                        }
                        if let Some(first) = segs.first() {
                            if !node.covered.contains(&first.first_key) {
                                return Err(format!("leaf {id}: pages escape covered range"));
                            }
                        }
                    }
                }
                NodePage::NonLeaf {
                    routing_keys,
                    children,
                } => {
                    if node.leaf_data.is_some() {
                        return Err(format!("non-leaf {id} holds leaf pages"));
                    }
                    if children.len() != routing_keys.len() + 1 {
                        return Err(format!("non-leaf {id}: child/key count mismatch"));
                    }
                    if routing_keys.is_empty() {
                        return Err(format!("non-leaf {id} has no separator"));
                    }
                    if routing_keys.len() > fanout {
                        return Err(format!("non-leaf {id} exceeds fanout"));
                    }
                    if routing_keys.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(format!("non-leaf {id}: separators not ascending"));
                    }
                    if let (Some(lo), Some(first)) = (&node.covered.lo, routing_keys.first()) {
                        if first <= lo {
                            return Err(format!("non-leaf {id}: separator below covered range"));
                        }
                    }
                    if let (Some(hi), Some(last)) = (&node.covered.hi, routing_keys.last()) {
                        if last >= hi {
                            return Err(format!("non-leaf {id}: separator above covered range"));
                        }
                    }
                    for (slot, &child_id) in children.iter().enumerate() {
                        let child = self
                            .nodes
                            .get(&child_id)
                            .ok_or_else(|| format!("child {child_id} of {id} missing"))?;
                        if child.parent != Some(id) {
                            return Err(format!(
                                "child {child_id} parent link is {:?}, want {id}",
                                child.parent
                            ));
                        }
                        let want = child_range(&node.covered, routing_keys, slot);
                        if child.covered.lo != want.lo || child.covered.hi != want.hi {
                            return Err(format!(
                                "child {child_id} covers {:?}, want {:?}",
                                child.covered, want
                            ));
                        }
                        stack.push(child_id);
                    }
                }
            }
        }
        if seen != self.nodes.len() {
            return Err(format!(
                "{} nodes reachable but map holds {}",
                seen,
                self.nodes.len()
            ));
        }
        Ok(())
    }
}

/// A mutable copy of a snapshot being reshaped by one maintenance unit.
/// Nothing is visible to readers until the caller freezes it and installs
/// the result; table files replaced along the way are only marked obsolete
/// after that installation succeeds.
pub struct TreeMut {
    pub root: NodeId,
    pub nodes: HashMap<NodeId, Arc<Node>>,
    next_epoch: u64,
    /// Tables superseded by this unit; marked obsolete after install.
    pub obsolete: Vec<TableRef>,
    /// Nodes whose capacity should be re-examined after this unit.
    pub touched: Vec<NodeId>,
}

pub struct FrozenTree {
    pub view: TreeView,
    pub obsolete: Vec<TableRef>,
    pub touched: Vec<NodeId>,
}

impl FrozenTree {
    /// Marks every superseded table obsolete; call only after the new view
    /// has been installed.
    pub fn mark_obsolete(&self) {
        for t in &self.obsolete {
            t.mark_obsolete();
        }
    }
}

impl TreeMut {
    pub fn new(base: &TreeView) -> TreeMut {
        TreeMut {
            root: base.root,
            nodes: base.nodes.clone(),
            next_epoch: base.epoch + 1,
            obsolete: Vec::new(),
            touched: Vec::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Arc<Node> {
        self.nodes.get(&id).expect("node id present in tree edit")
    }

    pub fn put(&mut self, node: Node) {
        self.nodes.insert(node.id, Arc::new(node));
    }

    pub fn remove(&mut self, id: NodeId) {
        self.nodes.remove(&id);
    }

    pub fn freeze(mut self) -> FrozenTree {
        self.touched.sort_unstable();
        self.touched.dedup();
        FrozenTree {
            view: TreeView {
                epoch: self.next_epoch,
                root: self.root,
                nodes: self.nodes,
            },
            obsolete: self.obsolete,
            touched: self.touched,
        }
    }
}

/// Keeps freshly written table files from leaking if an operation fails
/// midway: anything not committed is marked obsolete on drop (and thus
/// deleted once the last handle goes away).
#[derive(Default)]
struct Pending(Vec<TableRef>);

impl Pending {
    fn add(&mut self, tables: &[TableRef]) {
        self.0.extend(tables.iter().cloned());
    }

    fn commit(mut self) {
        self.0.clear();
    }
}

impl Drop for Pending {
    fn drop(&mut self) {
        for t in &self.0 {
            t.mark_obsolete();
        }
    }
}

/// Replaces `old_id` with `replacements` (left to right, separated by
/// `boundaries`) in its parent, creating a new root when the node being
/// replaced is the root. Splits the parent when the splice pushes it past
/// the fanout.
fn splice_children(
    store: &Store,
    m: &mut TreeMut,
    old_id: NodeId,
    replacements: Vec<Node>,
    boundaries: Vec<Key>,
) -> Result<()> {
    debug_assert_eq!(boundaries.len() + 1, replacements.len());
    let old = Arc::clone(m.node(old_id));
    let ids: Vec<NodeId> = replacements.iter().map(|n| n.id).collect();
    match old.parent {
        None => {
            let root_id = store.alloc_node_id();
            let lsm = match store.config.mode {
                Mode::PureBtree => None,
                _ => Some(NodeLsm::new(store.config.effective_root_levels())),
            };
            for mut r in replacements {
                r.parent = Some(root_id);
                m.put(r);
            }
            let over = boundaries.len() > store.config.fanout;
            m.put(Node {
                id: root_id,
                parent: None,
                covered: KeyRange::all(),
                page: NodePage::NonLeaf {
                    routing_keys: boundaries,
                    children: ids,
                },
                page_version: 0,
                lsm,
                leaf_data: None,
                hotspot_free: None,
            });
            m.root = root_id;
            m.remove(old_id);
            if over {
                split_nonleaf(store, m, root_id)?;
            }
            Ok(())
        }
        Some(parent_id) => {
            for mut r in replacements {
                r.parent = Some(parent_id);
                m.put(r);
            }
            let mut parent = m.node(parent_id).as_ref().clone();
            let NodePage::NonLeaf {
                routing_keys,
                children,
            } = &mut parent.page
            else {
                unreachable!("parent of a spliced node is a non-leaf");
            };
            let slot = children
                .iter()
                .position(|&c| c == old_id)
                .expect("old node linked from its parent");
            children.splice(slot..=slot, ids);
            routing_keys.splice(slot..slot, boundaries);
            parent.page_version += 1;
            let over = routing_keys.len() > store.config.fanout;
            m.put(parent);
            m.remove(old_id);
            if over {
                split_nonleaf(store, m, parent_id)?;
            }
            Ok(())
        }
    }
}

/// Splits a non-leaf at its median separator. The node's LSM content is
/// merged once and rewritten cut at the separator so each half receives
/// exactly its share; a root split grows the tree by one level.
pub fn split_nonleaf(store: &Store, m: &mut TreeMut, node_id: NodeId) -> Result<()> {
    let node = Arc::clone(m.node(node_id));
    let (keys, children) = node.routing();
    debug_assert!(keys.len() >= 3, "split of a non-leaf with too few keys");
    let mid = keys.len() / 2;
    let promote = keys[mid].clone();
    let left_id = store.alloc_node_id();
    let right_id = store.alloc_node_id();

    let mut pending = Pending::default();
    let (left_lsm, right_lsm) = match &node.lsm {
        None => (None, None),
        Some(lsm) if lsm.is_empty() => {
            let fresh = || Some(NodeLsm::new(store.config.node_max_levels));
            (fresh(), fresh())
        }
        Some(lsm) => {
            let (streams, _) = lsm.range_streams(b"", &KEY_CEILING)?;
            let merged = MergeIter::new(streams)?;
            let mut w = store.multi_writer(WriteClass::Structure, vec![promote.clone()]);
            for entry in merged {
                w.add(&entry?)?;
            }
            let outputs = w.finish()?;
            pending.add(&outputs);
            m.obsolete.extend(lsm.all_tables().cloned());
            let (lo, hi): (Vec<TableRef>, Vec<TableRef>) = outputs
                .into_iter()
                .partition(|t| t.max_key.as_slice() < promote.as_slice());
            let max = store.config.node_max_levels;
            let at_bottom = |tables: Vec<TableRef>| {
                let mut levels = vec![Vec::new(); max.saturating_sub(1)];
                levels.push(tables);
                Some(NodeLsm::from_parts(levels, max, None))
            };
            (at_bottom(lo), at_bottom(hi))
        }
    };

    let make = |id: NodeId, covered: KeyRange, keys: Vec<Key>, children: Vec<NodeId>, lsm| Node {
        id,
        parent: node.parent,
        covered,
        page: NodePage::NonLeaf {
            routing_keys: keys,
            children,
        },
        page_version: 0,
        lsm,
        leaf_data: None,
        hotspot_free: None,
    };
    let left = make(
        left_id,
        KeyRange {
            lo: node.covered.lo.clone(),
            hi: Some(promote.clone()),
        },
        keys[..mid].to_vec(),
        children[..=mid].to_vec(),
        left_lsm,
    );
    let right = make(
        right_id,
        KeyRange {
            lo: Some(promote.clone()),
            hi: node.covered.hi.clone(),
        },
        keys[mid + 1..].to_vec(),
        children[mid + 1..].to_vec(),
        right_lsm,
    );
    for (half, owner) in [(&left, left_id), (&right, right_id)] {
        let (_, kids) = half.routing();
        for &c in kids {
            let mut child = m.node(c).as_ref().clone();
            child.parent = Some(owner);
            m.put(child);
        }
    }
    m.touched.push(left_id);
    m.touched.push(right_id);
    splice_children(store, m, node_id, vec![left, right], vec![promote])?;
    pending.commit();
    // A burst splice (one leaf splitting into many siblings) can leave a
    // half still over the fanout; keep halving until both fit.
    for id in [left_id, right_id] {
        if m.node(id).routing().0.len() > store.config.fanout {
            split_nonleaf(store, m, id)?;
        }
    }
    Ok(())
}

/// Splits a write-optimized leaf: its whole LSM is merged (newest version
/// per key wins, deletion markers kept) and rewritten as a row of sibling
/// leaves, each holding a single bottom table. A merge that fits in one
/// table is split at its median so the node always divides. Returns the
/// new sibling ids (empty when the leaf had nothing to split).
pub fn split_leaf(store: &Store, m: &mut TreeMut, leaf_id: NodeId) -> Result<Vec<NodeId>> {
    let node = Arc::clone(m.node(leaf_id));
    debug_assert!(node.is_leaf() && node.lsm.is_some());
    let lsm = node.lsm.as_ref().unwrap();
    if lsm.is_empty() {
        return Ok(Vec::new());
    }
    let mut pending = Pending::default();
    let (streams, _) = lsm.range_streams(b"", &KEY_CEILING)?;
    let merged = MergeIter::new(streams)?;
    let mut w = store.multi_writer(WriteClass::Structure, Vec::new());
    for entry in merged {
        w.add(&entry?)?;
    }
    let mut outputs = w.finish()?;
    pending.add(&outputs);
    let old_tables: Vec<TableRef> = lsm.all_tables().cloned().collect();

    if outputs.len() == 1 && outputs[0].entry_count >= 2 {
        let single = outputs.pop().unwrap();
        let halves = median_split_table(store, &single, WriteClass::Structure)?;
        pending.add(&halves);
        single.mark_obsolete();
        outputs = halves;
    }
    if outputs.len() < 2 {
        // Nothing to divide (at most one entry survived): just install the
        // compacted result on the same node.
        let mut slim = node.as_ref().clone();
        let max = lsm.max_levels();
        let mut levels = vec![Vec::new(); max.saturating_sub(1)];
        levels.push(outputs);
        slim.lsm = Some(NodeLsm::from_parts(levels, max, None));
        m.obsolete.extend(old_tables);
        m.put(slim);
        pending.commit();
        return Ok(Vec::new());
    }

    let boundaries: Vec<Key> = outputs[1..].iter().map(|t| t.min_key.clone()).collect();
    let max = store.config.node_max_levels;
    let mut siblings = Vec::with_capacity(outputs.len());
    for (i, t) in outputs.iter().enumerate() {
        let covered = KeyRange {
            lo: if i == 0 {
                node.covered.lo.clone()
            } else {
                Some(boundaries[i - 1].clone())
            },
            hi: if i + 1 == outputs.len() {
                node.covered.hi.clone()
            } else {
                Some(boundaries[i].clone())
            },
        };
        let mut levels = vec![Vec::new(); max.saturating_sub(1)];
        levels.push(vec![Arc::clone(t)]);
        siblings.push(Node {
            id: store.alloc_node_id(),
            parent: node.parent,
            covered,
            page: NodePage::Leaf,
            page_version: 0,
            lsm: Some(NodeLsm::from_parts(levels, max, None)),
            leaf_data: None,
            hotspot_free: None,
        });
    }
    let ids: Vec<NodeId> = siblings.iter().map(|n| n.id).collect();
    m.obsolete.extend(old_tables);
    m.touched.extend(ids.iter().copied());
    splice_children(store, m, leaf_id, siblings, boundaries)?;
    pending.commit();
    Ok(ids)
}

fn median_split_table(
    store: &Store,
    table: &TableRef,
    class: WriteClass,
) -> Result<Vec<TableRef>> {
    debug_assert!(table.entry_count >= 2);
    let half = table.entry_count.div_ceil(2);
    let mut a = store.new_table_writer(class)?;
    let mut b = store.new_table_writer(class)?;
    for (i, entry) in table.scan_all()?.enumerate() {
        let entry = entry?;
        if (i as u64) < half {
            a.add(&entry)?;
        } else {
            b.add(&entry)?;
        }
    }
    Ok(vec![a.finish()?, b.finish()?])
}

/// Moves a non-leaf's bottom LSM level down into its children in one
/// atomic edit. Tables that already lie inside a single child interval are
/// handed over by pointer (zero bytes rewritten); tables straddling a
/// separator are rewritten cut at the separators, which is the case guard-
/// aligned compaction exists to avoid. Children that are write-optimized
/// receive the tables as fresh level-one runs; read-optimized children
/// absorb the entries into their pages.
pub fn node_empty(store: &Store, m: &mut TreeMut, node_id: NodeId) -> Result<()> {
    let node = Arc::clone(m.node(node_id));
    let Some(lsm) = &node.lsm else {
        return Ok(());
    };
    if lsm.is_empty() {
        return Ok(());
    }
    let (keys, children) = node.routing();
    let (keys, children) = (keys.to_vec(), children.to_vec());
    let (bottom, rest) = lsm.extract_bottom();

    let mut pending = Pending::default();
    let mut assignments: Vec<Vec<TableRef>> = vec![Vec::new(); children.len()];
    for t in bottom {
        let lo_slot = child_slot(&keys, &t.min_key);
        let hi_slot = child_slot(&keys, &t.max_key);
        if lo_slot == hi_slot {
            assignments[lo_slot].push(t);
            continue;
        }
        // Straddler: rewrite it cut at the separators it crosses.
        let mut w = store.multi_writer(WriteClass::MigrationRewrite, keys.clone());
        for entry in t.scan_all()? {
            w.add(&entry?)?;
        }
        let parts = w.finish()?;
        pending.add(&parts);
        for p in parts {
            let slot = child_slot(&keys, &p.min_key);
            debug_assert_eq!(slot, child_slot(&keys, &p.max_key));
            assignments[slot].push(p);
        }
        m.obsolete.push(t);
    }

    // Record the drained node before handing anything out: absorbing into a
    // read-optimized child can overflow it, and the resulting splice may
    // reshape (or split away) this very node. Those edits must see it
    // without its bottom level, and nothing here may touch it afterwards.
    let mut drained = node.as_ref().clone();
    drained.lsm = Some(rest);
    m.put(drained);

    for (slot, tables) in assignments.into_iter().enumerate() {
        if tables.is_empty() {
            continue;
        }
        let child_id = children[slot];
        let child = Arc::clone(m.node(child_id));
        if let Some(child_lsm) = &child.lsm {
            let mut next = child.as_ref().clone();
            next.lsm = Some(child_lsm.add_runs(tables));
            // The child gained data of unknown heat; any hotspot
            // certification it held no longer applies.
            next.hotspot_free = None;
            m.put(next);
            m.touched.push(child_id);
        } else {
            let mut streams: Vec<EntryStream> = Vec::with_capacity(tables.len());
            for t in &tables {
                streams.push(Box::new(t.scan_all()?));
            }
            merge_into_adapted_leaf(store, m, child_id, streams)?;
            m.obsolete.extend(tables);
        }
    }
    pending.commit();
    Ok(())
}

/// Turns a write-optimized leaf into an internal node whose children each
/// hold a slice of its bottom level — the structural half of both the
/// initial tree bootstrap and the "grow down" leaf transform. When the
/// bottom tables are disjoint this moves only pointers and reads no table
/// data; an overlapping or single-table bottom is first flattened or
/// median-split. The node keeps its identity (and any upper LSM levels).
/// Returns the new children ids.
pub fn grow_down(store: &Store, m: &mut TreeMut, node_id: NodeId) -> Result<Vec<NodeId>> {
    let node = Arc::clone(m.node(node_id));
    debug_assert!(node.is_leaf());
    let lsm = node
        .lsm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("grow_down on a pageified leaf".into()))?;
    if lsm.is_empty() {
        return Err(Error::InvalidArgument(
            "grow_down on an empty leaf".into(),
        ));
    }
    let bottom_is_runs = lsm.occupied_levels() == 1 && lsm.levels()[0].len() > 1;
    let (mut bottom, rest) = lsm.extract_bottom();
    bottom.sort_by(|a, b| a.min_key.cmp(&b.min_key));
    let overlapping = bottom_is_runs
        && bottom
            .windows(2)
            .any(|w| w[0].max_key.as_slice() >= w[1].min_key.as_slice());

    let mut pending = Pending::default();
    if overlapping {
        // Level-one runs may overlap; merge them into a disjoint row first.
        let mut streams: Vec<EntryStream> = Vec::with_capacity(bottom.len());
        for t in &bottom {
            streams.push(Box::new(t.scan_all()?));
        }
        let merged = MergeIter::new(streams)?;
        let mut w = store.multi_writer(WriteClass::Structure, Vec::new());
        for entry in merged {
            w.add(&entry?)?;
        }
        let outputs = w.finish()?;
        pending.add(&outputs);
        m.obsolete.extend(bottom);
        bottom = outputs;
    }
    if bottom.len() == 1 {
        if bottom[0].entry_count < 2 {
            return Err(Error::InvalidArgument(
                "leaf too small to grow downward".into(),
            ));
        }
        let single = bottom.pop().unwrap();
        let halves = median_split_table(store, &single, WriteClass::Structure)?;
        pending.add(&halves);
        if pending.0.iter().any(|p| Arc::ptr_eq(p, &single)) {
            single.mark_obsolete();
        } else {
            m.obsolete.push(single);
        }
        bottom = halves;
    }

    // One child per table, unless that would exceed the fanout.
    let k = bottom.len().min(store.config.fanout);
    let base = bottom.len() / k;
    let extra = bottom.len() % k;
    let mut groups: Vec<Vec<TableRef>> = Vec::with_capacity(k);
    let mut it = bottom.into_iter();
    for g in 0..k {
        let take = base + usize::from(g < extra);
        groups.push(it.by_ref().take(take).collect());
    }

    let boundaries: Vec<Key> = groups[1..]
        .iter()
        .map(|g| g[0].min_key.clone())
        .collect();
    let max = store.config.node_max_levels;
    let mut child_ids = Vec::with_capacity(k);
    for (i, group) in groups.into_iter().enumerate() {
        let covered = KeyRange {
            lo: if i == 0 {
                node.covered.lo.clone()
            } else {
                Some(boundaries[i - 1].clone())
            },
            hi: if i < boundaries.len() {
                Some(boundaries[i].clone())
            } else {
                node.covered.hi.clone()
            },
        };
        let id = store.alloc_node_id();
        let mut levels = vec![Vec::new(); max.saturating_sub(1)];
        levels.push(group);
        m.put(Node {
            id,
            parent: Some(node_id),
            covered,
            page: NodePage::Leaf,
            page_version: 0,
            lsm: Some(NodeLsm::from_parts(levels, max, None)),
            leaf_data: None,
            hotspot_free: None,
        });
        child_ids.push(id);
        m.touched.push(id);
    }

    let mut grown = node.as_ref().clone();
    grown.page = NodePage::NonLeaf {
        routing_keys: boundaries,
        children: child_ids.clone(),
    };
    grown.page_version += 1;
    grown.lsm = Some(rest);
    m.put(grown);
    pending.commit();
    Ok(child_ids)
}

/// Converts a write-optimized leaf into read-optimized page form: its LSM
/// is merged once, deletion markers dropped (nothing below a leaf can
/// resurrect), and the survivors packed into page rows. A result larger
/// than the fill target becomes a row of sibling leaves.
pub fn leaf_merge_to_pages(store: &Store, m: &mut TreeMut, leaf_id: NodeId) -> Result<()> {
    let node = Arc::clone(m.node(leaf_id));
    debug_assert!(node.is_leaf());
    let Some(lsm) = &node.lsm else {
        return Ok(()); // already page form
    };
    let (streams, _) = lsm.range_streams(b"", &KEY_CEILING)?;
    let merged = strip_tombstones(MergeIter::new(streams)?);
    let fill = store.config.leaf_fill_target;

    // Stream the merge into page groups so memory stays bounded by one
    // group regardless of how much LSM content the leaf holds.
    let mut stores: Vec<(Key, Arc<LeafStore>)> = Vec::new();
    let mut current: Vec<Entry> = Vec::new();
    let mut bytes = 0usize;
    for entry in merged {
        let entry = entry?;
        let len = entry.encoded_len();
        if bytes > 0 && bytes + len > fill {
            let segs = build_segs(store, &current)?;
            stores.push((
                current[0].key.clone(),
                Arc::new(LeafStore::from_segs(store, segs)),
            ));
            current.clear();
            bytes = 0;
        }
        bytes += len;
        current.push(entry);
    }
    if !current.is_empty() {
        let segs = build_segs(store, &current)?;
        stores.push((
            current[0].key.clone(),
            Arc::new(LeafStore::from_segs(store, segs)),
        ));
    }

    m.obsolete.extend(lsm.all_tables().cloned());
    if stores.len() <= 1 {
        let mut adapted = node.as_ref().clone();
        adapted.lsm = None;
        adapted.leaf_data = Some(
            stores
                .pop()
                .map(|(_, s)| s)
                .unwrap_or_else(|| Arc::new(LeafStore::new_empty(store))),
        );
        adapted.hotspot_free = None;
        m.put(adapted);
        return Ok(());
    }

    let boundaries: Vec<Key> = stores[1..].iter().map(|(k, _)| k.clone()).collect();
    let mut siblings = Vec::with_capacity(stores.len());
    let last = stores.len() - 1;
    for (i, (_, leaf_store)) in stores.into_iter().enumerate() {
        let covered = KeyRange {
            lo: if i == 0 {
                node.covered.lo.clone()
            } else {
                Some(boundaries[i - 1].clone())
            },
            hi: if i == last {
                node.covered.hi.clone()
            } else {
                Some(boundaries[i].clone())
            },
        };
        siblings.push(Node {
            id: store.alloc_node_id(),
            parent: node.parent,
            covered,
            page: NodePage::Leaf,
            page_version: 0,
            lsm: None,
            leaf_data: Some(leaf_store),
            hotspot_free: None,
        });
    }
    splice_children(store, m, leaf_id, siblings, boundaries)
}

/// Merges fresher entry streams into a read-optimized leaf. Content that
/// still fits is rebuilt in place (no tree edit, no reader disruption);
/// overflow retires the leaf under its own latch and replaces it with a
/// row of siblings. Also serves as the leaf split when called with no
/// extra streams.
pub fn merge_into_adapted_leaf(
    store: &Store,
    m: &mut TreeMut,
    leaf_id: NodeId,
    extra: Vec<EntryStream>,
) -> Result<()> {
    let node = Arc::clone(m.node(leaf_id));
    let leaf_store = node
        .leaf_data
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("page merge into a non-adapted leaf".into()))?;
    let cap = store.config.leaf_cap_bytes as u64;
    match leaf_store.merge_streams(store, extra, cap)? {
        MergeOutcome::Rebuilt(_) => Ok(()),
        MergeOutcome::Overflow(entries) => {
            let groups = cut_into_leaves(entries, store.config.leaf_fill_target);
            debug_assert!(groups.len() >= 2);
            let boundaries: Vec<Key> = groups[1..].iter().map(|g| g[0].key.clone()).collect();
            let last = groups.len() - 1;
            let mut siblings = Vec::with_capacity(groups.len());
            for (i, group) in groups.into_iter().enumerate() {
                let covered = KeyRange {
                    lo: if i == 0 {
                        node.covered.lo.clone()
                    } else {
                        Some(boundaries[i - 1].clone())
                    },
                    hi: if i == last {
                        node.covered.hi.clone()
                    } else {
                        Some(boundaries[i].clone())
                    },
                };
                siblings.push(Node {
                    id: store.alloc_node_id(),
                    parent: node.parent,
                    covered,
                    page: NodePage::Leaf,
                    page_version: 0,
                    lsm: None,
                    leaf_data: Some(Arc::new(LeafStore::build(store, &group)?)),
                    hotspot_free: None,
                });
            }
            splice_children(store, m, leaf_id, siblings, boundaries)
        }
    }
}

/// Per-key sequence spans of one table.
fn table_seq_spans(t: &TableRef) -> Result<Vec<(Key, Seq)>> {
    let mut out = Vec::with_capacity(t.entry_count as usize);
    for entry in t.scan_all()? {
        let e = entry?;
        out.push((e.key, e.seq));
    }
    Ok(out)
}

/// Audits the freshness ordering across the whole snapshot by rescanning
/// every table and leaf page: for each key, every version stored in a node
/// must be strictly newer than any version of the same key stored deeper
/// (lower LSM level of the same node, or anywhere in the subtree below).
/// `overlay_floor` carries the oldest in-memory version per key, which
/// must likewise be newer than anything on disk. Returns a description of
/// the first violation found.
pub fn check_freshness(
    store: &Store,
    view: &TreeView,
    overlay_floor: &HashMap<Key, Seq>,
) -> Result<std::result::Result<(), String>> {
    fn descend(
        store: &Store,
        view: &TreeView,
        id: NodeId,
        mut ceiling: HashMap<Key, Seq>,
    ) -> Result<std::result::Result<(), String>> {
        let node = view.node(id);
        if let Some(lsm) = &node.lsm {
            for (li, level) in lsm.levels().iter().enumerate() {
                let mut level_min: HashMap<Key, Seq> = HashMap::new();
                for t in level {
                    for (key, seq) in table_seq_spans(t)? {
                        if let Some(&limit) = ceiling.get(&key) {
                            if seq >= limit {
                                return Ok(Err(format!(
                                    "node {id} level {li} holds {key:?}@{seq}, but a \
                                     shallower copy has sequence {limit}"
                                )));
                            }
                        }
                        let m = level_min.entry(key).or_insert(seq);
                        *m = (*m).min(seq);
                    }
                }
                for (key, seq) in level_min {
                    let c = ceiling.entry(key).or_insert(seq);
                    *c = (*c).min(seq);
                }
            }
        }
        if let Some(leaf) = &node.leaf_data {
            for e in leaf.all_entries(store)? {
                if let Some(&limit) = ceiling.get(&e.key) {
                    if e.seq >= limit {
                        return Ok(Err(format!(
                            "leaf {id} page holds {:?}@{}, but a shallower copy has \
                             sequence {limit}",
                            e.key, e.seq
                        )));
                    }
                }
            }
        }
        if let NodePage::NonLeaf { children, .. } = &node.page {
            for &c in children {
                if let Err(e) = descend(store, view, c, ceiling.clone())? {
                    return Ok(Err(e));
                }
            }
        }
        Ok(Ok(()))
    }

    // In-memory data sits above everything: seed the ceiling with it.
    descend(store, view, view.root, overlay_floor.clone())
}

/// Merges every data source in the snapshot into the live key/value state
/// (newest version wins, deletions applied). Diagnostic path used by
/// audits and tests — the engine's read path routes instead of scanning.
pub fn dump_entries(store: &Store, view: &TreeView) -> Result<Vec<Entry>> {
    let mut streams: Vec<EntryStream> = Vec::new();
    let mut stack = vec![view.root];
    while let Some(id) = stack.pop() {
        let node = view.node(id);
        if let Some(lsm) = &node.lsm {
            let (s, _) = lsm.range_streams(b"", &KEY_CEILING)?;
            streams.extend(s);
        }
        if let Some(leaf) = &node.leaf_data {
            streams.push(crate::merge::vec_stream(leaf.all_entries(store)?));
        }
        if let NodePage::NonLeaf { children, .. } = &node.page {
            stack.extend(children.iter().copied());
        }
    }
    strip_tombstones(MergeIter::new(streams)?).collect()
}
