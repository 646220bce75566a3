//! Engine configuration.

use std::path::PathBuf;
use std::time::Duration;

/// How the engine organizes data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Adaptive: write-optimized batching with query-driven read optimization.
    Aha,
    /// Never builds a tree; the root LSM grows without a level limit.
    PureLsm,
    /// Never batches; every write goes straight to a sorted leaf page.
    PureBtree,
}

/// How a write-optimized leaf is reorganized into sorted pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafStrategy {
    /// Grow downward first (bottom tables become children, one table each),
    /// then convert each small child separately. Default.
    DownSplit,
    /// Merge the whole leaf LSM in one pass into a run of sibling leaves.
    SideSplit,
}

/// Compaction shape of one node-resident LSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelPolicy {
    /// Number of first-level runs that triggers a merge into the next level.
    pub l1_run_trigger: usize,
    /// Byte-capacity growth factor between consecutive deeper levels.
    pub size_ratio: u64,
}

impl Default for LevelPolicy {
    fn default() -> Self {
        LevelPolicy {
            l1_run_trigger: 4,
            size_ratio: 10,
        }
    }
}

impl LevelPolicy {
    /// Byte capacity of the level at `index` (0-based, so index 1 is the
    /// first sorted level). Level 0 is run-count-triggered, not byte-capped.
    pub fn level_cap_bytes(&self, index: usize, sstable_target: u64) -> u64 {
        debug_assert!(index >= 1);
        let base = self.l1_run_trigger as u64 * sstable_target;
        base.saturating_mul(self.size_ratio.saturating_pow(index as u32 - 1))
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    pub mode: Mode,
    /// Level limit of the root LSM (soft: exceeded temporarily under load).
    pub root_max_levels: usize,
    /// Level limit of every non-root node LSM (hard: overflow forces
    /// structural maintenance).
    pub node_max_levels: usize,
    /// Byte budget of one memtable.
    pub memtable_budget: usize,
    /// Preferred table-file size produced by flushes and compactions.
    pub sstable_target: u64,
    pub page_size: usize,
    /// Buffer pool capacity in pages.
    pub pool_pages: usize,
    pub leaf_strategy: LeafStrategy,
    pub level_policy: LevelPolicy,
    /// Maximum routing keys per non-leaf node.
    pub fanout: usize,
    /// A leaf holding sorted pages past this many bytes is split.
    pub leaf_cap_bytes: usize,
    /// Fill target for leaves produced by reorganization, leaving headroom
    /// for in-place growth before the next split.
    pub leaf_fill_target: usize,
    /// Spawn the two maintenance roles on open. Disable for deterministic
    /// tests that drive maintenance manually via the step functions.
    pub background_maintenance: bool,
    /// Upper bound a blocked writer waits for the flush role to free the
    /// immutable memtable slot.
    pub rotation_wait: Duration,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> EngineConfig {
        EngineConfig {
            data_dir: data_dir.into(),
            mode: Mode::Aha,
            root_max_levels: 3,
            node_max_levels: 2,
            memtable_budget: 4 << 20,
            sstable_target: 2 << 20,
            page_size: 4096,
            pool_pages: 4096,
            leaf_strategy: LeafStrategy::DownSplit,
            level_policy: LevelPolicy::default(),
            fanout: 256,
            leaf_cap_bytes: 64 << 10,
            leaf_fill_target: 32 << 10,
            background_maintenance: true,
            rotation_wait: Duration::from_secs(60),
        }
    }

    /// Effective root level limit: unbounded when no tree will ever exist.
    pub fn effective_root_levels(&self) -> usize {
        match self.mode {
            Mode::PureLsm => usize::MAX,
            _ => self.root_max_levels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults() {
        let c = EngineConfig::new("/tmp/x");
        assert_eq!(c.root_max_levels, 3);
        assert_eq!(c.node_max_levels, 2);
        assert_eq!(c.memtable_budget, 4 * 1024 * 1024);
        assert_eq!(c.sstable_target, 2 * 1024 * 1024);
        assert_eq!(c.page_size, 4096);
        assert_eq!(c.pool_pages, 4096);
        assert_eq!(c.leaf_strategy, LeafStrategy::DownSplit);
        assert_eq!(c.level_policy.l1_run_trigger, 4);
        assert_eq!(c.level_policy.size_ratio, 10);
    }

    #[test]
    fn level_caps_scale_by_ratio() {
        let p = LevelPolicy::default();
        let t = 2 << 20;
        assert_eq!(p.level_cap_bytes(1, t), 4 * t); // first sorted level
        assert_eq!(p.level_cap_bytes(2, t), 40 * t);
        assert_eq!(p.level_cap_bytes(3, t), 400 * t);
    }
}
