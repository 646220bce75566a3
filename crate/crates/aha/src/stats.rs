//! Shared I/O accounting and per-query statistics.
//!
//! Physical byte counters are grouped by the reason the bytes moved so that
//! write amplification can be reported and so tests can assert that specific
//! operations (table migrations between nodes, metadata-only bootstraps) do
//! not touch data at all.

use std::sync::atomic::{AtomicU64, Ordering};

/// Why table-file bytes were written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteClass {
    /// Memtable flush producing a fresh run.
    Flush,
    /// LSM-internal compaction output.
    Compact,
    /// A bottom-level table had to be rewritten during a migration because it
    /// straddled a child boundary. Zero on the aligned fast path.
    MigrationRewrite,
    /// Structural reorganization output: splits, leaf transforms, hotspot
    /// extraction rewrites.
    Structure,
}

#[derive(Debug, Default)]
pub struct IoCounters {
    logical_bytes: AtomicU64,
    flush_bytes: AtomicU64,
    compact_bytes: AtomicU64,
    migration_rewrite_bytes: AtomicU64,
    structure_bytes: AtomicU64,
    page_write_bytes: AtomicU64,
    page_read_bytes: AtomicU64,
    manifest_bytes: AtomicU64,
    data_read_bytes: AtomicU64,
    tables_written: AtomicU64,
    tables_deleted: AtomicU64,
}

impl IoCounters {
    pub fn new() -> IoCounters {
        IoCounters::default()
    }

    pub fn add_logical(&self, n: usize) {
        self.logical_bytes.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn add_table_write(&self, class: WriteClass, n: u64) {
        let c = match class {
            WriteClass::Flush => &self.flush_bytes,
            WriteClass::Compact => &self.compact_bytes,
            WriteClass::MigrationRewrite => &self.migration_rewrite_bytes,
            WriteClass::Structure => &self.structure_bytes,
        };
        c.fetch_add(n, Ordering::Relaxed);
        self.tables_written.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_page_write(&self, n: u64) {
        self.page_write_bytes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_page_read(&self, n: u64) {
        self.page_read_bytes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_manifest_write(&self, n: u64) {
        self.manifest_bytes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_data_read(&self, n: u64) {
        self.data_read_bytes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn note_table_deleted(&self) {
        self.tables_deleted.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            logical_bytes: self.logical_bytes.load(Ordering::Relaxed),
            flush_bytes: self.flush_bytes.load(Ordering::Relaxed),
            compact_bytes: self.compact_bytes.load(Ordering::Relaxed),
            migration_rewrite_bytes: self.migration_rewrite_bytes.load(Ordering::Relaxed),
            structure_bytes: self.structure_bytes.load(Ordering::Relaxed),
            page_write_bytes: self.page_write_bytes.load(Ordering::Relaxed),
            page_read_bytes: self.page_read_bytes.load(Ordering::Relaxed),
            manifest_bytes: self.manifest_bytes.load(Ordering::Relaxed),
            data_read_bytes: self.data_read_bytes.load(Ordering::Relaxed),
            tables_written: self.tables_written.load(Ordering::Relaxed),
            tables_deleted: self.tables_deleted.load(Ordering::Relaxed),
        }
    }
}

/// Point-in-time copy of the counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoSnapshot {
    pub logical_bytes: u64,
    pub flush_bytes: u64,
    pub compact_bytes: u64,
    pub migration_rewrite_bytes: u64,
    pub structure_bytes: u64,
    pub page_write_bytes: u64,
    pub page_read_bytes: u64,
    pub manifest_bytes: u64,
    pub data_read_bytes: u64,
    pub tables_written: u64,
    pub tables_deleted: u64,
}

impl IoSnapshot {
    pub fn physical_write_bytes(&self) -> u64 {
        self.flush_bytes
            + self.compact_bytes
            + self.migration_rewrite_bytes
            + self.structure_bytes
            + self.page_write_bytes
            + self.manifest_bytes
    }

    /// Write amplification: physical bytes written per logical byte admitted.
    /// Reported as at least 1.0 once any logical write happened (an engine
    /// that buffered everything in memory still owes one copy).
    pub fn write_amp(&self) -> f64 {
        if self.logical_bytes == 0 {
            return 1.0;
        }
        let wa = self.physical_write_bytes() as f64 / self.logical_bytes as f64;
        wa.max(1.0)
    }
}

/// Per-query cost counters returned alongside read results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    /// Node LSM structures consulted along the routed paths.
    pub nodelsm_probes: u64,
    /// Table files actually opened for reading by this query.
    pub sstables_touched: u64,
    /// Leaf pages fetched through the buffer pool.
    pub pages_read: u64,
    /// Result entries returned to the caller.
    pub entries_emitted: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_amp_floors_at_one() {
        let io = IoCounters::new();
        assert_eq!(io.snapshot().write_amp(), 1.0);
        io.add_logical(1000);
        assert_eq!(io.snapshot().write_amp(), 1.0);
        io.add_table_write(WriteClass::Flush, 3000);
        let snap = io.snapshot();
        assert_eq!(snap.physical_write_bytes(), 3000);
        assert!((snap.write_amp() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn classes_accumulate_separately() {
        let io = IoCounters::new();
        io.add_table_write(WriteClass::Flush, 10);
        io.add_table_write(WriteClass::Compact, 20);
        io.add_table_write(WriteClass::MigrationRewrite, 30);
        io.add_table_write(WriteClass::Structure, 40);
        io.add_page_write(50);
        io.add_manifest_write(60);
        let s = io.snapshot();
        assert_eq!(s.flush_bytes, 10);
        assert_eq!(s.compact_bytes, 20);
        assert_eq!(s.migration_rewrite_bytes, 30);
        assert_eq!(s.structure_bytes, 40);
        assert_eq!(s.page_write_bytes, 50);
        assert_eq!(s.manifest_bytes, 60);
        assert_eq!(s.physical_write_bytes(), 210);
        assert_eq!(s.tables_written, 4);
    }
}
