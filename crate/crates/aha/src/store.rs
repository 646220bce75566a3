//! Shared on-disk resources: the data directory, table-file id allocation,
//! the page store, and I/O counters. Every maintenance routine works against
//! a [`Store`] so the pieces stay testable without a full engine.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::config::EngineConfig;
use crate::entry::{Entry, Key};
use crate::error::Result;
use crate::pager::Pager;
use crate::sstable::{table_file_name, TableFile, TableId, TableRef, TableWriter};
use crate::stats::{IoCounters, WriteClass};

#[derive(Debug)]
pub struct Store {
    pub dir: PathBuf,
    pub config: EngineConfig,
    pub io: Arc<IoCounters>,
    pub pager: Pager,
    next_file: AtomicU64,
    next_node: AtomicU64,
}

impl Store {
    pub fn open(config: EngineConfig) -> Result<Store> {
        let dir = config.data_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(e, &dir))?;
        let io = Arc::new(IoCounters::new());
        let pager = Pager::open(&dir, config.page_size, config.pool_pages, Arc::clone(&io))?;
        Ok(Store {
            dir,
            config,
            io,
            pager,
            next_file: AtomicU64::new(1),
            next_node: AtomicU64::new(1),
        })
    }

    pub fn alloc_table_id(&self) -> TableId {
        self.next_file.fetch_add(1, Ordering::Relaxed)
    }

    pub fn alloc_node_id(&self) -> u64 {
        self.next_node.fetch_add(1, Ordering::Relaxed)
    }

    /// Raises the id floors after manifest recovery.
    pub fn reserve_ids(&self, next_file: u64, next_node: u64) {
        self.next_file.fetch_max(next_file, Ordering::Relaxed);
        self.next_node.fetch_max(next_node, Ordering::Relaxed);
    }

    pub fn next_ids(&self) -> (u64, u64) {
        (
            self.next_file.load(Ordering::Relaxed),
            self.next_node.load(Ordering::Relaxed),
        )
    }

    pub fn table_path(&self, id: TableId) -> PathBuf {
        self.dir.join(table_file_name(id))
    }

    pub fn new_table_writer(&self, class: WriteClass) -> Result<TableWriter> {
        let id = self.alloc_table_id();
        TableWriter::create(id, self.table_path(id), Arc::clone(&self.io), class)
    }

    pub fn open_table(&self, id: TableId) -> Result<TableRef> {
        TableFile::open(id, self.table_path(id), Arc::clone(&self.io))
    }

    /// Writes one table from an ascending entry iterator; `None` if empty.
    pub fn write_table(
        &self,
        class: WriteClass,
        entries: impl Iterator<Item = Result<Entry>>,
    ) -> Result<Option<TableRef>> {
        let mut w = None;
        for entry in entries {
            let entry = entry?;
            w.get_or_insert(self.new_table_writer(class)?).add(&entry)?;
        }
        w.map(TableWriter::finish).transpose()
    }

    pub fn multi_writer(&self, class: WriteClass, cut_keys: Vec<Key>) -> MultiWriter<'_> {
        MultiWriter {
            store: self,
            class,
            target_bytes: self.config.sstable_target,
            cut_keys,
            current: None,
            interval_end: None,
            done: Vec::new(),
        }
    }
}

/// Sequentially writes an ascending entry stream into one or more table
/// files, starting a new file whenever the current one reaches the size
/// target or the next key crosses one of `cut_keys`. With cut keys
/// `g_1 < g_2 < ...` every produced file lies inside a single interval
/// `[g_i, g_{i+1})` (or before `g_1`), which is what keeps bottom-level
/// tables migratable without rewriting.
pub struct MultiWriter<'a> {
    store: &'a Store,
    class: WriteClass,
    target_bytes: u64,
    cut_keys: Vec<Key>,
    current: Option<TableWriter>,
    /// First cut key strictly above the current file's first key.
    interval_end: Option<usize>,
    done: Vec<TableRef>,
}

impl MultiWriter<'_> {
    pub fn add(&mut self, entry: &Entry) -> Result<()> {
        let crosses_cut = match (self.current.as_ref(), self.interval_end) {
            (Some(_), Some(ci)) => {
                ci < self.cut_keys.len() && entry.key.as_slice() >= self.cut_keys[ci].as_slice()
            }
            _ => false,
        };
        let over_target = self
            .current
            .as_ref()
            .map(|w| self.target_bytes > 0 && w.body_len() >= self.target_bytes)
            .unwrap_or(false);
        if crosses_cut || over_target {
            self.rotate()?;
        }
        if self.current.is_none() {
            self.current = Some(self.store.new_table_writer(self.class)?);
            self.interval_end = Some(
                self.cut_keys
                    .partition_point(|g| g.as_slice() <= entry.key.as_slice()),
            );
        }
        self.current.as_mut().unwrap().add(entry)
    }

    fn rotate(&mut self) -> Result<()> {
        if let Some(w) = self.current.take() {
            if w.entry_count() > 0 {
                self.done.push(w.finish()?);
            }
        }
        self.interval_end = None;
        Ok(())
    }

    pub fn finish(mut self) -> Result<Vec<TableRef>> {
        self.rotate()?;
        Ok(std::mem::take(&mut self.done))
    }
}
