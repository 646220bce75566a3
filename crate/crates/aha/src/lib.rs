//! An embedded, disk-based, ordered key-value index that adapts its physical
//! layout to the workload. Writes are batched through memtables and per-node
//! LSM structures (write-optimized); ranges that queries keep touching are
//! reorganized into sorted leaf pages (read-optimized); sustained writes flip
//! the hot ranges back to batching. See `engine::Engine` for the public API.

pub mod adapt;
pub mod config;
pub mod engine;
pub mod entry;
pub mod error;
pub mod leafpage;
pub mod lsm;
pub mod manifest;
pub mod memtable;
pub mod merge;
pub mod pager;
pub mod sstable;
pub mod stats;
pub mod store;
pub mod tree;

pub use adapt::WorkloadHint;
pub use config::{EngineConfig, LeafStrategy, LevelPolicy, Mode};
pub use engine::{Engine, EngineState, EngineStats};
pub use entry::{Entry, EntryKind, Key, KeyRange};
pub use error::{Error, Result};
pub use stats::{IoSnapshot, QueryStats};
