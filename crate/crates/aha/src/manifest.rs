//! Catalog persistence: `MANIFEST.aha`.
//!
//! The manifest is a line-oriented snapshot of everything needed to reopen
//! a data directory: id watermarks, the tree layout, which table files
//! make up each node's LSM levels, and the page runs of read-optimized
//! leaves. It is rewritten wholesale (to a temp file, then renamed over
//! the old one) so a crash leaves either the old or the new catalog,
//! never a blend. The final line seals everything above it with a CRC.
//!
//! Binary keys are hex-encoded so the format stays greppable; `-` stands
//! for "none" wherever a field is optional.
//!
//! Reopening is deliberately conservative about adaptation: hot ranges are
//! preserved, but per-node certificates are dropped and the epoch is
//! advanced, so a fresh read-optimization pass re-proves every node before
//! queries trust it again.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::entry::{Key, KeyRange};
use crate::error::{Error, Result};
use crate::leafpage::{LeafStore, Seg};
use crate::lsm::NodeLsm;
use crate::pager::PageId;
use crate::sstable::{table_file_name, TableFile, TableRef};
use crate::store::Store;
use crate::tree::{Node, NodeId, NodePage, TreeView};

pub const MANIFEST_NAME: &str = "MANIFEST.aha";
const FORMAT_LINE: &str = "aha-manifest 1";

/// Everything a reopened engine needs from the catalog.
pub struct Catalog {
    pub seq: u64,
    pub epoch: u64,
    pub hotspots: Vec<KeyRange>,
    pub view: TreeView,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[i * 2..i * 2 + 2], 16).ok())
        .collect()
}

fn opt_key(k: &Option<Key>) -> String {
    match k {
        Some(k) => hex(k),
        None => "-".into(),
    }
}

fn opt_u64(v: Option<u64>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "-".into(),
    }
}

/// Writes the catalog atomically. The caller must ensure the snapshot is
/// stable while this runs (no concurrent structural edits) and that dirty
/// pages have been flushed.
pub fn save(
    store: &Store,
    view: &TreeView,
    seq: u64,
    epoch: u64,
    hotspots: &[KeyRange],
) -> Result<()> {
    let mut out = String::new();
    let (next_file, next_node) = store.next_ids();
    let _ = writeln!(out, "{FORMAT_LINE}");
    let _ = writeln!(out, "seq {seq}");
    let _ = writeln!(out, "epoch {epoch}");
    let _ = writeln!(out, "next_file {next_file}");
    let _ = writeln!(out, "next_node {next_node}");
    let _ = writeln!(out, "next_page {}", store.pager.next_page_id());
    let _ = writeln!(out, "root {}", view.root);
    for h in hotspots {
        let _ = writeln!(out, "hotspot {} {}", opt_key(&h.lo), opt_key(&h.hi));
    }
    let mut ids: Vec<NodeId> = view.nodes.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        let node = view.node(id);
        let kind = if node.is_leaf() { "leaf" } else { "nonleaf" };
        let _ = writeln!(
            out,
            "node {id} {} {kind} {}",
            opt_u64(node.parent),
            node.page_version
        );
        let _ = writeln!(
            out,
            "covered {id} {} {}",
            opt_key(&node.covered.lo),
            opt_key(&node.covered.hi)
        );
        if let NodePage::NonLeaf {
            routing_keys,
            children,
        } = &node.page
        {
            let keys: Vec<String> = routing_keys.iter().map(|k| hex(k)).collect();
            let kids: Vec<String> = children.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "keys {id} {}", keys.join(","));
            let _ = writeln!(out, "children {id} {}", kids.join(","));
        }
        if let Some(lsm) = &node.lsm {
            let _ = writeln!(
                out,
                "lsm {id} {} {}",
                lsm.max_levels(),
                opt_u64(lsm.guards_version())
            );
            for (li, level) in lsm.levels().iter().enumerate() {
                let tids: Vec<String> = level.iter().map(|t| t.id.to_string()).collect();
                let _ = writeln!(out, "level {id} {li} {}", tids.join(","));
            }
        }
        if let Some(leaf) = &node.leaf_data {
            let _ = writeln!(out, "leafdata {id}");
            for seg in leaf.segs_snapshot() {
                let pages: Vec<String> = seg.pages.iter().map(u64::to_string).collect();
                let _ = writeln!(
                    out,
                    "seg {id} {} {} {} {}",
                    hex(&seg.first_key),
                    seg.entry_count,
                    seg.byte_len,
                    pages.join(",")
                );
            }
        }
    }
    let crc = crc32fast::hash(out.as_bytes());
    let _ = writeln!(out, "crc {crc:08x}");

    let path = store.dir.join(MANIFEST_NAME);
    let tmp = store.dir.join(format!("{MANIFEST_NAME}.tmp"));
    std::fs::write(&tmp, out.as_bytes()).map_err(|e| Error::io(e, &tmp))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(e, &path))?;
    store.io.add_manifest_write(out.len() as u64);
    Ok(())
}

struct Parser<'a> {
    path: &'a Path,
    line_no: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, detail: impl Into<String>) -> Result<T> {
        Err(Error::CorruptManifest {
            path: self.path.to_path_buf(),
            line: self.line_no,
            detail: detail.into(),
        })
    }

    fn num<T: std::str::FromStr>(&self, field: &str, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| Error::CorruptManifest {
                path: self.path.to_path_buf(),
                line: self.line_no,
                detail: format!("bad {field}: {s:?}"),
            })
    }

    fn opt_num(&self, field: &str, s: &str) -> Result<Option<u64>> {
        if s == "-" {
            Ok(None)
        } else {
            self.num(field, s).map(Some)
        }
    }

    fn key(&self, field: &str, s: &str) -> Result<Key> {
        match unhex(s) {
            Some(k) => Ok(k),
            None => self.fail(format!("bad {field}: {s:?}")),
        }
    }

    fn opt_key(&self, field: &str, s: &str) -> Result<Option<Key>> {
        if s == "-" {
            Ok(None)
        } else {
            self.key(field, s).map(Some)
        }
    }

    fn list<T>(&self, field: &str, s: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|p| {
                f(p).ok_or_else(|| Error::CorruptManifest {
                    path: self.path.to_path_buf(),
                    line: self.line_no,
                    detail: format!("bad {field} element {p:?}"),
                })
            })
            .collect()
    }
}

#[derive(Default)]
struct NodeDraft {
    parent: Option<NodeId>,
    is_leaf: bool,
    page_version: u64,
    covered: Option<KeyRange>,
    keys: Option<Vec<Key>>,
    children: Option<Vec<NodeId>>,
    lsm: Option<(usize, Option<u64>)>,
    levels: Vec<(usize, Vec<u64>)>,
    leafdata: bool,
    segs: Vec<Seg>,
}

/// Loads and validates the catalog; `Ok(None)` when the directory has no
/// manifest yet (a fresh database).
pub fn load(store: &Store) -> Result<Option<Catalog>> {
    let path = store.dir.join(MANIFEST_NAME);
    let raw = match std::fs::read(&path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(e, &path)),
    };
    let text = match std::str::from_utf8(&raw) {
        Ok(t) => t,
        Err(_) => {
            return Err(Error::CorruptManifest {
                path,
                line: 0,
                detail: "not valid UTF-8".into(),
            })
        }
    };

    // Seal check first: the last line must be a CRC of everything above.
    let body_end = match text.trim_end_matches('\n').rfind('\n') {
        Some(at) => at + 1,
        None => {
            return Err(Error::CorruptManifest {
                path,
                line: 1,
                detail: "missing checksum line".into(),
            })
        }
    };
    let (body, seal) = text.split_at(body_end);
    let seal = seal.trim_end();
    let want = match seal.strip_prefix("crc ") {
        Some(h) => u32::from_str_radix(h, 16).ok(),
        None => None,
    };
    let Some(want) = want else {
        return Err(Error::CorruptManifest {
            path,
            line: body.lines().count() + 1,
            detail: format!("malformed checksum line {seal:?}"),
        });
    };
    let got = crc32fast::hash(body.as_bytes());
    if got != want {
        return Err(Error::CorruptManifest {
            path,
            line: body.lines().count() + 1,
            detail: format!("checksum mismatch: stored {want:08x}, computed {got:08x}"),
        });
    }

    let mut p = Parser {
        path: &path,
        line_no: 0,
    };
    let mut seq = None;
    let mut epoch = None;
    let mut next_file = None;
    let mut next_node = None;
    let mut next_page = None;
    let mut root = None;
    let mut hotspots = Vec::new();
    let mut drafts: HashMap<NodeId, NodeDraft> = HashMap::new();

    for (i, line) in body.lines().enumerate() {
        p.line_no = i + 1;
        if i == 0 {
            if line != FORMAT_LINE {
                return p.fail(format!("unrecognized header {line:?}"));
            }
            continue;
        }
        let mut parts = line.split(' ');
        let tag = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        let want_args = |n: usize| -> Result<()> {
            if rest.len() == n {
                Ok(())
            } else {
                p.fail(format!("{tag} expects {n} fields, found {}", rest.len()))
            }
        };
        match tag {
            "seq" => {
                want_args(1)?;
                seq = Some(p.num::<u64>("seq", rest[0])?);
            }
            "epoch" => {
                want_args(1)?;
                epoch = Some(p.num::<u64>("epoch", rest[0])?);
            }
            "next_file" => {
                want_args(1)?;
                next_file = Some(p.num::<u64>("next_file", rest[0])?);
            }
            "next_node" => {
                want_args(1)?;
                next_node = Some(p.num::<u64>("next_node", rest[0])?);
            }
            "next_page" => {
                want_args(1)?;
                next_page = Some(p.num::<u64>("next_page", rest[0])?);
            }
            "root" => {
                want_args(1)?;
                root = Some(p.num::<u64>("root", rest[0])?);
            }
            "hotspot" => {
                want_args(2)?;
                hotspots.push(KeyRange {
                    lo: p.opt_key("hotspot lower bound", rest[0])?,
                    hi: p.opt_key("hotspot upper bound", rest[1])?,
                });
            }
            "node" => {
                want_args(4)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let parent = p.opt_num("parent", rest[1])?;
                let is_leaf = match rest[2] {
                    "leaf" => true,
                    "nonleaf" => false,
                    other => return p.fail(format!("bad node kind {other:?}")),
                };
                let page_version = p.num("page version", rest[3])?;
                let d = drafts.entry(id).or_default();
                d.parent = parent;
                d.is_leaf = is_leaf;
                d.page_version = page_version;
            }
            "covered" => {
                want_args(3)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let d = drafts.entry(id).or_default();
                d.covered = Some(KeyRange {
                    lo: p.opt_key("covered lower bound", rest[1])?,
                    hi: p.opt_key("covered upper bound", rest[2])?,
                });
            }
            "keys" => {
                want_args(2)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let keys = p.list("routing keys", rest[1], |s| unhex(s))?;
                drafts.entry(id).or_default().keys = Some(keys);
            }
            "children" => {
                want_args(2)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let kids = p.list("children", rest[1], |s| s.parse().ok())?;
                drafts.entry(id).or_default().children = Some(kids);
            }
            "lsm" => {
                want_args(3)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let max: usize = p.num("level limit", rest[1])?;
                let guards = p.opt_num("separator version", rest[2])?;
                drafts.entry(id).or_default().lsm = Some((max, guards));
            }
            "level" => {
                want_args(3)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let li: usize = p.num("level index", rest[1])?;
                let tids = p.list("table ids", rest[2], |s| s.parse().ok())?;
                drafts.entry(id).or_default().levels.push((li, tids));
            }
            "leafdata" => {
                want_args(1)?;
                let id: NodeId = p.num("node id", rest[0])?;
                drafts.entry(id).or_default().leafdata = true;
            }
            "seg" => {
                want_args(5)?;
                let id: NodeId = p.num("node id", rest[0])?;
                let first_key = p.key("segment key", rest[1])?;
                let entry_count: u32 = p.num("entry count", rest[2])?;
                let byte_len: u32 = p.num("byte length", rest[3])?;
                let pages: Vec<PageId> = p.list("pages", rest[4], |s| s.parse().ok())?;
                if pages.is_empty() {
                    return p.fail("segment without pages");
                }
                drafts.entry(id).or_default().segs.push(Seg {
                    first_key,
                    entry_count,
                    byte_len,
                    pages,
                });
            }
            other => return p.fail(format!("unknown record {other:?}")),
        }
    }

    let seq = seq.ok_or_else(|| missing(&path, "seq"))?;
    let epoch = epoch.ok_or_else(|| missing(&path, "epoch"))?;
    let next_file = next_file.ok_or_else(|| missing(&path, "next_file"))?;
    let next_node = next_node.ok_or_else(|| missing(&path, "next_node"))?;
    let next_page = next_page.ok_or_else(|| missing(&path, "next_page"))?;
    let root = root.ok_or_else(|| missing(&path, "root"))?;

    // Open every referenced table once, sharing handles between levels.
    let mut tables: HashMap<u64, TableRef> = HashMap::new();
    let mut used_pages: HashSet<PageId> = HashSet::new();
    let mut nodes: HashMap<NodeId, Arc<Node>> = HashMap::new();
    for (id, d) in drafts {
        let covered = match d.covered {
            Some(c) => c,
            None => {
                return Err(Error::CorruptManifest {
                    path,
                    line: 0,
                    detail: format!("node {id} has no covered range"),
                })
            }
        };
        let page = if d.is_leaf {
            NodePage::Leaf
        } else {
            match (d.keys, d.children) {
                (Some(routing_keys), Some(children)) => NodePage::NonLeaf {
                    routing_keys,
                    children,
                },
                _ => {
                    return Err(Error::CorruptManifest {
                        path,
                        line: 0,
                        detail: format!("interior node {id} lacks keys or children"),
                    })
                }
            }
        };
        let lsm = match d.lsm {
            None => None,
            Some((max, guards)) => {
                let depth = d.levels.iter().map(|(li, _)| li + 1).max().unwrap_or(1);
                let mut levels: Vec<Vec<TableRef>> = vec![Vec::new(); depth];
                for (li, tids) in d.levels {
                    for tid in tids {
                        let t = match tables.get(&tid) {
                            Some(t) => Arc::clone(t),
                            None => {
                                let t = TableFile::open(
                                    tid,
                                    store.table_path(tid),
                                    Arc::clone(&store.io),
                                )?;
                                tables.insert(tid, Arc::clone(&t));
                                t
                            }
                        };
                        levels[li].push(t);
                    }
                }
                Some(NodeLsm::from_parts(levels, max, guards))
            }
        };
        let leaf_data = if d.leafdata {
            let mut segs = d.segs;
            segs.sort_by(|a, b| a.first_key.cmp(&b.first_key));
            for s in &segs {
                used_pages.extend(s.pages.iter().copied());
            }
            Some(Arc::new(LeafStore::from_segs(store, segs)))
        } else {
            None
        };
        nodes.insert(
            id,
            Arc::new(Node {
                id,
                parent: d.parent,
                covered,
                page,
                page_version: d.page_version,
                lsm,
                leaf_data,
                // Certificates never survive a reopen; see module docs.
                hotspot_free: None,
            }),
        );
    }

    let view = TreeView {
        epoch: 0,
        root,
        nodes,
    };
    if let Err(detail) = view.check_well_formed(store.config.fanout) {
        return Err(Error::CorruptManifest {
            path,
            line: 0,
            detail: format!("catalog is internally inconsistent: {detail}"),
        });
    }

    store.reserve_ids(next_file, next_node);
    store.pager.set_next_page_id(next_page);
    let free: Vec<PageId> = (0..next_page).filter(|p| !used_pages.contains(p)).collect();
    store.pager.reset_free_list(free);
    Ok(Some(Catalog {
        seq,
        epoch,
        hotspots,
        view,
    }))
}

fn missing(path: &Path, field: &str) -> Error {
    Error::CorruptManifest {
        path: path.to_path_buf(),
        line: 0,
        detail: format!("missing {field} record"),
    }
}

/// Files a data directory may legitimately contain.
pub fn is_engine_file(name: &str) -> bool {
    name == MANIFEST_NAME
        || name == crate::pager::PAGE_FILE_NAME
        || (name.starts_with("sst_") && name.ends_with(".aha"))
}

/// Deletes table files in `dir` that the catalog no longer references
/// (left over when a process stopped between producing files and being
/// torn down). Returns how many were removed.
pub fn sweep_orphans(store: &Store, view: &TreeView) -> Result<usize> {
    let mut live: HashSet<String> = HashSet::new();
    for node in view.nodes.values() {
        if let Some(lsm) = &node.lsm {
            for t in lsm.all_tables() {
                live.insert(table_file_name(t.id));
            }
        }
    }
    let mut removed = 0;
    let entries = std::fs::read_dir(&store.dir).map_err(|e| Error::io(e, &store.dir))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(e, &store.dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.starts_with("sst_") && name.ends_with(".aha") && !live.contains(name) {
            let path: PathBuf = entry.path();
            std::fs::remove_file(&path).map_err(|e| Error::io(e, &path))?;
            removed += 1;
        }
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::entry::Entry;
    use crate::merge::vec_stream;
    use crate::stats::WriteClass;
    use crate::tree::{dump_entries, merge_into_adapted_leaf, TreeMut};
    use std::path::Path;

    fn test_config(dir: &Path) -> EngineConfig {
        let mut c = EngineConfig::new(dir);
        c.sstable_target = 4 << 10;
        c.page_size = 512;
        c.pool_pages = 64;
        c.leaf_cap_bytes = 8 << 10;
        c.leaf_fill_target = 4 << 10;
        c.fanout = 8;
        c
    }

    fn key(i: u32) -> Key {
        format!("key{i:07}").into_bytes()
    }

    fn put(i: u32, seq: u64) -> Entry {
        Entry::put(key(i), seq, vec![b'v'; 24])
    }

    /// Builds a store with a real multi-node tree: interior root with an
    /// LSM, write-form leaves, and one adapted (page) leaf.
    fn build(dir: &Path) -> (Store, TreeView, Vec<Entry>) {
        let store = Store::open(test_config(dir)).unwrap();
        let bottoms: Vec<TableRef> = (0..3)
            .map(|g| {
                store
                    .write_table(
                        WriteClass::Flush,
                        (g * 100..g * 100 + 50).map(|i| Ok(put(i, 1 + i as u64))),
                    )
                    .unwrap()
                    .unwrap()
            })
            .collect();
        let mut all: Vec<Entry> = (0..3)
            .flat_map(|g| (g * 100..g * 100 + 50).map(|i| put(i, 1 + i as u64)))
            .collect();
        let view = TreeView::initial(&store);
        let mut m = TreeMut::new(&view);
        let mut root = m.node(view.root).as_ref().clone();
        root.lsm = Some(NodeLsm::from_parts(vec![vec![], vec![], bottoms], 3, None));
        m.put(root);
        let view = m.freeze().view;
        let mut m = TreeMut::new(&view);
        crate::tree::grow_down(&store, &mut m, view.root).unwrap();
        let view = m.freeze().view;

        // Adapt the middle leaf and push a couple of fresh entries into it.
        let mid = view.leaf_for(&key(150));
        let mut m = TreeMut::new(&view);
        crate::tree::leaf_merge_to_pages(&store, &mut m, mid).unwrap();
        let extra = vec![put(150, 9_001), put(155, 9_002)];
        all.extend(extra.clone());
        merge_into_adapted_leaf(&store, &mut m, mid, vec![vec_stream(extra)]).unwrap();
        let frozen = m.freeze();
        frozen.mark_obsolete();
        let view = frozen.view;

        // Root keeps an upper-level run too.
        let run = store
            .write_table(
                WriteClass::Flush,
                (40..60).map(|i| Ok(put(i, 20_000 + i as u64))),
            )
            .unwrap()
            .unwrap();
        all.extend((40..60).map(|i| put(i, 20_000 + i as u64)));
        let mut m = TreeMut::new(&view);
        let mut root = m.node(view.root).as_ref().clone();
        root.lsm = Some(root.lsm.as_ref().unwrap().add_runs(vec![run]));
        m.put(root);
        let view = m.freeze().view;
        view.check_well_formed(store.config.fanout).unwrap();
        (store, view, all)
    }

    #[test]
    fn round_trip_restores_structure_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let (store, view, all) = build(dir.path());
        let hotspots = vec![KeyRange::bounded(key(100), key(200))];
        store.pager.flush_all().unwrap();
        save(&store, &view, 31_337, 5, &hotspots).unwrap();
        let want = dump_entries(&store, &view).unwrap();
        let (next_file, next_node) = store.next_ids();
        let next_page = store.pager.next_page_id();
        drop(view);
        drop(store);

        let store2 = Store::open(test_config(dir.path())).unwrap();
        let cat = load(&store2).unwrap().expect("manifest present");
        assert_eq!(cat.seq, 31_337);
        assert_eq!(cat.epoch, 5);
        assert_eq!(cat.hotspots, hotspots);
        cat.view.check_well_formed(store2.config.fanout).unwrap();
        assert_eq!(cat.view.height(), 2);
        // Identity is preserved: ids, watermarks, per-node shape.
        assert_eq!(store2.next_ids(), (next_file, next_node));
        assert_eq!(store2.pager.next_page_id(), next_page);
        for (id, node) in &cat.view.nodes {
            assert!(node.hotspot_free.is_none(), "certificates must not survive");
            assert_eq!(node.id, *id);
        }
        let got = dump_entries(&store2, &cat.view).unwrap();
        assert_eq!(got, want);
        assert_eq!(got.len(), {
            use std::collections::BTreeMap;
            let mut m: BTreeMap<Key, Entry> = BTreeMap::new();
            for e in &all {
                match m.get(&e.key) {
                    Some(old) if old.seq >= e.seq => {}
                    _ => {
                        m.insert(e.key.clone(), e.clone());
                    }
                }
            }
            m.len()
        });
        // New page allocations skip every page the catalog still uses.
        let reloaded_mid = cat.view.leaf_for(&key(150));
        let used: HashSet<PageId> = cat
            .view
            .node(reloaded_mid)
            .leaf_data
            .as_ref()
            .unwrap()
            .segs_snapshot()
            .iter()
            .flat_map(|s| s.pages.clone())
            .collect();
        for _ in 0..64 {
            assert!(!used.contains(&store2.pager.alloc()));
        }
    }

    #[test]
    fn missing_manifest_means_fresh_database() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(test_config(dir.path())).unwrap();
        assert!(load(&store).unwrap().is_none());
    }

    #[test]
    fn corruption_is_reported_with_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let (store, view, _) = build(dir.path());
        save(&store, &view, 1, 0, &[]).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        drop(view);
        drop(store);

        // Flip one byte in the middle: the seal must catch it.
        let mut raw = std::fs::read(&path).unwrap();
        let mid = raw.len() / 2;
        raw[mid] ^= 0x01;
        std::fs::write(&path, &raw).unwrap();
        let store = Store::open(test_config(dir.path())).unwrap();
        match load(&store) {
            Err(Error::CorruptManifest { detail, .. }) => {
                assert!(detail.contains("checksum"), "got {detail:?}");
            }
            Err(other) => panic!("want checksum corruption, got {other:?}"),
            Ok(_) => panic!("corrupt manifest loaded successfully"),
        }
        drop(store);

        // Truncate away the seal entirely.
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() / 3]).unwrap();
        let store = Store::open(test_config(dir.path())).unwrap();
        assert!(matches!(
            load(&store),
            Err(Error::CorruptManifest { .. })
        ));
    }

    #[test]
    fn unknown_records_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let (store, view, _) = build(dir.path());
        save(&store, &view, 1, 0, &[]).unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        drop(view);
        drop(store);

        // Splice a bogus record as line 3 and re-seal so only the parser
        // (not the checksum) can object.
        let raw = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = raw.lines().collect();
        lines.pop(); // old seal
        lines.insert(2, "gremlin 42");
        let mut body = lines.join("\n");
        body.push('\n');
        let seal = format!("crc {:08x}\n", crc32fast::hash(body.as_bytes()));
        std::fs::write(&path, body + &seal).unwrap();

        let store = Store::open(test_config(dir.path())).unwrap();
        match load(&store) {
            Err(Error::CorruptManifest { line, detail, .. }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("gremlin"));
            }
            Err(other) => panic!("want a line-3 parse error, got {other:?}"),
            Ok(_) => panic!("bogus record accepted"),
        }
    }

    #[test]
    fn missing_table_file_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let (store, view, _) = build(dir.path());
        save(&store, &view, 1, 0, &[]).unwrap();
        // Remove one referenced table file.
        let victim = view
            .nodes
            .values()
            .find_map(|n| n.lsm.as_ref().and_then(|l| l.all_tables().next()))
            .unwrap()
            .path
            .clone();
        drop(view);
        drop(store);
        std::fs::remove_file(&victim).unwrap();
        let store = Store::open(test_config(dir.path())).unwrap();
        match load(&store) {
            Err(Error::Io { path: Some(p), .. }) => assert_eq!(p, victim),
            Err(other) => panic!("want an io error naming {victim:?}, got {other:?}"),
            Ok(_) => panic!("load succeeded without {victim:?}"),
        }
    }

    #[test]
    fn sweep_removes_only_unreferenced_tables() {
        let dir = tempfile::tempdir().unwrap();
        let (store, view, _) = build(dir.path());
        // Fabricate two orphans: a finished table not in the catalog and a
        // foreign file that must be left alone.
        let orphan = store
            .write_table(WriteClass::Flush, std::iter::once(Ok(put(999, 1))))
            .unwrap()
            .unwrap();
        let orphan_path = orphan.path.clone();
        drop(orphan); // not marked obsolete: the file stays
        assert!(orphan_path.exists());
        std::fs::write(dir.path().join("notes.txt"), b"keep me").unwrap();

        let removed = sweep_orphans(&store, &view).unwrap();
        assert_eq!(removed, 1);
        assert!(!orphan_path.exists());
        assert!(dir.path().join("notes.txt").exists());
        // Everything still referenced survives and still opens.
        for node in view.nodes.values() {
            if let Some(lsm) = &node.lsm {
                for t in lsm.all_tables() {
                    assert!(t.path.exists());
                }
            }
        }
    }
}
