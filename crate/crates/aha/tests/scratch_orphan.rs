use std::collections::HashSet;
use std::time::{Duration, Instant};

use aha::{Engine, EngineConfig, EngineState, KeyRange, LevelPolicy, Mode, WorkloadHint};
use tempfile::TempDir;

fn key(i: u32) -> Vec<u8> {
    format!("k{i:06}").into_bytes()
}

fn val(i: u32, tag: u32) -> Vec<u8> {
    format!("v{i:06}.{tag:04}------------").into_bytes()
}

fn small_config(dir: &std::path::Path) -> EngineConfig {
    let mut c = EngineConfig::new(dir);
    c.mode = Mode::Aha;
    c.background_maintenance = false;
    c.memtable_budget = 2 << 10;
    c.sstable_target = 1 << 10;
    c.page_size = 256;
    c.pool_pages = 1024;
    c.leaf_cap_bytes = 4 << 10;
    c.leaf_fill_target = 2 << 10;
    c.fanout = 4;
    c.level_policy = LevelPolicy {
        l1_run_trigger: 2,
        size_ratio: 2,
    };
    c
}

#[test]
fn orphan_hunt() {
    for round in 0..40 {
        let dir = TempDir::new().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.background_maintenance = true;
        let engine = Engine::open(cfg).unwrap();

        let total = 2000u32;
        for i in 0..total {
            engine.put(&key(i), &val(i, 7)).unwrap();
        }
        engine
            .set_hotspots(vec![KeyRange::bounded(key(500), key(800))])
            .unwrap();
        engine.transition(WorkloadHint::ReadHeavy);

        let windows = [(500u32, 800u32), (480, 560), (700, 950), (0, 64)];
        std::thread::scope(|scope| {
            for &(lo, hi) in &windows {
                let engine = &engine;
                scope.spawn(move || {
                    let baseline = engine.range(&key(lo), &key(hi)).unwrap();
                    for pass in 0..300 {
                        let again = engine.range(&key(lo), &key(hi)).unwrap();
                        assert_eq!(again, baseline, "window [{lo},{hi}) pass {pass}");
                    }
                });
            }
        });

        let deadline = Instant::now() + Duration::from_secs(30);
        while engine.state() != EngineState::R {
            assert!(Instant::now() < deadline, "stalled");
            engine.range(&key(500), &key(800)).unwrap();
            std::thread::sleep(Duration::from_millis(10));
        }
        let view = engine.debug_view();
        let mut reachable: HashSet<u64> = HashSet::new();
        let mut stack = vec![view.root];
        while let Some(id) = stack.pop() {
            reachable.insert(id);
            if let aha::tree::NodePage::NonLeaf { children, .. } = &view.nodes[&id].page {
                stack.extend(children.iter().copied());
            }
        }
        let orphans: Vec<_> = view
            .nodes
            .values()
            .filter(|n| !reachable.contains(&n.id))
            .collect();
        if !orphans.is_empty() {
            println!("=== round {round}: {} orphans ===", orphans.len());
            for n in orphans {
                println!(
                    "orphan id={} parent={:?} covered=[{:?}..{:?}] kind={} adapted={} lsm_tables={} hotspot_free={:?}",
                    n.id,
                    n.parent,
                    n.covered.lo.as_ref().map(|k| String::from_utf8_lossy(k).into_owned()),
                    n.covered.hi.as_ref().map(|k| String::from_utf8_lossy(k).into_owned()),
                    if n.is_leaf() { "leaf" } else { "nonleaf" },
                    n.is_adapted_leaf(),
                    n.lsm.as_ref().map(|l| l.all_tables().count()).unwrap_or(0),
                    n.hotspot_free,
                );
                if let aha::tree::NodePage::NonLeaf { children, routing_keys } = &n.page {
                    println!(
                        "  children={:?} keys={:?} (children in map: {:?})",
                        children,
                        routing_keys.iter().map(|k| String::from_utf8_lossy(k).into_owned()).collect::<Vec<_>>(),
                        children.iter().map(|c| view.nodes.contains_key(c)).collect::<Vec<_>>(),
                    );
                }
                // Who (if anyone) still references this orphan as a parent?
                let kids_claiming: Vec<u64> = view
                    .nodes
                    .values()
                    .filter(|k| k.parent == Some(n.id))
                    .map(|k| k.id)
                    .collect();
                println!("  nodes claiming it as parent: {kids_claiming:?}");
            }
            panic!("orphans found on round {round}");
        }
        engine.close().unwrap();
    }
}
