//! Oracle replay verification.
//!
//! The full operation stream is applied both to the engine (concurrently,
//! from N partitioned user threads) and to an in-memory ordered map
//! (last-write-wins, tombstone-aware). Read phases contain no writes, so
//! engine content is static while scans run and every scan can be compared
//! exactly. After the last phase the entire keyspace is swept and compared
//! entry by entry. The first divergence aborts the run and is reported
//! with enough context to replay it.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use aha::{Engine, Key};
use anyhow::Result;
use parking_lot::Mutex;

use crate::runner::RunPlan;
use crate::workload::{thread_stream, value_bytes, Op, PhaseKind, WorkloadSpec};

pub struct VerifyReport {
    pub ops_applied: u64,
    pub reads_checked: u64,
    /// Human-readable description of the first divergence, if any.
    pub divergence: Option<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

struct FailSlot {
    slot: Mutex<Option<String>>,
    tripped: AtomicBool,
}

impl FailSlot {
    fn new() -> FailSlot {
        FailSlot {
            slot: Mutex::new(None),
            tripped: AtomicBool::new(false),
        }
    }

    fn trip(&self, detail: String) {
        let mut g = self.slot.lock();
        if g.is_none() {
            *g = Some(detail);
        }
        self.tripped.store(true, Ordering::SeqCst);
    }

    fn tripped(&self) -> bool {
        self.tripped.load(Ordering::SeqCst)
    }
}

/// Replays the plan against the engine and the oracle. `fault_drop_every`
/// silently drops every nth engine write — the negative control proving
/// the comparison actually bites.
pub fn verify(plan: &RunPlan, fault_drop_every: Option<u64>) -> Result<VerifyReport> {
    plan.validate()?;
    let engine = Engine::open(plan.engine.clone())?;
    if let Some(n) = fault_drop_every {
        engine.set_drop_every(n);
    }
    let mut oracle: BTreeMap<u64, u64> = BTreeMap::new();
    let fail = FailSlot::new();
    let ops_applied = AtomicU64::new(0);
    let reads_checked = AtomicU64::new(0);
    let mut hotspots_installed = None;

    for (pi, phase) in plan.spec.phases.iter().enumerate() {
        if fail.tripped() {
            break;
        }
        let spec = plan.spec_for_phase(pi);
        crate::runner::signal_phase(&engine, &spec, phase.kind, &mut hotspots_installed)?;

        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for t in 0..plan.threads {
                let engine = &engine;
                let oracle = &oracle;
                let fail = &fail;
                let ops_applied = &ops_applied;
                let reads_checked = &reads_checked;
                let spec = spec.clone();
                handles.push(scope.spawn(move || -> Result<()> {
                    let stream =
                        thread_stream(&spec, pi, t, plan.threads, plan.hotspot_writes_only);
                    for (i, op) in stream.enumerate() {
                        if fail.tripped() {
                            return Ok(());
                        }
                        ops_applied.fetch_add(1, Ordering::Relaxed);
                        match op {
                            Op::Put { key, tag } => {
                                engine.put(
                                    &spec.encode_key(key),
                                    &value_bytes(key, tag, spec.value_len),
                                )?;
                            }
                            Op::Scan { start, len } => {
                                let got =
                                    engine.range(&spec.encode_key(start), &spec.encode_key(start + len))?;
                                reads_checked.fetch_add(1, Ordering::Relaxed);
                                let want: Vec<(u64, u64)> = oracle
                                    .range(start..start + len)
                                    .map(|(&k, &v)| (k, v))
                                    .collect();
                                if let Some(d) = diff_scan(&spec, start, len, &want, &got) {
                                    fail.trip(format!(
                                        "phase {pi} ({}) thread {t} op {i}: {d}",
                                        phase.kind.label()
                                    ));
                                    return Ok(());
                                }
                            }
                        }
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("verifier thread panicked")?;
            }
            Ok(())
        })?;

        // Writes reach the oracle only after the phase joins; each key is
        // owned by one thread, so cross-thread order cannot matter.
        if matches!(phase.kind, PhaseKind::Load | PhaseKind::WriteHeavy) {
            for t in 0..plan.threads {
                for op in thread_stream(&spec, pi, t, plan.threads, plan.hotspot_writes_only) {
                    if let Op::Put { key, tag } = op {
                        oracle.insert(key, tag);
                    }
                }
            }
        }
        if let Err(e) = engine.check_invariants() {
            fail.trip(format!("phase {pi} boundary: invariant audit failed: {e}"));
        }
    }

    if !fail.tripped() {
        final_sweep(&engine, &plan.spec, &oracle, &fail)?;
    }
    engine.close()?;
    Ok(VerifyReport {
        ops_applied: ops_applied.into_inner(),
        reads_checked: reads_checked.into_inner(),
        divergence: fail.slot.into_inner(),
    })
}

/// Exact comparison of one scan result against the oracle slice.
fn diff_scan(
    spec: &WorkloadSpec,
    start: u64,
    len: u64,
    want: &[(u64, u64)],
    got: &[(Key, Vec<u8>)],
) -> Option<String> {
    let header = format!("scan [{start}, {})", start + len);
    for (i, pair) in want.iter().zip(got.iter()).enumerate() {
        let ((wk, wtag), (gk, gv)) = pair;
        let wkey = spec.encode_key(*wk);
        if &wkey != gk {
            return Some(format!(
                "{header} position {i}: expected key {wk}, engine returned {:?}",
                String::from_utf8_lossy(gk)
            ));
        }
        let wval = value_bytes(*wk, *wtag, spec.value_len);
        if &wval != gv {
            return Some(format!(
                "{header} position {i} key {wk}: value mismatch (expected tag {wtag:#x})"
            ));
        }
    }
    if want.len() != got.len() {
        return Some(format!(
            "{header}: oracle holds {} entries, engine returned {}",
            want.len(),
            got.len()
        ));
    }
    None
}

/// Sweeps the whole keyspace in chunks and compares every entry.
fn final_sweep(
    engine: &Engine,
    spec: &WorkloadSpec,
    oracle: &BTreeMap<u64, u64>,
    fail: &FailSlot,
) -> Result<()> {
    let chunk = 65_536u64;
    let mut at = 0u64;
    while at < spec.key_count {
        let hi = (at + chunk).min(spec.key_count);
        let got = engine.range(&spec.encode_key(at), &spec.encode_key(hi))?;
        let want: Vec<(u64, u64)> = oracle.range(at..hi).map(|(&k, &v)| (k, v)).collect();
        if let Some(d) = diff_scan(spec, at, hi - at, &want, &got) {
            fail.trip(format!("final sweep: {d}"));
            return Ok(());
        }
        at = hi;
    }
    Ok(())
}
