//! Workload execution and metrics.
//!
//! `run` drives one engine through the spec's phases with N user threads,
//! signaling workload transitions at phase boundaries, and records one row
//! per completed operation: wall-clock nanoseconds, engine state, and the
//! per-query LSM probe count. Throughput is reported as a running mean
//! over a 100-operation window. The final content hash makes repeated
//! runs comparable outcome-by-outcome with timings excluded.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use aha::{Engine, EngineConfig, EngineState, IoSnapshot, WorkloadHint};
use anyhow::{ensure, Context, Result};
use parking_lot::Mutex;

use crate::workload::{thread_stream, value_bytes, HotspotDef, Op, PhaseKind, WorkloadSpec};

/// Everything one benchmark or verification run needs.
pub struct RunPlan {
    pub spec: WorkloadSpec,
    pub engine: EngineConfig,
    pub threads: usize,
    /// Metrics CSV destination; per-op rows are written only when set.
    pub out: Option<PathBuf>,
    /// Confine write-phase targets to the hot ranges.
    pub hotspot_writes_only: bool,
    /// Hotspot replacements applied right before the given phase index —
    /// the drift experiment. An empty list keeps the spec's hotspots.
    pub hotspot_overrides: Vec<(usize, Vec<HotspotDef>)>,
}

impl RunPlan {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        ensure!(self.threads >= 1, "at least one user thread is required");
        ensure!(
            self.spec.key_count >= self.threads as u64,
            "fewer keys than threads breaks the write partitioning"
        );
        Ok(())
    }

    /// The spec with any hotspot override for `phase` applied; used by both
    /// the runner and the verifier so their streams agree.
    pub fn spec_for_phase(&self, phase: usize) -> WorkloadSpec {
        let mut spec = self.spec.clone();
        for (at, hs) in &self.hotspot_overrides {
            if *at <= phase {
                spec.hotspots = hs.clone();
            }
        }
        spec
    }
}

pub struct PhaseReport {
    pub kind: PhaseKind,
    pub ops: u64,
    pub wall: Duration,
    /// Whole-phase throughput, ops/s.
    pub tput: f64,
    /// Throughput over the second half of the phase, past warm-up and (for
    /// read phases) usually past adaptation.
    pub steady_tput: f64,
    /// First operation index (global) at which the engine reported the
    /// read-optimized state, for read-heavy phases that reached it.
    pub adapt_complete_op: Option<u64>,
    /// Wall time from phase start until the read-optimized state.
    pub adapt_wall: Option<Duration>,
    pub end_state: EngineState,
}

pub struct RunReport {
    pub phases: Vec<PhaseReport>,
    /// Engine IO counters at workload end (before close-time flushes).
    pub io: IoSnapshot,
    pub write_amp: f64,
    /// CRC of the full final content: same spec + seed + config ⇒ same hash.
    pub result_hash: u32,
    pub final_entries: u64,
    pub final_state: EngineState,
}

struct Row {
    wall_ns: u64,
    state: EngineState,
    probes: u64,
}

struct Recorder {
    rows: Vec<Row>,
    t0: Instant,
}

impl Recorder {
    fn record(&mut self, state: EngineState, probes: u64) {
        // Timestamp under the lock so rows are monotone in wall time.
        let wall_ns = self.t0.elapsed().as_nanos() as u64;
        self.rows.push(Row {
            wall_ns,
            state,
            probes,
        });
    }
}

pub fn format_report(report: &RunReport) -> String {
    let mut out = String::new();
    for (i, p) in report.phases.iter().enumerate() {
        out.push_str(&format!(
            "phase {i} {} ops={} wall_ms={:.1} tput={:.0} steady_tput={:.0}",
            p.kind.label(),
            p.ops,
            p.wall.as_secs_f64() * 1e3,
            p.tput,
            p.steady_tput,
        ));
        if let Some(op) = p.adapt_complete_op {
            out.push_str(&format!(
                " adapt_complete_op={op} adapt_ms={:.1}",
                p.adapt_wall.unwrap_or_default().as_secs_f64() * 1e3
            ));
        }
        out.push_str(&format!(" end_state={}\n", p.end_state));
    }
    out.push_str(&format!(
        "write_amp={:.3} logical_bytes={} physical_bytes={}\n",
        report.write_amp,
        report.io.logical_bytes,
        report.io.physical_write_bytes(),
    ));
    out.push_str(&format!(
        "final_state={} entries={} result_hash={:08x}\n",
        report.final_state, report.final_entries, report.result_hash
    ));
    out
}

/// Executes the plan and returns the metrics report, writing the CSV when
/// the plan names an output file.
pub fn run(plan: &RunPlan) -> Result<RunReport> {
    plan.validate()?;
    let engine = Engine::open(plan.engine.clone())?;
    let recorder = Mutex::new(Recorder {
        rows: Vec::new(),
        t0: Instant::now(),
    });
    let mut phases = Vec::new();
    let mut boundaries = Vec::new(); // (row index, phase index, kind)
    let mut hotspots_installed: Option<Vec<HotspotDef>> = None;

    for (pi, phase) in plan.spec.phases.iter().enumerate() {
        let spec = plan.spec_for_phase(pi);
        signal_phase(&engine, &spec, phase.kind, &mut hotspots_installed)?;
        let start_row = recorder.lock().rows.len();
        boundaries.push((start_row, pi, phase.kind));
        let phase_started = Instant::now();

        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for t in 0..plan.threads {
                let engine = &engine;
                let recorder = &recorder;
                let spec = spec.clone();
                handles.push(scope.spawn(move || -> Result<()> {
                    let stream =
                        thread_stream(&spec, pi, t, plan.threads, plan.hotspot_writes_only);
                    for op in stream {
                        let probes = apply_op(engine, &spec, op)?;
                        let state = engine.state();
                        recorder.lock().record(state, probes);
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("user thread panicked")?;
            }
            Ok(())
        })?;

        let wall = phase_started.elapsed();
        phases.push(summarize_phase(
            &recorder.lock(),
            start_row,
            phase.kind,
            wall,
            engine.state(),
        ));
    }

    let (result_hash, final_entries) = content_hash(&engine, &plan.spec)?;
    let final_state = engine.state();
    // Settle buffered state (memtables, dirty pages) before sampling the I/O
    // counters so every mode pays for persisting what it wrote.
    engine.flush()?;
    engine.checkpoint()?;
    let io = engine.stats().io;
    if let Some(path) = &plan.out {
        write_csv(path, &recorder.lock(), &boundaries, &phases)?;
    }
    engine.close()?;
    Ok(RunReport {
        phases,
        write_amp: io.write_amp(),
        io,
        result_hash,
        final_entries,
        final_state,
    })
}

/// Applies one operation; returns the LSM probe count for scans, 0 for puts.
fn apply_op(engine: &Engine, spec: &WorkloadSpec, op: Op) -> Result<u64> {
    match op {
        Op::Put { key, tag } => {
            engine.put(
                &spec.encode_key(key),
                &value_bytes(key, tag, spec.value_len),
            )?;
            Ok(0)
        }
        Op::Scan { start, len } => {
            let lo = spec.encode_key(start);
            let hi = spec.encode_key(start + len);
            let (_, stats) = engine.range_with_stats(&lo, &hi)?;
            Ok(stats.nodelsm_probes)
        }
    }
}

/// Declares hotspots (once per distinct set) and signals the workload kind.
pub(crate) fn signal_phase(
    engine: &Engine,
    spec: &WorkloadSpec,
    kind: PhaseKind,
    installed: &mut Option<Vec<HotspotDef>>,
) -> Result<()> {
    match kind {
        PhaseKind::Load => {}
        PhaseKind::ReadHeavy => {
            if installed.as_ref() != Some(&spec.hotspots) {
                engine.set_hotspots(spec.hotspot_key_ranges())?;
                *installed = Some(spec.hotspots.clone());
            }
            engine.transition(WorkloadHint::ReadHeavy);
        }
        PhaseKind::WriteHeavy => {
            engine.transition(WorkloadHint::WriteHeavy);
        }
    }
    Ok(())
}

fn summarize_phase(
    rec: &Recorder,
    start_row: usize,
    kind: PhaseKind,
    wall: Duration,
    end_state: EngineState,
) -> PhaseReport {
    let rows = &rec.rows[start_row..];
    let ops = rows.len() as u64;
    let tput = ops as f64 / wall.as_secs_f64().max(1e-9);
    let steady_tput = if rows.len() >= 4 {
        let mid = rows.len() / 2;
        let dt_ns = rows[rows.len() - 1].wall_ns.saturating_sub(rows[mid].wall_ns);
        (rows.len() - 1 - mid) as f64 / (dt_ns as f64 / 1e9).max(1e-9)
    } else {
        tput
    };
    let phase_t0 = rows.first().map(|r| r.wall_ns).unwrap_or(0);
    // Report the adaptation point only when this phase actually crossed into
    // the read-optimized state (not when it began there).
    let crossed = kind == PhaseKind::ReadHeavy
        && rows.first().map(|r| r.state) != Some(EngineState::R);
    let adapt = crossed
        .then(|| {
            rows.iter()
                .position(|r| r.state == EngineState::R)
                .map(|i| {
                    (
                        (start_row + i) as u64,
                        Duration::from_nanos(rows[i].wall_ns.saturating_sub(phase_t0)),
                    )
                })
        })
        .flatten();
    PhaseReport {
        kind,
        ops,
        wall,
        tput,
        steady_tput,
        adapt_complete_op: adapt.map(|a| a.0),
        adapt_wall: adapt.map(|a| a.1),
        end_state,
    }
}

/// CRC32 over every `(key, value)` of a full scan, streamed in chunks so
/// desk-scale keyspaces never materialize at once.
fn content_hash(engine: &Engine, spec: &WorkloadSpec) -> Result<(u32, u64)> {
    let mut hasher = crc32fast::Hasher::new();
    let mut entries = 0u64;
    let chunk = 65_536u64;
    let mut at = 0u64;
    while at < spec.key_count {
        let hi = (at + chunk).min(spec.key_count);
        for (k, v) in engine.range(&spec.encode_key(at), &spec.encode_key(hi))? {
            hasher.update(&k);
            hasher.update(&[0xFF]);
            hasher.update(&v);
            hasher.update(&[0xFE]);
            entries += 1;
        }
        at = hi;
    }
    Ok((hasher.finalize(), entries))
}

fn write_csv(
    path: &PathBuf,
    rec: &Recorder,
    boundaries: &[(usize, usize, PhaseKind)],
    phases: &[PhaseReport],
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "op_index,wall_ns,window_tput,state,nodelsm_probes")?;
    let mut next_boundary = 0usize;
    for (i, row) in rec.rows.iter().enumerate() {
        while next_boundary < boundaries.len() && boundaries[next_boundary].0 == i {
            let (_, pi, kind) = boundaries[next_boundary];
            writeln!(w, "# phase {pi} {} start", kind.label())?;
            if let Some(op) = phases.get(pi).and_then(|p| p.adapt_complete_op) {
                writeln!(w, "# phase {pi} adaptation_complete_op {op}")?;
            }
            next_boundary += 1;
        }
        let window = i.min(100);
        let tput = if window == 0 {
            0.0
        } else {
            let dt = row.wall_ns.saturating_sub(rec.rows[i - window].wall_ns);
            if dt == 0 {
                0.0
            } else {
                window as f64 * 1e9 / dt as f64
            }
        };
        writeln!(
            w,
            "{i},{},{tput:.3},{},{}",
            row.wall_ns, row.state, row.probes
        )?;
    }
    w.flush()?;
    Ok(())
}
