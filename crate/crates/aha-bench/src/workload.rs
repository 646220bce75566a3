//! Deterministic workload generation.
//!
//! A [`WorkloadSpec`] plus a seed fully determines every operation stream:
//! load order, write targets, and scan intervals. Streams are generated per
//! user thread over *disjoint* key sets (writes snap to the issuing
//! thread's residue class), so the final engine content is deterministic
//! even under concurrent execution — the property the oracle verifier and
//! the repeated-run hash comparison rely on.
//!
//! Keys are zero-padded decimal renderings of a key index, which makes
//! lexicographic order equal numeric order and lets hotspot ranges and
//! scan selectivity be computed exactly in index space.

use aha::KeyRange;
use anyhow::{ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Zipf};

/// Key-popularity distribution of a workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform,
    /// Zipfian over key ranks; rank 0 is the most popular and maps to key
    /// index 0, so the hot ranks sit at the left edge of the keyspace.
    Zipfian { theta: f64 },
}

impl Dist {
    /// Conventional hot fraction: 10% of a uniform keyspace, 1% under
    /// Zipfian popularity (where far fewer keys carry most of the traffic).
    pub fn default_hotspot_fraction(self) -> f64 {
        match self {
            Dist::Uniform => 0.10,
            Dist::Zipfian { .. } => 0.01,
        }
    }

    /// Default range-scan width as a fraction of the keyspace.
    pub fn default_selectivity(self) -> f64 {
        match self {
            Dist::Uniform => 2e-6,
            Dist::Zipfian { .. } => 2e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    /// Distinct-key inserts in shuffled order.
    Load,
    /// 100% range scans with start keys drawn from the hotspot ranges.
    ReadHeavy,
    /// 100% puts (over the full keyspace, or hotspot-only as a variant).
    WriteHeavy,
}

impl PhaseKind {
    pub fn label(self) -> &'static str {
        match self {
            PhaseKind::Load => "load",
            PhaseKind::ReadHeavy => "read",
            PhaseKind::WriteHeavy => "write",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Phase {
    pub kind: PhaseKind,
    pub ops: u64,
}

/// One hot range declared as fractions of the keyspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotspotDef {
    /// Left edge, in `[0, 1)` of the keyspace.
    pub origin: f64,
    /// Width, in `(0, 1]` of the keyspace.
    pub fraction: f64,
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub dist: Dist,
    pub key_count: u64,
    pub key_len: usize,
    pub value_len: usize,
    pub hotspots: Vec<HotspotDef>,
    /// Scan width as a fraction of the keyspace.
    pub selectivity: f64,
    pub phases: Vec<Phase>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.key_count > 0, "key count must be positive");
        ensure!(!self.phases.is_empty(), "at least one phase is required");
        let digits = self.key_count.saturating_sub(1).to_string().len();
        ensure!(
            self.key_len >= digits,
            "key length {} cannot hold {} distinct keys ({digits} digits needed)",
            self.key_len,
            self.key_count
        );
        ensure!(
            self.selectivity > 0.0 && self.selectivity <= 1.0,
            "selectivity {} outside (0, 1]",
            self.selectivity
        );
        if let Dist::Zipfian { theta } = self.dist {
            ensure!(theta > 0.0, "zipfian theta {theta} must be positive");
        }
        ensure!(!self.hotspots.is_empty(), "at least one hotspot is required");
        let ranges = self.hotspot_index_ranges();
        for (i, h) in self.hotspots.iter().enumerate() {
            ensure!(
                (0.0..1.0).contains(&h.origin) && h.fraction > 0.0 && h.fraction <= 1.0,
                "hotspot {i} origin/fraction ({}, {}) outside [0,1)/(0,1]",
                h.origin,
                h.fraction
            );
            ensure!(ranges[i].0 < ranges[i].1, "hotspot {i} covers no keys");
        }
        for pair in ranges.windows(2) {
            ensure!(
                pair[0].1 <= pair[1].0,
                "hotspots overlap or are unsorted: {:?} then {:?}",
                pair[0],
                pair[1]
            );
        }
        for (i, p) in self.phases.iter().enumerate() {
            ensure!(p.ops > 0, "phase {i} has zero operations");
            if p.kind == PhaseKind::Load {
                ensure!(
                    p.ops <= self.key_count,
                    "load phase {i} asks for {} distinct inserts but only {} keys exist",
                    p.ops,
                    self.key_count
                );
            }
        }
        Ok(())
    }

    /// Hot ranges as half-open index intervals, sorted.
    pub fn hotspot_index_ranges(&self) -> Vec<(u64, u64)> {
        self.hotspots
            .iter()
            .map(|h| {
                let lo = (h.origin * self.key_count as f64).floor() as u64;
                let len = ((h.fraction * self.key_count as f64).round() as u64).max(1);
                (lo.min(self.key_count - 1), (lo + len).min(self.key_count))
            })
            .collect()
    }

    /// Hot ranges as encoded key ranges, ready for `Engine::set_hotspots`.
    pub fn hotspot_key_ranges(&self) -> Vec<KeyRange> {
        self.hotspot_index_ranges()
            .iter()
            .map(|&(lo, hi)| KeyRange::bounded(self.encode_key(lo), self.encode_key(hi)))
            .collect()
    }

    /// Scan width in keys.
    pub fn span_keys(&self) -> u64 {
        ((self.selectivity * self.key_count as f64).ceil() as u64).max(1)
    }

    pub fn encode_key(&self, index: u64) -> Vec<u8> {
        format!("{index:0width$}", width = self.key_len).into_bytes()
    }

    pub fn decode_key(&self, key: &[u8]) -> Result<u64> {
        std::str::from_utf8(key)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .with_context(|| format!("key {key:?} is not a zero-padded index"))
    }
}

/// Deterministic value for the write identified by `tag` to `key_index`.
/// The verifier recomputes it from the oracle's stored tag.
pub fn value_bytes(key_index: u64, tag: u64, len: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(len + 16);
    v.extend_from_slice(format!("v{key_index:016x}{tag:016x}").as_bytes());
    let mut x = key_index ^ tag.rotate_left(17) ^ 0x9E37_79B9_7F4A_7C15;
    while v.len() < len {
        x ^= x >> 33;
        x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        v.extend_from_slice(&x.to_le_bytes());
    }
    v.truncate(len);
    v
}

/// One generated operation. `Put` carries the tag from which its value is
/// derived; `Scan` is a half-open index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Put { key: u64, tag: u64 },
    Scan { start: u64, len: u64 },
}

/// `total` operations split evenly across `threads`, remainder to the
/// lowest thread ids.
pub fn thread_share(total: u64, threads: usize, thread: usize) -> u64 {
    let t = threads as u64;
    total / t + u64::from((thread as u64) < total % t)
}

fn mix_seed(seed: u64, phase: usize, thread: usize, salt: u64) -> u64 {
    let mut x = seed
        ^ (phase as u64).wrapping_mul(0xA24B_AED4_963E_E407)
        ^ (thread as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25)
        ^ salt;
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn make_tag(phase: usize, thread: usize, i: u64) -> u64 {
    debug_assert!(i < 1 << 40);
    ((phase as u64) << 48) | ((thread as u64 & 0xFF) << 40) | i
}

/// Snaps `index` to the issuing thread's residue class so no two threads
/// ever write the same key. Requires `key_count >= threads`.
fn own(index: u64, thread: usize, threads: usize, key_count: u64) -> u64 {
    let n = threads as u64;
    let mut base = index / n * n + thread as u64;
    if base >= key_count {
        base -= n;
    }
    base
}

/// Weighted-uniform pick over precomputed `(start_lo, count, scan_len)`
/// intervals.
fn pick_interval(intervals: &[(u64, u64, u64)], total: u64, rng: &mut ChaCha12Rng) -> (u64, u64) {
    let mut u = rng.random_range(0..total);
    for &(lo, cnt, len) in intervals {
        if u < cnt {
            return (lo + u, len);
        }
        u -= cnt;
    }
    unreachable!("interval weights cover the draw range")
}

/// The per-thread operation stream for one phase: deterministic in
/// `(spec.seed, phase_index, thread)`, disjoint from other threads' writes.
pub struct OpStream {
    remaining: u64,
    next_fn: Box<dyn FnMut() -> Op + Send>,
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some((self.next_fn)())
    }
}

impl ExactSizeIterator for OpStream {
    fn len(&self) -> usize {
        self.remaining as usize
    }
}

fn zipf_sampler(spec: &WorkloadSpec) -> Option<Zipf<f64>> {
    match spec.dist {
        Dist::Uniform => None,
        Dist::Zipfian { theta } => {
            Some(Zipf::new(spec.key_count as f64, theta).expect("validated zipf parameters"))
        }
    }
}

fn draw_rank(zipf: &Zipf<f64>, rng: &mut ChaCha12Rng, key_count: u64) -> u64 {
    ((zipf.sample(rng) as u64).saturating_sub(1)).min(key_count - 1)
}

/// Builds the operation stream `thread` executes in phase `phase_index`.
/// `hotspot_writes_only` confines write-phase targets to the hot ranges
/// (the drift/oscillation experiment variant).
pub fn thread_stream(
    spec: &WorkloadSpec,
    phase_index: usize,
    thread: usize,
    threads: usize,
    hotspot_writes_only: bool,
) -> OpStream {
    let phase = spec.phases[phase_index];
    let count = thread_share(phase.ops, threads, thread);
    match phase.kind {
        PhaseKind::Load => {
            // All threads share one shuffled permutation of the keyspace
            // and take contiguous chunks of its first `phase.ops` entries.
            let mut perm: Vec<u64> = (0..spec.key_count).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(spec.seed, phase_index, 0, 0x10AD));
            perm.shuffle(&mut rng);
            let offset: u64 = (0..thread)
                .map(|t| thread_share(phase.ops, threads, t))
                .sum();
            let chunk: Vec<u64> = perm[offset as usize..(offset + count) as usize].to_vec();
            let mut it = chunk.into_iter();
            let mut i = 0u64;
            OpStream {
                remaining: count,
                next_fn: Box::new(move || {
                    let key = it.next().expect("chunk length equals stream length");
                    let tag = make_tag(phase_index, thread, i);
                    i += 1;
                    Op::Put { key, tag }
                }),
            }
        }
        PhaseKind::WriteHeavy => {
            let mut rng =
                ChaCha12Rng::seed_from_u64(mix_seed(spec.seed, phase_index, thread, 0x3217));
            let zipf = zipf_sampler(spec);
            let key_count = spec.key_count;
            let hot = spec.hotspot_index_ranges();
            let hot_intervals: Vec<(u64, u64, u64)> =
                hot.iter().map(|&(lo, hi)| (lo, hi - lo, 0)).collect();
            let hot_total: u64 = hot_intervals.iter().map(|h| h.1).sum();
            let mut i = 0u64;
            OpStream {
                remaining: count,
                next_fn: Box::new(move || {
                    let index = if hotspot_writes_only {
                        match &zipf {
                            Some(z) => {
                                let mut pick = None;
                                for _ in 0..1024 {
                                    let r = draw_rank(z, &mut rng, key_count);
                                    if hot.iter().any(|&(lo, hi)| r >= lo && r < hi) {
                                        pick = Some(r);
                                        break;
                                    }
                                }
                                pick.unwrap_or_else(|| {
                                    pick_interval(&hot_intervals, hot_total, &mut rng).0
                                })
                            }
                            None => pick_interval(&hot_intervals, hot_total, &mut rng).0,
                        }
                    } else {
                        match &zipf {
                            Some(z) => draw_rank(z, &mut rng, key_count),
                            None => rng.random_range(0..key_count),
                        }
                    };
                    let key = own(index, thread, threads, key_count);
                    let tag = make_tag(phase_index, thread, i);
                    i += 1;
                    Op::Put { key, tag }
                }),
            }
        }
        PhaseKind::ReadHeavy => {
            let mut rng =
                ChaCha12Rng::seed_from_u64(mix_seed(spec.seed, phase_index, thread, 0x5CA7));
            let zipf = zipf_sampler(spec);
            let key_count = spec.key_count;
            let span = spec.span_keys();
            let hot = spec.hotspot_index_ranges();
            // Valid scan-start positions per hotspot, so that every emitted
            // interval fits entirely inside one hot range.
            let starts: Vec<(u64, u64, u64)> = hot
                .iter()
                .map(|&(lo, hi)| {
                    let len = span.min(hi - lo);
                    (lo, hi - len - lo + 1, len)
                })
                .collect();
            let total: u64 = starts.iter().map(|s| s.1).sum();
            OpStream {
                remaining: count,
                next_fn: Box::new(move || {
                    if let Some(z) = &zipf {
                        // Condition the popularity draw on hotspot
                        // membership; with hot ranks at the left edge the
                        // acceptance rate is high, but cap the retries and
                        // fall back to a uniform pick over valid starts.
                        for _ in 0..1024 {
                            let r = draw_rank(z, &mut rng, key_count);
                            if let Some(&(lo, hi)) =
                                hot.iter().find(|&&(lo, hi)| r >= lo && r < hi)
                            {
                                let len = span.min(hi - lo);
                                return Op::Scan {
                                    start: r.min(hi - len),
                                    len,
                                };
                            }
                        }
                    }
                    let (start, len) = pick_interval(&starts, total, &mut rng);
                    Op::Scan { start, len }
                }),
            }
        }
    }
}
