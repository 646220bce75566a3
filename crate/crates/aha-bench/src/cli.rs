//! Command-line interface.
//!
//! ```text
//! bench run    --mode aha --dist zipf --theta 0.99 --keys 2000000 ...
//! bench verify --mode aha --dist uniform --phases load:2000000,read:200000,...
//! ```
//!
//! `run` executes the workload and prints a per-phase summary (plus a
//! metrics CSV when `--out` is given); `verify` replays the same stream
//! against an in-memory oracle and exits nonzero on the first divergence.

use std::path::PathBuf;

use aha::{EngineConfig, LeafStrategy, Mode};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::runner::{self, RunPlan};
use crate::verify;
use crate::workload::{Dist, HotspotDef, Phase, PhaseKind, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Benchmark and verification harness for the aha engine"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the workload and report metrics.
    Run(CommonArgs),
    /// Replay the workload against an in-memory oracle; fail on divergence.
    Verify(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Aha,
    PureLsm,
    PureBtree,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Zipf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Down,
    Side,
}

#[derive(Args)]
struct CommonArgs {
    /// Engine organization under test.
    #[arg(long, value_enum, default_value = "aha")]
    mode: ModeArg,

    /// Key-popularity distribution.
    #[arg(long, value_enum, default_value = "uniform")]
    dist: DistArg,

    /// Zipfian exponent (used with --dist zipf).
    #[arg(long, default_value_t = 0.99)]
    theta: f64,

    /// Number of distinct keys.
    #[arg(long, default_value_t = 2_000_000)]
    keys: u64,

    /// Encoded key length in bytes (zero-padded decimal).
    #[arg(long = "key-len", default_value_t = 20)]
    key_len: usize,

    /// Value length in bytes.
    #[arg(long = "val-len", default_value_t = 128)]
    val_len: usize,

    /// Hot ranges as LO:FRAC[,LO:FRAC...], both as fractions of the
    /// keyspace. Default: 0:0.1 for uniform, 0:0.01 for zipf.
    #[arg(long)]
    hotspot: Option<String>,

    /// Range-scan width as a fraction of the keyspace.
    /// Default: 2e-6 for uniform, 2e-7 for zipf.
    #[arg(long)]
    selectivity: Option<f64>,

    /// Phase list as KIND:OPS[,KIND:OPS...] with kinds load|read|write.
    #[arg(long, default_value = "load:2000000,read:200000,write:200000,read:200000")]
    phases: String,

    /// Root LSM level limit (soft).
    #[arg(long = "root-levels", default_value_t = 3)]
    root_levels: usize,

    /// Non-root node LSM level limit (hard).
    #[arg(long = "node-levels", default_value_t = 2)]
    node_levels: usize,

    /// Leaf reorganization strategy.
    #[arg(long = "leaf-split", value_enum, default_value = "down")]
    leaf_split: SplitArg,

    /// User threads issuing operations.
    #[arg(long, default_value_t = 4)]
    threads: usize,

    /// Workload seed; fixes every stream.
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Metrics CSV path (run only; per-op rows are skipped without it).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Engine data directory. A temporary directory is used when omitted.
    #[arg(long = "data-dir")]
    data_dir: Option<PathBuf>,

    /// Confine write-phase targets to the hot ranges.
    #[arg(long = "hotspot-writes-only")]
    hotspot_writes_only: bool,
}

pub fn parse_hotspots(s: &str) -> Result<Vec<HotspotDef>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (lo, frac) = part
            .split_once(':')
            .with_context(|| format!("hotspot {part:?} is not LO:FRAC"))?;
        out.push(HotspotDef {
            origin: lo.trim().parse().with_context(|| format!("origin {lo:?}"))?,
            fraction: frac
                .trim()
                .parse()
                .with_context(|| format!("fraction {frac:?}"))?,
        });
    }
    Ok(out)
}

pub fn parse_phases(s: &str) -> Result<Vec<Phase>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (kind, ops) = part
            .split_once(':')
            .with_context(|| format!("phase {part:?} is not KIND:OPS"))?;
        let kind = match kind.trim() {
            "load" => PhaseKind::Load,
            "read" => PhaseKind::ReadHeavy,
            "write" => PhaseKind::WriteHeavy,
            other => bail!("unknown phase kind {other:?} (use load|read|write)"),
        };
        out.push(Phase {
            kind,
            ops: ops.trim().parse().with_context(|| format!("ops {ops:?}"))?,
        });
    }
    Ok(out)
}

impl CommonArgs {
    fn build(&self) -> Result<(RunPlan, Option<tempfile::TempDir>)> {
        let dist = match self.dist {
            DistArg::Uniform => Dist::Uniform,
            DistArg::Zipf => Dist::Zipfian { theta: self.theta },
        };
        let hotspots = match &self.hotspot {
            Some(s) => parse_hotspots(s)?,
            None => vec![HotspotDef {
                origin: 0.0,
                fraction: dist.default_hotspot_fraction(),
            }],
        };
        let spec = WorkloadSpec {
            dist,
            key_count: self.keys,
            key_len: self.key_len,
            value_len: self.val_len,
            hotspots,
            selectivity: self.selectivity.unwrap_or(dist.default_selectivity()),
            phases: parse_phases(&self.phases)?,
            seed: self.seed,
        };
        let (data_dir, tmp) = match &self.data_dir {
            Some(p) => {
                std::fs::create_dir_all(p)
                    .with_context(|| format!("creating {}", p.display()))?;
                (p.clone(), None)
            }
            None => {
                let tmp = tempfile::tempdir().context("creating temporary data dir")?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        let mut engine = EngineConfig::new(data_dir);
        engine.mode = match self.mode {
            ModeArg::Aha => Mode::Aha,
            ModeArg::PureLsm => Mode::PureLsm,
            ModeArg::PureBtree => Mode::PureBtree,
        };
        engine.root_max_levels = self.root_levels;
        engine.node_max_levels = self.node_levels;
        engine.leaf_strategy = match self.leaf_split {
            SplitArg::Down => LeafStrategy::DownSplit,
            SplitArg::Side => LeafStrategy::SideSplit,
        };
        Ok((
            RunPlan {
                spec,
                engine,
                threads: self.threads,
                out: self.out.clone(),
                hotspot_writes_only: self.hotspot_writes_only,
                hotspot_overrides: Vec::new(),
            },
            tmp,
        ))
    }
}

pub fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let (plan, _tmp) = args.build()?;
            let report = runner::run(&plan)?;
            print!("{}", runner::format_report(&report));
            Ok(())
        }
        Command::Verify(args) => {
            let (plan, _tmp) = args.build()?;
            let report = verify::verify(&plan, None)?;
            match report.divergence {
                None => {
                    println!(
                        "verify pass ops={} reads_checked={}",
                        report.ops_applied, report.reads_checked
                    );
                    Ok(())
                }
                Some(d) => {
                    println!(
                        "verify FAIL ops={} reads_checked={}",
                        report.ops_applied, report.reads_checked
                    );
                    bail!("divergence: {d}");
                }
            }
        }
    }
}
