//! `readsp`: generate synthetic traces, run the detection protocol over
//! per-node trace files, and run the self-check suites.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use readsp_core::config::detector_from_keys;
use readsp_core::harness::Metrics;
use readsp_core::trace::{read_trace, write_trace, Record};
use readsp_core::{
    generate_trace, partition_stream, report, run_window, verify, DetectionMode, DetectorConfig, IpPair,
    KeyValues, ObservationNode, OracleTable, PartitionMode, TraceFormat, TraceSpec,
};

#[derive(Parser)]
#[command(name = "readsp", version, about = "Distributed super point detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace and split it into per-node files.
    Gen(GenArgs),
    /// Run detection over the trace files of a directory, one window at a time.
    Run(RunArgs),
    /// Run the built-in self-check suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Trace spec (key = value).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for node-<i>.<ext> files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nodes: Option<usize>,
    /// round_robin, hash_by_pair or skewed(w0,w1,...).
    #[arg(long)]
    partition: Option<String>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bin,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Read,
    #[value(name = "naive_reference", alias = "naive-reference")]
    NaiveReference,
    #[value(name = "single_node", alias = "single-node")]
    SingleNode,
}

impl std::str::FromStr for ModeArg {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        <ModeArg as ValueEnum>::from_str(s, true).map_err(|e| anyhow::anyhow!(e))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run config (key = value); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Number of nodes; trace file i goes to node i mod n. Defaults to the
    /// number of trace files.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    theta: Option<u32>,
    /// Hash seed shared by every node.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Report file (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare against exact per-host counts.
    #[arg(long)]
    oracle: bool,
    /// Largest acceptable FTR in percent when the oracle is enabled.
    #[arg(long)]
    ftr_gate: Option<f64>,
    /// Worker threads used to scan nodes.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Repeat the randomized suites for this many consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|()| true),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => Ok(cmd_verify(a)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let kv = KeyValues::load(&args.spec)?;
    let mut spec = TraceSpec::from_keys(&kv)?;
    if let Some(seed) = args.seed {
        let planted_count = kv.get::<usize>("planted_count")?;
        spec.seed = seed;
        if planted_count.is_some() {
            // Planted addresses are drawn from the seed.
            let explicit = kv.raw("planted").is_some();
            if !explicit {
                let count = spec.planted.len();
                let (lo, hi) = planted_range(&spec);
                spec = spec.with_planted_range(count, lo, hi);
            }
        }
    }
    let nodes = match args.nodes {
        Some(n) => n,
        None => kv.get("nodes")?.unwrap_or(1),
    };
    let partition: PartitionMode = match args.partition {
        Some(p) => p.parse()?,
        None => match (kv.raw("partition"), kv.raw("weights")) {
            (Some(p), _) => p.parse()?,
            (None, Some(w)) => format!("skewed({w})").parse()?,
            (None, None) => PartitionMode::RoundRobin,
        },
    };
    let format = match args.format {
        Some(FormatArg::Bin) => TraceFormat::Binary,
        Some(FormatArg::Csv) => TraceFormat::Csv,
        None => match kv.raw("format") {
            Some("csv") => TraceFormat::Csv,
            Some("bin") | None => TraceFormat::Binary,
            Some(other) => bail!("{}: format must be bin or csv, got {other:?}", args.spec.display()),
        },
    };

    let trace = generate_trace(&spec)?;
    let parts = partition_stream(&trace, nodes, &partition, spec.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (i, part) in parts.iter().enumerate() {
        let path = args.out.join(format!("node-{i}.{}", format.extension()));
        write_trace(&path, part).with_context(|| format!("writing {}", path.display()))?;
        println!("{}: {} pairs", path.display(), part.len());
    }
    println!(
        "{} pairs, {} planted hosts, {} background hosts, {} window(s)",
        trace.len(),
        spec.planted.len(),
        spec.background_hosts,
        spec.windows
    );
    Ok(())
}

fn planted_range(spec: &TraceSpec) -> (u32, u32) {
    let lo = spec.planted.iter().map(|p| p.1).min().unwrap_or(1);
    let hi = spec.planted.iter().map(|p| p.1).max().unwrap_or(lo);
    (lo, hi)
}

const RUN_KEYS: &[&str] = &[
    "theta", "g", "le_len", "u_hat", "v_hat", "seed", "r", "l", "s", "nodes", "window_secs", "mode", "trace_dir",
    "out", "oracle", "ftr_gate", "threads",
];

struct RunSettings {
    detector: DetectorConfig,
    nodes: Option<usize>,
    window_secs: u32,
    mode: ModeArg,
    trace_dir: PathBuf,
    out: Option<PathBuf>,
    oracle: bool,
    ftr_gate: f64,
    threads: usize,
}

fn settings(args: RunArgs) -> Result<RunSettings> {
    let kv = match &args.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    kv.check_keys(RUN_KEYS)?;
    let mut detector = detector_from_keys(&kv, &DetectorConfig::default())?;
    if let Some(t) = args.theta {
        detector.params.theta = t;
    }
    if let Some(s) = args.seed {
        detector.seed = s;
    }
    detector.validate()?;
    let trace_dir = match args.trace_dir.or_else(|| kv.raw("trace_dir").map(PathBuf::from)) {
        Some(d) => d,
        None => bail!("no trace directory: pass --trace-dir or set trace_dir in the config"),
    };
    let mode = match args.mode {
        Some(m) => m,
        None => kv.get("mode")?.unwrap_or(ModeArg::Read),
    };
    Ok(RunSettings {
        detector,
        nodes: args.nodes.or(kv.get("nodes")?),
        window_secs: kv.get("window_secs")?.unwrap_or(300),
        mode,
        trace_dir,
        out: args.out.or_else(|| kv.raw("out").map(PathBuf::from)),
        oracle: args.oracle || kv.get("oracle")?.unwrap_or(false),
        ftr_gate: args.ftr_gate.or(kv.get("ftr_gate")?).unwrap_or(10.0),
        threads: args.threads.or(kv.get("threads")?).unwrap_or(1).max(1),
    })
}

fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading trace directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin" | "csv")));
    files.sort();
    if files.is_empty() {
        bail!("no .bin or .csv trace files in {}", dir.display());
    }
    Ok(files)
}

/// Pairs of one node, grouped by tumbling window.
type NodeWindows = BTreeMap<u32, Vec<IpPair>>;

fn load_node_streams(files: &[PathBuf], nodes: usize, window_secs: u32) -> Result<Vec<NodeWindows>> {
    let mut out = vec![NodeWindows::new(); nodes];
    for (i, path) in files.iter().enumerate() {
        let records: Vec<Record> = read_trace(path)?;
        let mut malformed = 0usize;
        for rec in records {
            match rec {
                Ok(p) => {
                    let w = p.ts.map_or(0, |t| t / window_secs);
                    out[i % nodes].entry(w).or_default().push(p);
                }
                Err(m) => {
                    if malformed == 0 {
                        eprintln!("warning: {}: {m}", path.display());
                    }
                    malformed += 1;
                }
            }
        }
        if malformed > 0 {
            eprintln!("warning: {}: skipped {malformed} malformed record(s)", path.display());
        }
    }
    Ok(out)
}

fn scan_nodes(config: &DetectorConfig, window: u32, streams: &[&[IpPair]], threads: usize) -> Result<Vec<ObservationNode>> {
    let mut nodes = streams
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut n = ObservationNode::new(i as u16, config.clone())?;
            n.start_window(window)?;
            Ok(n)
        })
        .collect::<readsp_core::Result<Vec<_>>>()?;
    let per_thread = nodes.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk, pairs) in nodes.chunks_mut(per_thread).zip(streams.chunks(per_thread)) {
            scope.spawn(move || {
                for (node, stream) in chunk.iter_mut().zip(pairs) {
                    node.scan_pairs(stream.iter().copied());
                }
            });
        }
    });
    Ok(nodes)
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let s = settings(args)?;
    let files = trace_files(&s.trace_dir)?;
    let nodes = match s.mode {
        ModeArg::SingleNode => 1,
        _ => s.nodes.unwrap_or(files.len()),
    };
    if nodes == 0 || nodes > usize::from(u16::MAX) {
        bail!("nodes must be in 1..{}", u16::MAX);
    }
    let mode = match s.mode {
        ModeArg::NaiveReference => DetectionMode::NaiveReference,
        _ => DetectionMode::Read,
    };
    let streams = load_node_streams(&files, nodes, s.window_secs)?;
    let mut windows: Vec<u32> = streams.iter().flat_map(|w| w.keys().copied()).collect();
    windows.sort_unstable();
    windows.dedup();
    if windows.is_empty() {
        windows.push(0);
    }

    let mut out = match &s.out {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mut gate_ok = true;
    for &w in &windows {
        let slices: Vec<&[IpPair]> = streams
            .iter()
            .map(|m| m.get(&w).map_or(&[][..], Vec::as_slice))
            .collect();
        let started = Instant::now();
        let scanned = scan_nodes(&s.detector, w, &slices, s.threads)?;
        let report = run_window(&scanned, mode)?;
        drop(scanned);
        let oracle = s
            .oracle
            .then(|| OracleTable::from_pairs(slices.iter().flat_map(|p| p.iter())));
        let metrics = oracle.as_ref().and_then(|o| {
            let detected = report.super_point_addresses().into_iter().collect();
            Metrics::evaluate(&o.super_points(s.detector.params.theta), &detected)
        });
        if let Some(m) = &metrics {
            gate_ok &= m.ftr <= s.ftr_gate;
        } else if oracle.is_some() {
            // No true super points: any detection is a false positive.
            gate_ok &= report.super_points.is_empty();
        }
        print!("{}", report::human_summary(&report, metrics.as_ref(), oracle.as_ref()));
        println!(
            "  {} pairs in {:.2?}",
            slices.iter().map(|p| p.len()).sum::<usize>(),
            started.elapsed()
        );
        if let Some(f) = out.as_mut() {
            report::write_records(&mut *f, &report, metrics, oracle.as_ref())?;
        }
    }
    if let Some(mut f) = out {
        f.flush()?;
    }
    if s.oracle && !gate_ok {
        eprintln!("FTR gate of {:.2}% exceeded", s.ftr_gate);
    }
    Ok(gate_ok)
}

fn cmd_verify(args: VerifyArgs) -> bool {
    let mut all = true;
    for seed in args.seed..args.seed + args.seeds.max(1) {
        for out in verify::run_all(seed) {
            let tag = if out.passed() { "PASS" } else { "FAIL" };
            println!(
                "[{tag}] seed {seed} {}: {} cases, {} violations{}",
                out.name,
                out.cases,
                out.violations,
                if out.detail.is_empty() { String::new() } else { format!(" ({})", out.detail) }
            );
            all &= out.passed();
        }
    }
    all
}
