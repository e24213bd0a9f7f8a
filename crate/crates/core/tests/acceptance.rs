//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any blocking criterion fails. Throughput is reported only.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readsp_core::coordinator::read_fraction;
use readsp_core::sketch::le_std_dev;
use readsp_core::verify;
use readsp_core::wire;
use readsp_core::{
    generate_trace, partition_stream, run_window, DetectionMode, DetectorConfig, HashSuite, IpPair,
    LinearEstimator, Metrics, ObservationNode, OracleTable, PartitionMode, RECubeConfig, TraceSpec,
};

const SEED: u64 = 20_240_601;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    blocking: bool,
    detail: String,
}

fn print(line: &Line) {
    let tag = match (line.pass, line.blocking) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "INFO",
    };
    println!("[{tag}] {}. {}: {}", line.id, line.name, line.detail);
}

fn suite_line(id: u32, out: verify::SuiteOutcome, elapsed: Duration, budget: Duration) -> Line {
    let in_time = elapsed < budget;
    Line {
        id,
        name: out.name,
        pass: out.passed() && in_time,
        blocking: true,
        detail: format!(
            "{} cases, {} violations, {:.2?} (budget {:.0?}){}",
            out.cases,
            out.violations,
            elapsed,
            budget,
            if out.detail.is_empty() { String::new() } else { format!("; {}", out.detail) }
        ),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn le_accuracy() -> Line {
    const LEN: usize = 1 << 10;
    const TRIALS: usize = 1000;
    let mut notes = Vec::new();
    let mut pass = true;
    for load in [0.25, 0.5, 1.0] {
        let n = (load * LEN as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ n as u64);
        let samples: Vec<f64> = (0..TRIALS)
            .map(|_| {
                let hs = HashSuite::new(rng.random(), 1);
                let mut le = LinearEstimator::new(LEN).unwrap();
                let mut seen = BTreeSet::new();
                while seen.len() < n {
                    let b: u32 = rng.random();
                    if seen.insert(b) {
                        le.update(b, &hs);
                    }
                }
                le.estimate().value
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / TRIALS as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (TRIALS - 1) as f64;
        let sd = var.sqrt();
        let analytic = le_std_dev(load, LEN);
        let mean_ok = (mean - n as f64).abs() <= 3.0 * analytic;
        let sd_ok = (sd / analytic - 1.0).abs() <= 0.15;
        pass &= mean_ok && sd_ok;
        notes.push(format!(
            "L={load}: mean {mean:.2} (truth {n}, 3sd {:.2}) sd {sd:.3} vs {analytic:.3} ({:+.1}%)",
            3.0 * analytic,
            100.0 * (sd / analytic - 1.0)
        ));
    }
    Line { id: 4, name: "LE accuracy", pass, blocking: true, detail: notes.join("; ") }
}

struct DetectionRun {
    w: usize,
    stage3: Vec<usize>,
    le_len: usize,
    metrics: Metrics,
}

fn detection_run(seed: u64) -> DetectionRun {
    let config = DetectorConfig {
        cube: RECubeConfig::with_default_rows(4).unwrap(),
        seed: seed.wrapping_mul(0x9e37_79b9),
        ..DetectorConfig::default()
    };
    let theta = config.params.theta;
    let spec = TraceSpec {
        background_hosts: 50_000,
        background_max: theta / 2,
        seed,
        ..TraceSpec::default()
    }
    .with_planted_range(20, 2 * theta, 16 * theta);
    let trace = generate_trace(&spec).unwrap();
    let parts = partition_stream(&trace, 3, &PartitionMode::HashByPair, seed).unwrap();
    let nodes: Vec<ObservationNode> = parts
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let mut node = ObservationNode::new(i as u16, config.clone()).unwrap();
            node.scan_pairs(part.iter().copied());
            node
        })
        .collect();
    let report = run_window(&nodes, DetectionMode::Read).unwrap();
    let truth = OracleTable::from_pairs(&trace).super_points(theta);
    let detected: BTreeSet<u32> = report.super_point_addresses().into_iter().collect();
    DetectionRun {
        w: report.candidates_count(),
        stage3: report.per_node.iter().map(|n| n.stage3).collect(),
        le_len: config.params.le_len,
        metrics: Metrics::evaluate(&truth, &detected).expect("planted hosts exceed theta"),
    }
}

fn detection_and_traffic() -> (Line, Line) {
    let (runs, elapsed): (Vec<DetectionRun>, _) = timed(|| (0..20).map(|s| detection_run(SEED + s)).collect());
    let fnr_total: usize = runs.iter().map(|r| r.metrics.n_minus).sum();
    let mean_fpr = runs.iter().map(|r| r.metrics.fpr).sum::<f64>() / runs.len() as f64;
    let max_fpr = runs.iter().map(|r| r.metrics.fpr).fold(0.0, f64::max);
    let quality = Line {
        id: 5,
        name: "detection quality",
        pass: fnr_total == 0 && mean_fpr <= 10.0,
        blocking: true,
        detail: format!(
            "20 seeds, {fnr_total} missed super points, mean FPR {mean_fpr:.2}% (max {max_fpr:.2}%), {elapsed:.1?}"
        ),
    };

    let default = DetectorConfig::default();
    let mut exact = true;
    for r in &runs {
        for &bytes in &r.stage3 {
            exact &= bytes == (32 * r.w + r.le_len * r.w) / 8 + wire::STAGE3_HEADER_LEN;
        }
    }
    let max_w = runs.iter().map(|r| r.w).max().unwrap_or(0);
    let min_w = runs.iter().map(|r| r.w).min().unwrap_or(0);
    let fraction = read_fraction(&default, max_w);
    let traffic = Line {
        id: 6,
        name: "communication fraction",
        pass: exact && fraction < 0.0321,
        blocking: true,
        detail: format!(
            "w in [{min_w}, {max_w}], per-node fraction at w={max_w} {:.3}% (< 3.21%), stage-3 bytes exact: {exact}",
            100.0 * fraction
        ),
    };
    (quality, traffic)
}

fn throughput() -> Line {
    const PAIRS: usize = 5_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let hosts: Vec<u32> = (0..100_000).map(|_| rng.random()).collect();
    let pairs: Vec<IpPair> = (0..PAIRS)
        .map(|_| IpPair::new(hosts[rng.random_range(0..hosts.len())], rng.random()))
        .collect();
    let mut node = ObservationNode::new(0, DetectorConfig::default()).unwrap();
    let (_, elapsed) = timed(|| node.scan_pairs(pairs.iter().copied()));
    let rate = PAIRS as f64 / elapsed.as_secs_f64();
    Line {
        id: 8,
        name: "throughput",
        pass: rate >= 5e6,
        blocking: false,
        detail: format!("{:.2}e6 pairs/s over {PAIRS} pairs (target 5e6, informational)", rate / 1e6),
    }
}

fn main() {
    let mut lines = Vec::new();
    let mut emit = |line: Line| {
        print(&line);
        lines.push(line);
    };

    let (out, t) = timed(verify::golden_example);
    emit(suite_line(1, out, t, Duration::from_secs(1)));
    let (out, t) = timed(|| verify::distributed_equivalence(100, SEED));
    emit(suite_line(2, out, t, Duration::from_secs(120)));
    let (out, t) = timed(|| verify::theorem1_sandwich(1000, SEED));
    emit(suite_line(3, out, t, Duration::from_secs(600)));
    emit(le_accuracy());
    let (quality, traffic) = detection_and_traffic();
    emit(quality);
    emit(traffic);
    let (out, t) = timed(|| verify::merge_algebra(10_000, SEED));
    emit(suite_line(7, out, t, Duration::from_secs(600)));
    emit(throughput());

    let failed: Vec<u32> = lines.iter().filter(|l| l.blocking && !l.pass).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("acceptance: all blocking criteria passed");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
