//! Ground truth and evaluation: exact per-host distinct counting, synthetic
//! traces with planted super points, stream partitioning and error rates.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::hash::fmix64;
use crate::trace::IpPair;

/// Exact opposite-host sets, keyed by source address.
#[derive(Debug, Clone, Default)]
pub struct OracleTable {
    hosts: HashMap<u32, HashSet<u32>>,
}

impl OracleTable {
    pub fn from_pairs<'a, I: IntoIterator<Item = &'a IpPair>>(pairs: I) -> Self {
        let mut t = Self::default();
        t.extend(pairs);
        t
    }

    pub fn extend<'a, I: IntoIterator<Item = &'a IpPair>>(&mut self, pairs: I) {
        for p in pairs {
            self.hosts.entry(p.a).or_default().insert(p.b);
        }
    }

    pub fn cardinality(&self, a: u32) -> usize {
        self.hosts.get(&a).map_or(0, HashSet::len)
    }

    pub fn hosts(&self) -> usize {
        self.hosts.len()
    }

    /// Hosts whose cardinality exceeds `theta`.
    pub fn super_points(&self, theta: u32) -> BTreeSet<u32> {
        self.hosts
            .iter()
            .filter(|(_, s)| s.len() > theta as usize)
            .map(|(&a, _)| a)
            .collect()
    }
}

/// Error rates in percent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    /// True super points.
    pub n: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub ftr: f64,
}

impl Metrics {
    /// `None` when there are no true super points.
    pub fn evaluate(truth: &BTreeSet<u32>, detected: &BTreeSet<u32>) -> Option<Self> {
        let n = truth.len();
        if n == 0 {
            return None;
        }
        let n_plus = detected.difference(truth).count();
        let n_minus = truth.difference(detected).count();
        let fpr = 100.0 * n_plus as f64 / n as f64;
        let fnr = 100.0 * n_minus as f64 / n as f64;
        Some(Self { n, n_plus, n_minus, fpr, fnr, ftr: fpr + fnr })
    }
}

/// Metrics of `detected` against the union of all node streams.
pub fn oracle_evaluate(traces: &[Vec<IpPair>], theta: u32, detected: &BTreeSet<u32>) -> Option<Metrics> {
    let table = OracleTable::from_pairs(traces.iter().flatten());
    Metrics::evaluate(&table.super_points(theta), detected)
}

/// Synthetic trace description.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    /// `(address, exact cardinality)` of each planted host.
    pub planted: Vec<(u32, u32)>,
    pub background_hosts: usize,
    /// Zipf exponent of background cardinalities.
    pub zipf_s: f64,
    /// Largest background cardinality.
    pub background_max: u32,
    /// Pairs emitted per distinct pair, on average (>= 1).
    pub duplication_factor: f64,
    pub seed: u64,
    pub windows: u32,
    pub window_secs: u32,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            planted: Vec::new(),
            background_hosts: 0,
            zipf_s: 1.2,
            background_max: 512,
            duplication_factor: 1.0,
            seed: 1,
            windows: 1,
            window_secs: 300,
        }
    }
}

impl TraceSpec {
    /// `count` planted hosts with cardinalities spread geometrically over
    /// `[lo, hi]`, at addresses drawn from `seed`.
    pub fn with_planted_range(mut self, count: usize, lo: u32, hi: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x504c_414e);
        let mut used = HashSet::new();
        self.planted = (0..count)
            .map(|i| {
                let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
                let card = (lo as f64 * (hi as f64 / lo as f64).powf(frac)).round() as u32;
                let addr = loop {
                    let a: u32 = rng.random();
                    if used.insert(a) {
                        break a;
                    }
                };
                (addr, card)
            })
            .collect();
        self
    }

    /// Reads a trace spec file. Keys: `planted` (`addr:card, ...` with dotted
    /// or integer addresses), `planted_count`, `planted_min`, `planted_max`,
    /// `background_hosts`, `zipf_s`, `background_max`, `duplication_factor`,
    /// `seed`, `windows`, `window_secs`, plus `theta` and `straddle` which
    /// set `background_max` to `theta / 2` or `2 * theta`.
    pub fn from_keys(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&[
            "planted",
            "planted_count",
            "planted_min",
            "planted_max",
            "background_hosts",
            "zipf_s",
            "background_max",
            "duplication_factor",
            "seed",
            "windows",
            "window_secs",
            "theta",
            "straddle",
            "nodes",
            "partition",
            "weights",
            "format",
        ])?;
        let mut spec = TraceSpec::default();
        if let Some(s) = kv.get("seed")? {
            spec.seed = s;
        }
        let theta: u32 = kv.get("theta")?.unwrap_or(1024);
        let straddle: bool = kv.get("straddle")?.unwrap_or(false);
        spec.background_max = if straddle { theta * 2 } else { (theta / 2).max(1) };
        if let Some(m) = kv.get("background_max")? {
            spec.background_max = m;
        }
        if let Some(h) = kv.get("background_hosts")? {
            spec.background_hosts = h;
        }
        if let Some(s) = kv.get("zipf_s")? {
            spec.zipf_s = s;
        }
        if let Some(d) = kv.get("duplication_factor")? {
            spec.duplication_factor = d;
        }
        if let Some(w) = kv.get("windows")? {
            spec.windows = w;
        }
        if let Some(w) = kv.get("window_secs")? {
            spec.window_secs = w;
        }
        if let Some(count) = kv.get::<usize>("planted_count")? {
            let lo = kv.get("planted_min")?.unwrap_or(2 * theta);
            let hi = kv.get("planted_max")?.unwrap_or(16 * theta);
            spec = spec.with_planted_range(count, lo, hi);
        }
        if let Some(list) = kv.raw("planted") {
            let line = kv.line_of("planted");
            for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let parsed = item.split_once(':').and_then(|(a, c)| {
                    let a = a.trim();
                    let addr = a
                        .parse::<std::net::Ipv4Addr>()
                        .map(u32::from)
                        .ok()
                        .or_else(|| a.parse::<u32>().ok())?;
                    Some((addr, c.trim().parse::<u32>().ok()?))
                });
                match parsed {
                    Some(p) => spec.planted.push(p),
                    None => {
                        return Err(Error::Parse {
                            path: kv.path().into(),
                            line,
                            msg: format!("planted: bad entry {item:?}, expected addr:cardinality"),
                        })
                    }
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for &(a, c) in &self.planted {
            if c < 1 {
                return Err(Error::param(format!(
                    "planted host {a:#010x} has cardinality {c}; must be >= 1"
                )));
            }
            if !seen.insert(a) {
                return Err(Error::param(format!("planted address {a:#010x} repeated")));
            }
        }
        if self.background_hosts > 0 && (self.background_max < 1 || self.zipf_s <= 0.0) {
            return Err(Error::param("background needs background_max >= 1 and zipf_s > 0"));
        }
        if self.duplication_factor.is_nan() || self.duplication_factor < 1.0 {
            return Err(Error::param("duplication_factor must be >= 1"));
        }
        if self.windows == 0 || self.window_secs == 0 {
            return Err(Error::param("windows and window_secs must be >= 1"));
        }
        Ok(())
    }

    /// Draws background cardinalities (for inspection and tests).
    pub fn background_cardinalities(&self, rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
        if self.background_hosts == 0 {
            return Ok(Vec::new());
        }
        let zipf = Zipf::new(self.background_max as f64, self.zipf_s)
            .map_err(|e| Error::param(format!("zipf: {e}")))?;
        Ok((0..self.background_hosts)
            .map(|_| zipf.sample(rng) as u32)
            .collect())
    }
}

fn distinct_addresses(rng: &mut ChaCha8Rng, count: usize, exclude: &HashSet<u32>) -> Vec<u32> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a: u32 = rng.random();
        if !exclude.contains(&a) && seen.insert(a) {
            out.push(a);
        }
    }
    out
}

/// Builds a deterministic trace: every planted host gets exactly its
/// cardinality of distinct opposite hosts in each window, background hosts
/// draw theirs from the truncated Zipf distribution, and duplicate pairs
/// are added per `duplication_factor`. Pairs are shuffled within a window
/// and carry timestamps inside it.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<IpPair>> {
    spec.validate()?;
    let mut out = Vec::new();
    for w in 0..spec.windows {
        let mut rng = ChaCha8Rng::seed_from_u64(fmix64(spec.seed ^ (w as u64) << 40));
        let planted_addrs: HashSet<u32> = spec.planted.iter().map(|p| p.0).collect();
        let background = distinct_addresses(&mut rng, spec.background_hosts, &planted_addrs);
        let cards = spec.background_cardinalities(&mut rng)?;
        let hosts = spec
            .planted
            .iter()
            .copied()
            .chain(background.into_iter().zip(cards));
        let mut window: Vec<IpPair> = Vec::new();
        for (a, card) in hosts {
            let opposite = distinct_addresses(&mut rng, card as usize, &HashSet::new());
            let extra = ((card as f64) * (spec.duplication_factor - 1.0)).round() as usize;
            window.extend(opposite.iter().map(|&b| IpPair::new(a, b)));
            for _ in 0..extra {
                let b = opposite[rng.random_range(0..opposite.len())];
                window.push(IpPair::new(a, b));
            }
        }
        window.shuffle(&mut rng);
        let base = w * spec.window_secs;
        for p in &mut window {
            p.ts = Some(base + rng.random_range(0..spec.window_secs));
        }
        out.extend(window);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionMode {
    RoundRobin,
    /// Each distinct `(a, b)` pair always lands on the same node.
    HashByPair,
    /// Each pair goes to node `i` with probability `weights[i]`.
    Skewed(Vec<f64>),
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "round_robin" => Ok(PartitionMode::RoundRobin),
            "hash_by_pair" => Ok(PartitionMode::HashByPair),
            other => {
                let inner = other
                    .strip_prefix("skewed(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::param(format!("unknown partition mode {other:?}")))?;
                let weights = inner
                    .split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::param(format!("bad weight in {other:?}: {e}")))?;
                Ok(PartitionMode::Skewed(weights))
            }
        }
    }
}

/// Splits `trace` into `n` disjoint streams whose concatenation is a
/// permutation of the input.
pub fn partition_stream(
    trace: &[IpPair],
    n: usize,
    mode: &PartitionMode,
    seed: u64,
) -> Result<Vec<Vec<IpPair>>> {
    if n == 0 {
        return Err(Error::param("partition needs n >= 1"));
    }
    let mut parts: Vec<Vec<IpPair>> = vec![Vec::new(); n];
    match mode {
        PartitionMode::RoundRobin => {
            for (i, p) in trace.iter().enumerate() {
                parts[i % n].push(*p);
            }
        }
        PartitionMode::HashByPair => {
            for p in trace {
                let h = fmix64(((p.a as u64) << 32 | p.b as u64) ^ seed);
                parts[(h % n as u64) as usize].push(*p);
            }
        }
        PartitionMode::Skewed(weights) => {
            if weights.len() != n {
                return Err(Error::param(format!(
                    "{} weights given for {n} nodes",
                    weights.len()
                )));
            }
            let sum: f64 = weights.iter().sum();
            if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!(
                    "weights must be non-negative and sum to 1 (sum = {sum})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cumulative: Vec<f64> = weights
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect();
            for p in trace {
                let x: f64 = rng.random();
                let i = cumulative.iter().position(|&c| x < c).unwrap_or(n - 1);
                parts[i].push(*p);
            }
        }
    }
    Ok(parts)
}
