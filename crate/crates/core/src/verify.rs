//! Self-check suites run by `readsp verify`.
//!
//! Each suite builds randomized instances from a seed and compares the
//! implementation against a direct, set-based reconstruction.

#![allow(clippy::unusual_byte_groupings)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DetectorConfig;
use crate::hash::HashSuite;
use crate::le_array::LEArray;
use crate::node::ObservationNode;
use crate::re_cube::{RECube, RECubeConfig};
use crate::sketch::{DetectorParams, LinearEstimator, MergeMode, RoughEstimator};
use crate::trace::IpPair;

/// Row indexes of the worked example's candidate RE tuple.
pub const GOLDEN_ROWS: [u32; 3] = [12629, 14620, 5214];
/// Left part of the worked example's address (30 bits).
pub const GOLDEN_LP: u32 = 0b000101_1110_010001_1100_010101_0101;
/// RE array of the worked example.
pub const GOLDEN_K: u32 = 2;

/// Candidate indexes of the worked example, per row.
pub const GOLDEN_R00: u32 = 0b1100_010101_0101;
pub const GOLDEN_R01: u32 = 0b1100_011001_0101;
pub const GOLDEN_R11: u32 = 0b1110_010001_1100;
pub const GOLDEN_R02: u32 = 0b1001_011101_1110;
pub const GOLDEN_R12: u32 = 0b0101_000101_1110;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    pub detail: String,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn golden_config() -> RECubeConfig {
    RECubeConfig::new(2, vec![14, 14, 14], vec![0, 10, 20]).expect("worked example geometry")
}

/// Cube holding the worked example's candidate REs in array `k = 2`. Row 0
/// gets two extra candidates that match nothing.
pub fn golden_cube() -> RECube {
    let mut cube = RECube::new(golden_config());
    let candidate = RoughEstimator::from_bits(0b0010_0111);
    let rows: [&[u32]; 3] = [
        &[GOLDEN_R00, 0b0000_000000_0011, 0b0011_111111_0000],
        &[GOLDEN_R01, GOLDEN_R11],
        &[GOLDEN_R02, GOLDEN_R12],
    ];
    for (i, idxs) in rows.iter().enumerate() {
        for &j in *idxs {
            *cube.cell_mut(GOLDEN_K, i, j) = candidate;
        }
    }
    cube
}

pub fn golden_example() -> SuiteOutcome {
    let cfg = golden_config();
    let address = (GOLDEN_LP << 2) + GOLDEN_K;
    let mut problems = Vec::new();

    let idx = cfg.derive_indices(address);
    if idx.k != GOLDEN_K || idx.rows != GOLDEN_ROWS {
        problems.push(format!("derive_indices gave k={} rows={:?}", idx.k, idx.rows));
    }
    if [GOLDEN_R00, GOLDEN_R11, GOLDEN_R12] != GOLDEN_ROWS {
        problems.push("candidate tuple does not spell the printed indexes".into());
    }
    if cfg.adjacent_overlap_agrees(0, GOLDEN_R00, GOLDEN_R01) {
        problems.push("R00/R01 overlap should mismatch".into());
    }
    if !cfg.adjacent_overlap_agrees(0, GOLDEN_R00, GOLDEN_R11)
        || !cfg.adjacent_overlap_agrees(1, GOLDEN_R11, GOLDEN_R12)
        || !cfg.adjacent_overlap_agrees(2, GOLDEN_R12, GOLDEN_R00)
    {
        problems.push("<R00, R11, R12> overlaps should agree".into());
    }
    if !cfg.adjacent_overlap_agrees(1, GOLDEN_R11, GOLDEN_R02)
        || cfg.adjacent_overlap_agrees(2, GOLDEN_R02, GOLDEN_R00)
    {
        problems.push("R02 should match R11 but fail the wraparound against R00".into());
    }

    let tuples = golden_cube().recover_tuples();
    let rows: Vec<Vec<u32>> = tuples.iter().map(|t| t.rows.clone()).collect();
    if rows != vec![GOLDEN_ROWS.to_vec()] {
        problems.push(format!("recovered tuples {rows:?}"));
    }
    if golden_cube().recover_candidates() != vec![address] {
        problems.push(format!(
            "recovered {:?}, expected [{address:#010x}]",
            golden_cube().recover_candidates()
        ));
    }

    SuiteOutcome {
        name: "golden worked example",
        cases: 1,
        violations: problems.len(),
        detail: if problems.is_empty() {
            format!("indexes {GOLDEN_ROWS:?}, address {address:#010x}")
        } else {
            problems.join("; ")
        },
    }
}

fn small_detector(rng: &mut ChaCha8Rng) -> DetectorConfig {
    DetectorConfig {
        params: DetectorParams {
            theta: 64,
            g: 8,
            le_len: 64,
            u_hat: 2,
            v_hat: 64,
        },
        cube: RECubeConfig::with_uniform_width(rng.random_range(2..=5), rng.random_range(6..=10))
            .expect("uniform geometry"),
        seed: rng.random(),
    }
}

fn random_stream(rng: &mut ChaCha8Rng, sources: usize, pairs: usize) -> Vec<IpPair> {
    let hosts: Vec<u32> = (0..sources).map(|_| rng.random()).collect();
    (0..pairs)
        .map(|_| {
            // Skew towards the first hosts so some become candidates.
            let h = hosts[(rng.random::<f64>().powi(3) * sources as f64) as usize];
            IpPair::new(h, rng.random_range(0..pairs as u32 * 2))
        })
        .collect()
}

/// Cube and candidate set of an n-way split equal those of one node.
pub fn distributed_equivalence(instances: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut detail = String::new();
    for case in 0..instances {
        let cfg = small_detector(&mut rng);
        let n = rng.random_range(2..=4);
        let (sources, len) = (rng.random_range(10..200), rng.random_range(1000..20_000));
        let stream = random_stream(&mut rng, sources, len);
        let mut single = ObservationNode::new(0, cfg.clone()).expect("valid config");
        single.scan_pairs(stream.iter().copied());
        let mut nodes: Vec<ObservationNode> = (0..n)
            .map(|i| ObservationNode::new(i as u16, cfg.clone()).expect("valid config"))
            .collect();
        for p in &stream {
            nodes[rng.random_range(0..n)].observe(*p);
        }
        let merged = RECube::merge_outer(nodes.iter().map(|nd| nd.rec().clone())).expect("same geometry");
        if &merged != single.rec() || merged.recover_candidates() != single.rec().recover_candidates() {
            violations += 1;
            if detail.is_empty() {
                detail = format!("case {case}: distributed cube differs from single node");
            }
        }
    }
    SuiteOutcome { name: "distributed equivalence", cases: instances, violations, detail }
}

/// Brute-force view of one node's LE array: set bits per `(row, column)`.
type CellBits = BTreeMap<(usize, usize), BTreeSet<usize>>;

fn brute_force_cells(stream: &[IpPair], hs: &HashSuite, v_hat: usize, le_len: usize) -> CellBits {
    let mut cells = CellBits::new();
    for p in stream {
        for row in 0..hs.rows() {
            cells
                .entry((row, hs.column(row, p.a, v_hat)))
                .or_default()
                .insert(hs.le_bit(p.b, le_len));
        }
    }
    cells
}

fn to_le(bits: &BTreeSet<usize>, len: usize) -> LinearEstimator {
    let mut le = LinearEstimator::new(len).expect("valid length");
    bits.iter().for_each(|&b| le.set_bit(b));
    le
}

/// Exclusive ⊆ per-node-inner-then-outer ⊆ outer-then-inner, checked bit for
/// bit against a set-based reconstruction of all three.
pub fn theorem1_sandwich(instances: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut checked = 0;
    let mut detail = String::new();
    for case in 0..instances {
        let n = rng.random_range(1..=4);
        let u_hat = rng.random_range(1..=3);
        let le_len = [8usize, 16, 32, 64][rng.random_range(0..4)];
        let v_hat = [2usize, 4, 8, 16][rng.random_range(0..4)];
        let hs = HashSuite::new(rng.random(), u_hat);
        let (sources, len) = (rng.random_range(2..30), rng.random_range(1..=1000));
        let stream = random_stream(&mut rng, sources, len);
        let parts: Vec<Vec<IpPair>> = {
            let mut parts = vec![Vec::new(); n];
            for p in &stream {
                parts[rng.random_range(0..n)].push(*p);
            }
            parts
        };

        let arrays: Vec<LEArray> = parts
            .iter()
            .map(|part| {
                let mut lea = LEArray::new(u_hat, v_hat, le_len).expect("valid shape");
                part.iter().for_each(|p| lea.update(p.a, p.b, &hs));
                lea
            })
            .collect();
        let mut global = arrays[0].clone();
        arrays[1..].iter().for_each(|a| global.merge_outer_assign(a).expect("same shape"));
        let brute: Vec<CellBits> = parts
            .iter()
            .map(|part| brute_force_cells(part, &hs, v_hat, le_len))
            .collect();

        let sources: BTreeSet<u32> = stream.iter().map(|p| p.a).collect();
        for &c in &sources {
            checked += 1;
            let cols: Vec<usize> = (0..u_hat).map(|i| hs.column(i, c, v_hat)).collect();
            let excl: BTreeSet<usize> = stream
                .iter()
                .filter(|p| p.a == c)
                .map(|p| hs.le_bit(p.b, le_len))
                .collect();
            let empty = BTreeSet::new();
            let cell = |node: usize, row: usize| brute[node].get(&(row, cols[row])).unwrap_or(&empty);
            let read_bits: BTreeSet<usize> = (0..n)
                .flat_map(|node| {
                    (1..u_hat).fold(cell(node, 0).clone(), |acc, row| {
                        acc.intersection(cell(node, row)).copied().collect()
                    })
                })
                .collect();
            let naive_bits: BTreeSet<usize> = (1..u_hat).fold(
                (0..n).flat_map(|node| cell(node, 0).iter().copied()).collect(),
                |acc: BTreeSet<usize>, row| {
                    let union: BTreeSet<usize> =
                        (0..n).flat_map(|node| cell(node, row).iter().copied()).collect();
                    acc.intersection(&union).copied().collect()
                },
            );

            let mut l_read = arrays[0].extract_candidate(c, &hs).le;
            for a in &arrays[1..] {
                l_read
                    .merge_assign(&a.extract_candidate(c, &hs).le, MergeMode::Outer)
                    .expect("same length");
            }
            let l_naive = global.extract_candidate(c, &hs).le;
            let l_excl = to_le(&excl, le_len);

            let ok = l_read == to_le(&read_bits, le_len)
                && l_naive == to_le(&naive_bits, le_len)
                && l_excl.is_subset_of(&l_read)
                && l_read.is_subset_of(&l_naive)
                && l_excl.popcount() <= l_read.popcount()
                && l_read.popcount() <= l_naive.popcount();
            if !ok {
                violations += 1;
                if detail.is_empty() {
                    detail = format!(
                        "case {case}, candidate {c:#010x}: excl {} read {} naive {}",
                        l_excl.popcount(),
                        l_read.popcount(),
                        l_naive.popcount()
                    );
                }
            }
        }
    }
    if detail.is_empty() {
        detail = format!("{checked} candidate checks");
    }
    SuiteOutcome { name: "theorem-1 sandwich", cases: instances, violations, detail }
}

/// Outer merges of cubes and LE arrays are commutative, associative and
/// idempotent; scanning is order-invariant.
pub fn merge_algebra(cases: usize, seed: u64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DetectorConfig {
        params: DetectorParams { theta: 16, g: 8, le_len: 64, u_hat: 2, v_hat: 8 },
        cube: RECubeConfig::with_uniform_width(2, 4).expect("uniform geometry"),
        seed,
    };
    let mut violations = 0;
    let mut detail = String::new();
    let build = |pairs: &[IpPair]| {
        let mut node = ObservationNode::new(0, cfg.clone()).expect("valid config");
        node.scan_pairs(pairs.iter().copied());
        node
    };
    for case in 0..cases {
        let streams: Vec<Vec<IpPair>> = (0..3)
            .map(|_| {
                let len = rng.random_range(0..60);
                random_stream(&mut rng, 6, len.max(1))
            })
            .collect();
        let nodes: Vec<ObservationNode> = streams.iter().map(|s| build(s)).collect();
        let (a, b, c) = (nodes[0].rec(), nodes[1].rec(), nodes[2].rec());
        let m = |x: &RECube, y: &RECube| {
            let mut z = x.clone();
            z.merge_outer_assign(y).expect("same geometry");
            z
        };
        let la = |x: &LEArray, y: &LEArray| {
            let mut z = x.clone();
            z.merge_outer_assign(y).expect("same shape");
            z
        };
        let (ea, eb, ec) = (nodes[0].lea(), nodes[1].lea(), nodes[2].lea());

        let mut shuffled = streams[0].clone();
        shuffled.shuffle(&mut rng);
        let reordered = build(&shuffled);

        let ok = m(a, b) == m(b, a)
            && m(&m(a, b), c) == m(a, &m(b, c))
            && m(a, a) == *a
            && la(ea, eb) == la(eb, ea)
            && la(&la(ea, eb), ec) == la(ea, &la(eb, ec))
            && la(ea, ea) == *ea
            && reordered.rec() == a
            && reordered.lea() == ea;
        if !ok {
            violations += 1;
            if detail.is_empty() {
                detail = format!("case {case} violated merge algebra");
            }
        }
    }
    SuiteOutcome { name: "merge algebra", cases, violations, detail }
}

/// All suites at their default sizes.
pub fn run_all(seed: u64) -> Vec<SuiteOutcome> {
    vec![
        golden_example(),
        distributed_equivalence(100, seed),
        theorem1_sandwich(1000, seed),
        merge_algebra(10_000, seed),
    ]
}
