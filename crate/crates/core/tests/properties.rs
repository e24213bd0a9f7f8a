use std::collections::{BTreeMap, BTreeSet, HashSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readsp_core::sketch::{le_std_dev, lsb};
use readsp_core::{
    run_window, DetectionMode, DetectorConfig, DetectorParams, HashSuite, IpPair, LEArray, LinearEstimator,
    MergeMode, ObservationNode, RECube, RECubeConfig, RoughEstimator,
};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

fn pairs(max_hosts: u32, max_len: usize) -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((0..max_hosts, any::<u32>()), 0..max_len).prop_map(|v| {
        // Spread the small host ids over the whole address space.
        v.into_iter().map(|(a, b)| (a.wrapping_mul(0x9e37_79b1), b)).collect()
    })
}

/// Row index by reading LP bits one at a time.
fn naive_row_index(cfg: &RECubeConfig, a: u32, row: usize) -> u32 {
    let r = cfg.r() as u32;
    let w = 32 - r;
    let lp = a >> r;
    let s = cfg.starts()[row] as u32;
    (0..cfg.widths()[row] as u32).fold(0, |acc, j| acc | ((lp >> ((s + j) % w)) & 1) << j)
}

fn small_cube() -> RECubeConfig {
    RECubeConfig::with_uniform_width(2, 4).unwrap()
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn re_merge_is_bitwise_union(x: u8, y: u8) {
        let (a, b) = (RoughEstimator::from_bits(x), RoughEstimator::from_bits(y));
        prop_assert_eq!(a.merge(b, MergeMode::Outer).bits(), x | y);
        prop_assert_eq!(a.merge(b, MergeMode::Inner).bits(), x & y);
    }

    #[test]
    fn le_merge_is_set_union(xs in prop::collection::vec(0usize..256, 0..80), ys in prop::collection::vec(0usize..256, 0..80)) {
        let build = |v: &[usize]| {
            let mut le = LinearEstimator::new(256).unwrap();
            v.iter().for_each(|&p| le.set_bit(p));
            le
        };
        let (a, b) = (build(&xs), build(&ys));
        let union: BTreeSet<usize> = xs.iter().chain(&ys).copied().collect();
        let inter: BTreeSet<usize> = xs.iter().copied().collect::<BTreeSet<_>>()
            .intersection(&ys.iter().copied().collect()).copied().collect();
        prop_assert_eq!(a.merge(&b, MergeMode::Outer).unwrap().ones().collect::<BTreeSet<_>>(), union);
        prop_assert_eq!(a.merge(&b, MergeMode::Inner).unwrap().ones().collect::<BTreeSet<_>>(), inter);
    }

    #[test]
    fn rec_merge_equals_cube_of_concatenated_streams(p in pairs(40, 300), q in pairs(40, 300), seed: u64) {
        let hs = HashSuite::new(seed, 1);
        let build = |s: &[(u32, u32)]| {
            let mut c = RECube::new(small_cube());
            s.iter().for_each(|&(a, b)| c.update(a, b, 2.0, &hs));
            c
        };
        let mut merged = build(&p);
        merged.merge_outer_assign(&build(&q)).unwrap();
        let joined: Vec<(u32, u32)> = p.iter().chain(&q).copied().collect();
        prop_assert_eq!(merged, build(&joined));
    }

    #[test]
    fn derive_then_address_round_trips(a: u32, r in 1u8..=8) {
        for cfg in [RECubeConfig::with_default_rows(r.clamp(4, 6)).unwrap(), RECubeConfig::with_uniform_width(r, 6).unwrap()] {
            let idx = cfg.derive_indices(a);
            prop_assert_eq!(idx.k, a & ((1 << cfg.r()) - 1));
            for (i, &j) in idx.rows.iter().enumerate() {
                prop_assert_eq!(j, naive_row_index(&cfg, a, i));
            }
            prop_assert_eq!(cfg.address(idx.k, &idx.rows), a);
        }
    }

    #[test]
    fn rec_cells_match_per_cell_replay(stream in pairs(30, 400), seed: u64) {
        let cfg = small_cube();
        let hs = HashSuite::new(seed, 1);
        let tau = 2.0;
        let mut cube = RECube::new(cfg.clone());
        stream.iter().for_each(|&(a, b)| cube.update(a, b, tau, &hs));

        let mut expected: BTreeMap<(u32, usize, u32), u8> = BTreeMap::new();
        for &(a, b) in &stream {
            if lsb(hs.rand32(b)) < 2 {
                continue;
            }
            let k = a & 3;
            for row in 0..cfg.rows() {
                *expected.entry((k, row, naive_row_index(&cfg, a, row))).or_default() |= 1 << hs.re_bit(b);
            }
        }
        for k in 0..4u32 {
            for row in 0..cfg.rows() {
                for j in 0..cfg.row_len(row) as u32 {
                    let want = expected.get(&(k, row, j)).copied().unwrap_or(0);
                    prop_assert_eq!(cube.cell(k, row, j).bits(), want);
                }
            }
        }
    }

    #[test]
    fn lea_cells_match_per_cell_replay(stream in pairs(30, 400), seed: u64) {
        let hs = HashSuite::new(seed, 2);
        let mut lea = LEArray::new(2, 8, 64).unwrap();
        stream.iter().for_each(|&(a, b)| lea.update(a, b, &hs));
        for row in 0..2 {
            for col in 0..8 {
                let want: BTreeSet<usize> = stream
                    .iter()
                    .filter(|&&(a, _)| hs.column(row, a, 8) == col)
                    .map(|&(_, b)| hs.le_bit(b, 64))
                    .collect();
                prop_assert_eq!(lea.cell(row, col).ones().collect::<BTreeSet<_>>(), want);
            }
        }
    }

    #[test]
    fn no_false_exclusion(stream in pairs(12, 600), seed: u64, l in 4u8..=6) {
        let cfg = RECubeConfig::with_uniform_width(2, l).unwrap();
        let hs = HashSuite::new(seed, 1);
        let tau = 1.0;
        let mut cube = RECube::new(cfg.clone());
        stream.iter().for_each(|&(a, b)| cube.update(a, b, tau, &hs));
        let recovered: HashSet<u32> = cube.recover_candidates().into_iter().collect();

        let hosts: BTreeSet<u32> = stream.iter().map(|p| p.0).collect();
        for &h in &hosts {
            let idx = cfg.derive_indices(h);
            let and = (0..cfg.rows()).fold(0xffu8, |acc, row| acc & cube.cell(idx.k, row, idx.rows[row]).bits());
            let all_candidates = (0..cfg.rows()).all(|row| cube.cell(idx.k, row, idx.rows[row]).is_candidate());
            if all_candidates && and.count_ones() >= 3 {
                prop_assert!(recovered.contains(&h), "host {:#x} excluded", h);
            }
        }
    }

    #[test]
    fn le_estimate_tracks_distinct_count(n in 1usize..=1024, seed: u64) {
        let hs = HashSuite::new(seed, 1);
        let mut le = LinearEstimator::new(1024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        while seen.len() < n {
            let b: u32 = rng.random();
            if seen.insert(b) {
                le.update(b, &hs);
                // Duplicates never change the bitmap.
                le.update(b, &hs);
            }
        }
        let est = le.estimate();
        prop_assert!(!est.saturated);
        let sd = le_std_dev(n as f64 / 1024.0, 1024);
        prop_assert!((est.value - n as f64).abs() <= 5.0 * sd + 1.0, "n={} est={}", n, est.value);
    }
}

/// Fraction of seeds on which `k` distinct hosts make the RE a candidate.
fn candidate_rate(k: u32, seeds: u64) -> f64 {
    let tau = 7.0;
    let hits = (0..seeds)
        .filter(|&s| {
            let hs = HashSuite::new(s.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ u64::from(k), 1);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut re = RoughEstimator::new();
            let mut seen = HashSet::new();
            while seen.len() < k as usize {
                let b: u32 = rng.random();
                if seen.insert(b) {
                    re.update(b, tau, &hs);
                }
            }
            re.is_candidate()
        })
        .count();
    hits as f64 / seeds as f64
}

#[test]
fn re_candidate_rate_at_theta() {
    let rate = candidate_rate(1024, 4000);
    assert!(rate >= 0.95, "rate {rate}");
}

#[test]
fn re_candidate_rate_matches_exact_probability() {
    // P(at least 3 of 8 bits set) with Binomial(k, 2^-7) qualifying hosts,
    // computed by exact summation.
    for (k, p) in [(128, 0.057_038_510), (1024, 0.967_712_979), (2048, 0.999_869_749)] {
        let seeds = 20_000;
        let rate = candidate_rate(k, seeds);
        let se = (p * (1.0 - p) / seeds as f64).sqrt();
        assert!((rate - p).abs() <= 4.0 * se + 1e-4, "k={k}: rate {rate}, exact {p}");
    }
}

/// Calibration target for hosts far below threshold. The exact probability
/// at k = θ/8 is 0.0570, so this cannot hold with an 8-bit RE and τ = 7.
#[test]
#[ignore = "unattainable: exact rate at k = 128 is 0.0570"]
fn re_candidate_rate_at_theta_over_8_below_five_percent() {
    let rate = candidate_rate(128, 20_000);
    assert!(rate <= 0.05, "rate {rate}");
}

#[test]
fn planted_host_is_found_in_99_of_100_seeds() {
    let theta = 1024u32;
    let config = |seed| DetectorConfig {
        params: DetectorParams { theta, g: 8, le_len: 1 << 14, u_hat: 5, v_hat: 1 << 10 },
        cube: RECubeConfig::with_default_rows(4).unwrap(),
        seed,
    };
    let mut found = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted: u32 = rng.random();
        let mut stream: Vec<IpPair> = (0..4 * theta).map(|i| IpPair::new(planted, i.wrapping_mul(0x9e37_79b1) ^ seed as u32)).collect();
        for _ in 0..500 {
            let host: u32 = rng.random();
            let card = rng.random_range(1..=64);
            stream.extend((0..card).map(|_| IpPair::new(host, rng.random())));
        }
        let mut nodes: Vec<ObservationNode> = (0..2).map(|i| ObservationNode::new(i, config(seed)).unwrap()).collect();
        for p in &stream {
            nodes[rng.random_range(0..2)].observe(*p);
        }
        let report = run_window(&nodes, DetectionMode::Read).unwrap();
        found += usize::from(report.super_point_addresses().contains(&planted));
    }
    assert!(found >= 99, "found in {found}/100 seeds");
}
