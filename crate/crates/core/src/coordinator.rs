//! Global server side of the three-stage protocol.
//!
//! 1. every node ships its cube; the server outer-merges them and recovers
//!    the global candidates;
//! 2. the server broadcasts the candidate list;
//! 3. every node answers with one inner-merged LE per candidate; the server
//!    outer-merges them per candidate and estimates.
//!
//! All exchanges go through the byte-exact payloads of [`crate::wire`].

use crate::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::le_array::{estimate_candidates, CandidateEstimate, LEArray};
use crate::node::ObservationNode;
use crate::re_cube::RECube;
use crate::sketch::{LinearEstimator, MergeMode};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectionMode {
    /// Candidate LEs only.
    #[default]
    Read,
    /// Every node ships its whole LE array; the server ORs them and
    /// inner-merges per candidate.
    NaiveReference,
}

impl DetectionMode {
    pub fn name(self) -> &'static str {
        match self {
            DetectionMode::Read => "read",
            DetectionMode::NaiveReference => "naive_reference",
        }
    }
}

/// Bytes exchanged between one node and the server in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeTraffic {
    pub node_id: u16,
    pub stage1: usize,
    pub stage2: usize,
    /// Stage-3 candidate LEs, or the whole LE array in reference mode.
    pub stage3: usize,
}

impl NodeTraffic {
    pub fn total(&self) -> usize {
        self.stage1 + self.stage2 + self.stage3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperPoint {
    pub address: u32,
    pub estimate: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub window_id: u32,
    pub mode: DetectionMode,
    /// Global candidates in broadcast order (ascending address).
    pub candidates: Vec<u32>,
    /// Estimate of every candidate, same order as `candidates`.
    pub estimates: Vec<CandidateEstimate>,
    /// Descending estimate, then ascending address.
    pub super_points: Vec<SuperPoint>,
    /// In node arrival order.
    pub per_node: Vec<NodeTraffic>,
    pub master_structure_bytes: usize,
}

impl WindowReport {
    pub fn candidates_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn stage1_total(&self) -> usize {
        self.per_node.iter().map(|n| n.stage1).sum()
    }

    pub fn stage2_total(&self) -> usize {
        self.per_node.iter().map(|n| n.stage2).sum()
    }

    pub fn stage3_total(&self) -> usize {
        self.per_node.iter().map(|n| n.stage3).sum()
    }

    /// Largest per-node share of the master structure that was transmitted.
    pub fn transmitted_fraction(&self) -> f64 {
        self.per_node
            .iter()
            .map(|n| n.total() as f64 / self.master_structure_bytes as f64)
            .fold(0.0, f64::max)
    }

    pub fn super_point_addresses(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.super_points.iter().map(|s| s.address).collect();
        v.sort_unstable();
        v
    }
}

/// Per-node traffic of the candidate path for `w` candidates, computed from
/// the geometry alone.
pub fn read_traffic(config: &DetectorConfig, w: usize) -> NodeTraffic {
    NodeTraffic {
        node_id: 0,
        stage1: wire::stage1_header_len(config.cube.rows()) + config.cube.memory_bytes(),
        stage2: wire::STAGE2_HEADER_LEN + 4 * w,
        stage3: wire::stage3_len(w, config.params.le_len),
    }
}

/// Per-node transmitted fraction of the master structure for `w` candidates.
pub fn read_fraction(config: &DetectorConfig, w: usize) -> f64 {
    read_traffic(config, w).total() as f64 / config.master_structure_bytes() as f64
}

fn check_nodes<'a>(nodes: &[&'a ObservationNode]) -> Result<(&'a DetectorConfig, u32)> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::param("run_window needs at least one node"))?;
    for n in &nodes[1..] {
        if n.config() != first.config() {
            return Err(Error::ConfigMismatch(format!(
                "node {} config differs from node {} (seed {} vs {})",
                n.node_id(),
                first.node_id(),
                n.config().seed,
                first.config().seed
            )));
        }
        if n.window_id() != first.window_id() {
            return Err(Error::ConfigMismatch(format!(
                "node {} is in window {}, node {} in window {}",
                n.node_id(),
                n.window_id(),
                first.node_id(),
                first.window_id()
            )));
        }
    }
    Ok((first.config(), first.window_id()))
}

/// Runs the protocol for one window over nodes that have finished scanning.
pub fn run_window<'a, I>(nodes: I, mode: DetectionMode) -> Result<WindowReport>
where
    I: IntoIterator<Item = &'a ObservationNode>,
{
    let nodes: Vec<&ObservationNode> = nodes.into_iter().collect();
    let (config, window_id) = check_nodes(&nodes)?;
    let hs = config.hash_suite();
    let mut per_node: Vec<NodeTraffic> = nodes
        .iter()
        .map(|n| NodeTraffic { node_id: n.node_id(), ..Default::default() })
        .collect();

    // Stage 1.
    let mut global: Option<RECube> = None;
    for (n, traffic) in nodes.iter().zip(per_node.iter_mut()) {
        let payload = n.stage1_payload();
        traffic.stage1 = payload.len();
        let (_, cube) = wire::decode_cube(&payload)?;
        match global.as_mut() {
            None => global = Some(cube),
            Some(g) => g.merge_outer_assign(&cube)?,
        }
    }
    let global = global.expect("at least one node");
    let candidates = global.recover_candidates();

    let merged: Vec<LinearEstimator> = match mode {
        DetectionMode::Read => {
            // Stage 2.
            let broadcast = wire::encode_candidates(wire::SERVER_NODE_ID, window_id, &candidates);
            let mut merged: Option<Vec<LinearEstimator>> = None;
            for (n, traffic) in nodes.iter().zip(per_node.iter_mut()) {
                traffic.stage2 = broadcast.len();
                // Stage 3.
                let reply = n.answer_stage2(&broadcast)?;
                traffic.stage3 = reply.len();
                let (header, _, les) = wire::decode_candidate_les(&reply)?;
                if header.node_id != n.node_id() || les.len() != candidates.len() {
                    return Err(Error::payload(format!(
                        "node {} answered with {} LEs for {} candidates",
                        header.node_id,
                        les.len(),
                        candidates.len()
                    )));
                }
                for (c, got) in candidates.iter().zip(&les) {
                    if got.candidate != *c {
                        return Err(Error::CandidateMismatch { expected: *c, found: got.candidate });
                    }
                }
                match merged.as_mut() {
                    None => merged = Some(les.into_iter().map(|c| c.le).collect()),
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&les) {
                            a.merge_assign(&c.le, MergeMode::Outer)?;
                        }
                    }
                }
            }
            merged.unwrap_or_default()
        }
        DetectionMode::NaiveReference => {
            let mut global_lea: Option<LEArray> = None;
            for (n, traffic) in nodes.iter().zip(per_node.iter_mut()) {
                let payload = n.full_lea_payload();
                traffic.stage3 = payload.len();
                let (_, lea) = wire::decode_lea(&payload)?;
                match global_lea.as_mut() {
                    None => global_lea = Some(lea),
                    Some(g) => g.merge_outer_assign(&lea)?,
                }
            }
            let global_lea = global_lea.expect("at least one node");
            candidates
                .iter()
                .map(|&c| global_lea.extract_candidate(c, &hs).le)
                .collect()
        }
    };

    let estimates = estimate_candidates(
        candidates.iter().copied().zip(merged.iter()),
        config.params.theta,
    );
    let mut super_points: Vec<SuperPoint> = estimates
        .iter()
        .filter(|e| e.is_super)
        .map(|e| SuperPoint {
            address: e.candidate,
            estimate: e.estimate,
            saturated: e.saturated,
        })
        .collect();
    super_points.sort_by(|a, b| {
        b.estimate
            .total_cmp(&a.estimate)
            .then(a.address.cmp(&b.address))
    });

    Ok(WindowReport {
        window_id,
        mode,
        candidates,
        estimates,
        super_points,
        per_node,
        master_structure_bytes: config.master_structure_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::re_cube::RECubeConfig;
    use crate::sketch::DetectorParams;
    use crate::trace::IpPair;

    fn cfg(seed: u64) -> DetectorConfig {
        DetectorConfig {
            params: DetectorParams { theta: 64, g: 8, le_len: 1024, u_hat: 3, v_hat: 256 },
            cube: RECubeConfig::with_uniform_width(4, 8).unwrap(),
            seed,
        }
    }

    fn stream() -> Vec<IpPair> {
        let mut v = Vec::new();
        for b in 0..600u32 {
            v.push(IpPair::new(0x0a00_0001, b.wrapping_mul(0x9E37_79B1)));
        }
        for h in 0..300u32 {
            for b in 0..5u32 {
                v.push(IpPair::new(h.wrapping_mul(0x0101_0107), b + h * 7));
            }
        }
        v
    }

    fn nodes(n: usize, seed: u64, pairs: &[IpPair]) -> Vec<ObservationNode> {
        let mut nodes: Vec<_> = (0..n)
            .map(|i| ObservationNode::new(i as u16, cfg(seed)).unwrap())
            .collect();
        for (i, p) in pairs.iter().enumerate() {
            nodes[i % n].observe(*p);
        }
        nodes
    }

    #[test]
    fn detects_planted_host() {
        let report = run_window(&nodes(3, 1, &stream()), DetectionMode::Read).unwrap();
        assert_eq!(report.super_point_addresses(), vec![0x0a00_0001]);
        let sp = report.super_points[0];
        assert!((sp.estimate - 600.0).abs() < 60.0, "{sp:?}");
    }

    #[test]
    fn single_node_equals_protocol_with_one_node() {
        let pairs = stream();
        let report = run_window(&nodes(1, 2, &pairs), DetectionMode::Read).unwrap();
        let node = &nodes(1, 2, &pairs)[0];
        let cands = node.rec().recover_candidates();
        assert_eq!(report.candidates, cands);
        for (c, e) in cands.iter().zip(&report.estimates) {
            let le = node.lea().extract_candidate(*c, node.hash_suite()).le;
            assert_eq!(le.estimate().value, e.estimate);
        }
    }

    #[test]
    fn traffic_accounting() {
        let report = run_window(&nodes(2, 3, &stream()), DetectionMode::Read).unwrap();
        let w = report.candidates_count();
        let expected = read_traffic(&cfg(3), w);
        for t in &report.per_node {
            assert_eq!((t.stage1, t.stage2, t.stage3), (expected.stage1, expected.stage2, expected.stage3));
        }
        assert_eq!(report.stage3_total(), 2 * wire::stage3_len(w, 1024));
    }

    #[test]
    fn naive_mode_ships_whole_array_and_never_estimates_lower() {
        let pairs = stream();
        let read = run_window(&nodes(3, 4, &pairs), DetectionMode::Read).unwrap();
        let naive = run_window(&nodes(3, 4, &pairs), DetectionMode::NaiveReference).unwrap();
        assert_eq!(read.candidates, naive.candidates);
        let c = cfg(4);
        for t in &naive.per_node {
            assert!(t.total() >= c.lea_bytes());
        }
        for (r, n) in read.estimates.iter().zip(&naive.estimates) {
            assert!(r.estimate <= n.estimate);
        }
    }

    #[test]
    fn seed_mismatch_aborts() {
        let mut ns = nodes(2, 5, &stream());
        ns.push(ObservationNode::new(9, cfg(6)).unwrap());
        let err = run_window(&ns, DetectionMode::Read).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
        assert!(run_window(&[], DetectionMode::Read).is_err());
    }

    #[test]
    fn empty_window_reports_only_headers() {
        let ns = nodes(2, 7, &[]);
        let report = run_window(&ns, DetectionMode::Read).unwrap();
        assert_eq!(report.candidates_count(), 0);
        let t = report.per_node[0];
        assert_eq!(t.stage2, wire::STAGE2_HEADER_LEN);
        assert_eq!(t.stage3, wire::STAGE3_HEADER_LEN);
    }

    #[test]
    fn default_geometry_fraction_for_a_thousand_candidates() {
        let f = read_fraction(&DetectorConfig::default(), 1000);
        assert!((0.0150..0.0160).contains(&f), "{f}");
    }
}
