//! Observation node: scans its share of the IP-pair stream for one window
//! and answers the three protocol stages.

use crate::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::hash::HashSuite;
use crate::le_array::{CandidateLE, LEArray};
use crate::re_cube::RECube;
use crate::sketch::RoughThreshold;
use crate::trace::{IpPair, MalformedRecord, Record};
use crate::wire;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub pairs: u64,
    pub malformed: u64,
    pub first_malformed: Option<MalformedRecord>,
}

pub struct ObservationNode {
    node_id: u16,
    config: DetectorConfig,
    hs: HashSuite,
    threshold: RoughThreshold,
    window_id: u32,
    rec: RECube,
    lea: LEArray,
    stats: ScanStats,
}

impl std::fmt::Debug for ObservationNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationNode")
            .field("node_id", &self.node_id)
            .field("window_id", &self.window_id)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl ObservationNode {
    pub fn new(node_id: u16, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let p = &config.params;
        let lea = LEArray::new(p.u_hat, p.v_hat, p.le_len)?;
        Ok(Self {
            node_id,
            hs: config.hash_suite(),
            threshold: RoughThreshold::from_tau(config.tau()?),
            window_id: 0,
            rec: RECube::new(config.cube.clone()),
            lea,
            stats: ScanStats::default(),
            config,
        })
    }

    pub fn node_id(&self) -> u16 {
        self.node_id
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn window_id(&self) -> u32 {
        self.window_id
    }

    pub fn stats(&self) -> &ScanStats {
        &self.stats
    }

    pub fn rec(&self) -> &RECube {
        &self.rec
    }

    pub fn lea(&self) -> &LEArray {
        &self.lea
    }

    pub fn hash_suite(&self) -> &HashSuite {
        &self.hs
    }

    /// Clears both structures and starts window `window_id`.
    pub fn start_window(&mut self, window_id: u32) -> Result<()> {
        let p = &self.config.params;
        self.rec = RECube::new(self.config.cube.clone());
        self.lea = LEArray::new(p.u_hat, p.v_hat, p.le_len)?;
        self.stats = ScanStats::default();
        self.window_id = window_id;
        Ok(())
    }

    /// Updates the cube and the LE array with one pair.
    #[inline]
    pub fn observe(&mut self, pair: IpPair) {
        if let Some(bit) = self.threshold.qualifying_bit(pair.b, &self.hs) {
            self.rec.record(pair.a, bit);
        }
        let bit = self.hs.le_bit(pair.b, self.config.params.le_len);
        self.lea.record(pair.a, bit, &self.hs);
        self.stats.pairs += 1;
    }

    pub fn scan_pairs<I: IntoIterator<Item = IpPair>>(&mut self, pairs: I) {
        for p in pairs {
            self.observe(p);
        }
    }

    /// Scans records, skipping and counting malformed ones.
    pub fn scan_window<I: IntoIterator<Item = Record>>(&mut self, records: I) -> &ScanStats {
        for rec in records {
            match rec {
                Ok(p) => self.observe(p),
                Err(m) => {
                    self.stats.malformed += 1;
                    self.stats.first_malformed.get_or_insert(m);
                }
            }
        }
        &self.stats
    }

    pub fn stage1_payload(&self) -> Vec<u8> {
        wire::encode_cube(self.node_id, self.window_id, &self.rec)
    }

    /// Inner-merged LE of every candidate, in the given order.
    pub fn candidate_les(&self, candidates: &[u32]) -> Vec<CandidateLE> {
        candidates
            .iter()
            .map(|&c| self.lea.extract_candidate(c, &self.hs))
            .collect()
    }

    pub fn stage3_payload(&self, candidates: &[u32]) -> Vec<u8> {
        wire::encode_candidate_les(
            self.node_id,
            self.window_id,
            self.config.params.le_len,
            &self.candidate_les(candidates),
        )
    }

    /// Decodes the coordinator's stage-2 broadcast and builds the stage-3 reply.
    pub fn answer_stage2(&self, broadcast: &[u8]) -> Result<Vec<u8>> {
        let (header, candidates) = wire::decode_candidates(broadcast)?;
        if header.window_id != self.window_id {
            return Err(Error::ConfigMismatch(format!(
                "node {} is in window {} but received candidates for window {}",
                self.node_id, self.window_id, header.window_id
            )));
        }
        Ok(self.stage3_payload(&candidates))
    }

    /// Whole LE array, for the reference mode that ships it to the server.
    pub fn full_lea_payload(&self) -> Vec<u8> {
        wire::encode_lea(self.node_id, self.window_id, &self.lea)
    }
}
