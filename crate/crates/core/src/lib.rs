//! Distributed super point detection over IP-pair streams.
//!
//! Observation nodes scan their share of traffic into a rough estimator cube
//! ([`RECube`]) and a linear estimator array ([`LEArray`]). A coordinator
//! merges the cubes, recovers candidate hosts, collects one inner-merged
//! linear estimator per candidate from every node and reports hosts whose
//! estimated opposite-host cardinality exceeds the threshold.

pub mod config;
pub mod coordinator;
pub mod error;
pub mod harness;
pub mod hash;
pub mod le_array;
pub mod node;
pub mod re_cube;
pub mod report;
pub mod sketch;
pub mod trace;
pub mod verify;
pub mod wire;

pub use config::{DetectorConfig, KeyValues};
pub use coordinator::{run_window, DetectionMode, NodeTraffic, SuperPoint, WindowReport};
pub use error::{Error, Result};
pub use harness::{generate_trace, partition_stream, Metrics, OracleTable, PartitionMode, TraceSpec};
pub use hash::HashSuite;
pub use le_array::{CandidateEstimate, CandidateLE, LEArray};
pub use node::{ObservationNode, ScanStats};
pub use re_cube::{CandidateTuple, RECube, RECubeConfig};
pub use sketch::{DetectorParams, LinearEstimator, MergeMode, RoughEstimator};
pub use trace::{IpPair, TraceFormat};
