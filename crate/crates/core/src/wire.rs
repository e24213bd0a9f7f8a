//! Byte-exact payloads exchanged between observation nodes and the
//! coordinator. All integers are little-endian.
//!
//! Every payload starts with a 12-byte header:
//!
//! | bytes | field                 |
//! |-------|-----------------------|
//! | 0..4  | magic `"READ"`        |
//! | 4     | version (1)           |
//! | 5     | stage                 |
//! | 6..8  | node id, u16          |
//! | 8..12 | window id, u32        |
//!
//! * stage 1 (node → server): `r u8, u u8, l[0..u] u8, s[0..u] u8`, then the
//!   cube cells (one byte each) in k-major order.
//! * stage 2 (server → node): `count u32`, then `count` candidate u32s.
//! * stage 3 (node → server): `count u32, le_len u32`, then `count` records
//!   of `candidate u32` followed by `le_len / 8` LE bytes.
//! * stage 4 (node → server, reference mode only): `u_hat u32, v_hat u32,
//!   le_len u32`, then every LE array cell in row-major order.
//!
//! LE bit `p` is stored in byte `p / 8` at bit `p % 8`.

use crate::error::{Error, Result};
use crate::le_array::{CandidateLE, LEArray};
use crate::re_cube::{RECube, RECubeConfig};
use crate::sketch::LinearEstimator;

pub const MAGIC: [u8; 4] = *b"READ";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const STAGE2_HEADER_LEN: usize = HEADER_LEN + 4;
pub const STAGE3_HEADER_LEN: usize = HEADER_LEN + 8;
pub const LEA_HEADER_LEN: usize = HEADER_LEN + 12;

/// Node id used by the coordinator for the stage-2 broadcast.
pub const SERVER_NODE_ID: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stage {
    Cube = 1,
    Candidates = 2,
    CandidateLes = 3,
    FullLea = 4,
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::Cube),
            2 => Ok(Stage::Candidates),
            3 => Ok(Stage::CandidateLes),
            4 => Ok(Stage::FullLea),
            other => Err(Error::payload(format!("unknown stage {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub stage: Stage,
    pub node_id: u16,
    pub window_id: u32,
}

impl Header {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.stage as u8);
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.window_id.to_le_bytes());
    }
}

/// Size of a stage-1 header for a cube with `rows` rows.
pub fn stage1_header_len(rows: usize) -> usize {
    HEADER_LEN + 2 + 2 * rows
}

/// Size of a stage-3 payload carrying `count` LEs of `le_len` bits.
pub fn stage3_len(count: usize, le_len: usize) -> usize {
    STAGE3_HEADER_LEN + count * (4 + le_len / 8)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::payload(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, expected: Stage) -> Result<Header> {
        if self.take(4)? != MAGIC {
            return Err(Error::payload("bad magic"));
        }
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::payload(format!("unsupported version {version}")));
        }
        let stage = Stage::try_from(self.u8()?)?;
        if stage != expected {
            return Err(Error::payload(format!(
                "expected stage {:?}, got {stage:?}",
                expected
            )));
        }
        Ok(Header {
            stage,
            node_id: self.u16()?,
            window_id: self.u32()?,
        })
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::payload(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_cube(node_id: u16, window_id: u32, cube: &RECube) -> Vec<u8> {
    let cfg = cube.config();
    let mut out = Vec::with_capacity(stage1_header_len(cfg.rows()) + cfg.memory_bytes());
    Header { stage: Stage::Cube, node_id, window_id }.write(&mut out);
    out.push(cfg.r());
    out.push(cfg.rows() as u8);
    out.extend_from_slice(cfg.widths());
    out.extend_from_slice(cfg.starts());
    cube.write_raw(&mut out);
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<(Header, RECube)> {
    let mut rd = Reader::new(bytes);
    let header = rd.header(Stage::Cube)?;
    let r = rd.u8()?;
    let u = rd.u8()? as usize;
    let widths = rd.take(u)?.to_vec();
    let starts = rd.take(u)?.to_vec();
    let cfg = RECubeConfig::new(r, widths, starts)?;
    let cells = rd.take(cfg.memory_bytes())?;
    let cube = RECube::from_raw(cfg, cells)?;
    rd.finish()?;
    Ok((header, cube))
}

pub fn encode_candidates(node_id: u16, window_id: u32, candidates: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(STAGE2_HEADER_LEN + 4 * candidates.len());
    Header { stage: Stage::Candidates, node_id, window_id }.write(&mut out);
    out.extend_from_slice(&(candidates.len() as u32).to_le_bytes());
    for c in candidates {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_candidates(bytes: &[u8]) -> Result<(Header, Vec<u32>)> {
    let mut rd = Reader::new(bytes);
    let header = rd.header(Stage::Candidates)?;
    let count = rd.u32()? as usize;
    let body = rd.take(count.checked_mul(4).ok_or_else(|| Error::payload("count overflow"))?)?;
    rd.finish()?;
    let cands = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, cands))
}

pub fn encode_candidate_les(
    node_id: u16,
    window_id: u32,
    le_len: usize,
    les: &[CandidateLE],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(stage3_len(les.len(), le_len));
    Header { stage: Stage::CandidateLes, node_id, window_id }.write(&mut out);
    out.extend_from_slice(&(les.len() as u32).to_le_bytes());
    out.extend_from_slice(&(le_len as u32).to_le_bytes());
    for c in les {
        debug_assert_eq!(c.le.len(), le_len);
        out.extend_from_slice(&c.candidate.to_le_bytes());
        c.le.write_bytes(&mut out);
    }
    out
}

pub fn decode_candidate_les(bytes: &[u8]) -> Result<(Header, usize, Vec<CandidateLE>)> {
    let mut rd = Reader::new(bytes);
    let header = rd.header(Stage::CandidateLes)?;
    let count = rd.u32()? as usize;
    let le_len = rd.u32()? as usize;
    crate::sketch::check_le_len(le_len)?;
    let mut les = Vec::with_capacity(count.min(bytes.len()));
    for _ in 0..count {
        let candidate = rd.u32()?;
        let le = LinearEstimator::from_bytes(rd.take(le_len / 8)?, le_len)?;
        les.push(CandidateLE { candidate, le });
    }
    rd.finish()?;
    Ok((header, le_len, les))
}

pub fn encode_lea(node_id: u16, window_id: u32, lea: &LEArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(LEA_HEADER_LEN + lea.memory_bytes());
    Header { stage: Stage::FullLea, node_id, window_id }.write(&mut out);
    out.extend_from_slice(&(lea.u_hat() as u32).to_le_bytes());
    out.extend_from_slice(&(lea.v_hat() as u32).to_le_bytes());
    out.extend_from_slice(&(lea.le_len() as u32).to_le_bytes());
    lea.write_raw(&mut out);
    out
}

pub fn decode_lea(bytes: &[u8]) -> Result<(Header, LEArray)> {
    let mut rd = Reader::new(bytes);
    let header = rd.header(Stage::FullLea)?;
    let u_hat = rd.u32()? as usize;
    let v_hat = rd.u32()? as usize;
    let le_len = rd.u32()? as usize;
    crate::sketch::check_le_len(le_len)?;
    let size = u_hat
        .checked_mul(v_hat)
        .and_then(|x| x.checked_mul(le_len / 8))
        .ok_or_else(|| Error::payload("LE array size overflow"))?;
    let lea = LEArray::from_raw(u_hat, v_hat, le_len, rd.take(size)?)?;
    rd.finish()?;
    Ok((header, lea))
}
