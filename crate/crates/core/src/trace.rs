//! IP-pair traces: 12-byte big-endian binary records or CSV lines.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 12;

/// One observed `<a, b>` pair: `a` is the host inside the monitored
/// network, `b` its opposite host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpPair {
    pub a: u32,
    pub b: u32,
    pub ts: Option<u32>,
}

impl IpPair {
    pub fn new(a: u32, b: u32) -> Self {
        Self { a, b, ts: None }
    }

    pub fn with_ts(a: u32, b: u32, ts: u32) -> Self {
        Self { a, b, ts: Some(ts) }
    }
}

/// A record that could not be parsed; the scan skips and counts it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRecord {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for MalformedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.line, self.reason)
    }
}

pub type Record = std::result::Result<IpPair, MalformedRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Csv,
}

impl TraceFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
            _ => TraceFormat::Binary,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Binary => "bin",
            TraceFormat::Csv => "csv",
        }
    }
}

pub fn encode_binary(pairs: &[IpPair]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pairs.len() * RECORD_LEN);
    for p in pairs {
        out.extend_from_slice(&p.a.to_be_bytes());
        out.extend_from_slice(&p.b.to_be_bytes());
        out.extend_from_slice(&p.ts.unwrap_or(0).to_be_bytes());
    }
    out
}

/// Binary records always carry a timestamp.
pub fn decode_binary(bytes: &[u8]) -> Vec<Record> {
    let mut out: Vec<Record> = bytes
        .chunks_exact(RECORD_LEN)
        .map(|c| {
            let f = |i: usize| u32::from_be_bytes(c[i..i + 4].try_into().unwrap());
            Ok(IpPair::with_ts(f(0), f(4), f(8)))
        })
        .collect();
    let rem = bytes.len() % RECORD_LEN;
    if rem != 0 {
        out.push(Err(MalformedRecord {
            line: bytes.len() / RECORD_LEN + 1,
            reason: format!("truncated record of {rem} bytes"),
        }));
    }
    out
}

pub fn parse_csv_line(line: &str, line_no: usize) -> Option<Record> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    let bad = |reason: String| Some(Err(MalformedRecord { line: line_no, reason }));
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(2..=3).contains(&fields.len()) {
        return bad(format!("expected 2 or 3 fields, got {}", fields.len()));
    }
    let a = match fields[0].parse::<Ipv4Addr>() {
        Ok(a) => u32::from(a),
        Err(_) => return bad(format!("bad address {:?}", fields[0])),
    };
    let b = match fields[1].parse::<Ipv4Addr>() {
        Ok(b) => u32::from(b),
        Err(_) => return bad(format!("bad address {:?}", fields[1])),
    };
    let ts = match fields.get(2) {
        None => None,
        Some(t) => match t.parse::<u32>() {
            Ok(t) => Some(t),
            Err(_) => return bad(format!("bad timestamp {t:?}")),
        },
    };
    Some(Ok(IpPair { a, b, ts }))
}

pub fn write_csv<W: Write>(mut w: W, pairs: &[IpPair]) -> Result<()> {
    for p in pairs {
        match p.ts {
            Some(ts) => writeln!(w, "{},{},{}", Ipv4Addr::from(p.a), Ipv4Addr::from(p.b), ts)?,
            None => writeln!(w, "{},{}", Ipv4Addr::from(p.a), Ipv4Addr::from(p.b))?,
        }
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    match TraceFormat::from_path(path) {
        TraceFormat::Binary => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes)?;
            Ok(decode_binary(&bytes))
        }
        TraceFormat::Csv => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                if let Some(rec) = parse_csv_line(&line?, i + 1) {
                    out.push(rec);
                }
            }
            Ok(out)
        }
    }
}

pub fn write_trace(path: &Path, pairs: &[IpPair]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    match TraceFormat::from_path(path) {
        TraceFormat::Binary => w.write_all(&encode_binary(pairs))?,
        TraceFormat::Csv => write_csv(&mut w, pairs)?,
    }
    w.flush()?;
    Ok(())
}
