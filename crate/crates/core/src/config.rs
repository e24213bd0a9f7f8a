//! Detector configuration shared by every node, plus the `key = value`
//! file format used for run configs and trace specs.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. List values are comma separated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hash::HashSuite;
use crate::re_cube::RECubeConfig;
use crate::sketch::DetectorParams;

/// Everything two nodes must agree on for their sketches to be mergeable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorConfig {
    pub params: DetectorParams,
    pub cube: RECubeConfig,
    pub seed: u64,
}

impl Default for DetectorConfig {
    /// r = 6, u = 3, l = 14, û = 5, v̂ = 2^15, |C| = 2^14, θ = 1024.
    fn default() -> Self {
        Self {
            params: DetectorParams::default(),
            cube: RECubeConfig::with_default_rows(6).expect("default geometry is valid"),
            seed: 0x5EED,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cube.validate()
    }

    pub fn hash_suite(&self) -> HashSuite {
        HashSuite::new(self.seed, self.params.u_hat)
    }

    pub fn tau(&self) -> Result<f64> {
        self.params.tau()
    }

    /// Bytes of the cube plus the LE array held by one node.
    pub fn master_structure_bytes(&self) -> usize {
        self.cube.memory_bytes() + self.lea_bytes()
    }

    pub fn lea_bytes(&self) -> usize {
        self.params.u_hat * self.params.v_hat * self.params.le_len / 8
    }
}

/// Parsed `key = value` file with line numbers kept for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("expected key = value, got {line:?}"),
                });
            };
            let key = k.trim().to_ascii_lowercase();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { path: path.into(), entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse { path: self.path.clone(), line, msg }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => parse_number(v)
                .map(Some)
                .map_err(|e| self.err(*line, format!("{key}: {e}"))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| parse_number(s.trim()))
                .collect::<std::result::Result<Vec<T>, String>>()
                .map(Some)
                .map_err(|e| self.err(*line, format!("{key}: {e}"))),
        }
    }

    /// Rejects keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(self.err(*line, format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}

/// Parses a number, accepting `2^k` powers of two and `_` separators.
pub fn parse_number<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let s = s.replace('_', "");
    if let Some((base, exp)) = s.split_once('^') {
        let base: u64 = base.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        let exp: u32 = exp.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
        let v = base
            .checked_pow(exp)
            .ok_or_else(|| format!("{s:?} overflows"))?;
        return v.to_string().parse::<T>().map_err(|e| format!("{s:?}: {e}"));
    }
    s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

/// Applies the detector keys of a config file over `base`.
pub fn detector_from_keys(kv: &KeyValues, base: &DetectorConfig) -> Result<DetectorConfig> {
    let mut cfg = base.clone();
    if let Some(t) = kv.get("theta")? {
        cfg.params.theta = t;
    }
    if let Some(g) = kv.get("g")? {
        cfg.params.g = g;
    }
    if let Some(c) = kv.get("le_len")? {
        cfg.params.le_len = c;
    }
    if let Some(u) = kv.get("u_hat")? {
        cfg.params.u_hat = u;
    }
    if let Some(v) = kv.get("v_hat")? {
        cfg.params.v_hat = v;
    }
    if let Some(s) = kv.get("seed")? {
        cfg.seed = s;
    }
    let r = kv.get::<u8>("r")?.unwrap_or(cfg.cube.r());
    let widths = kv.get_list::<u8>("l")?;
    let starts = kv.get_list::<u8>("s")?;
    if widths.is_some() || starts.is_some() || r != cfg.cube.r() {
        let widths = widths.unwrap_or_else(|| cfg.cube.widths().to_vec());
        let starts = starts.unwrap_or_else(|| cfg.cube.starts().to_vec());
        cfg.cube = RECubeConfig::new(r, widths, starts).map_err(|e| Error::Parse {
            path: kv.path().into(),
            line: kv.line_of("s").max(kv.line_of("l")).max(kv.line_of("r")),
            msg: e.to_string(),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}
