//! Estimator primitives: the 8-bit rough estimator, the linear-counting
//! estimator and the scalar formulas they rely on.

use crate::error::{Error, Result};
use crate::hash::HashSuite;

/// Bits in a rough estimator, also the `g` used when deriving tau.
pub const RE_WIDTH: u32 = 8;

/// A rough estimator flags a host as candidate once this many bits are set.
pub const RE_CANDIDATE_BITS: u32 = 3;

/// Position of the lowest set bit of `x`; 32 for `x == 0`.
#[inline]
pub fn lsb(x: u32) -> u32 {
    x.trailing_zeros()
}

/// `log2(theta / g)`, the minimum LSB a hashed opposite host needs before
/// it is recorded in a rough estimator.
pub fn compute_tau(theta: u32, g: u32) -> Result<f64> {
    if g == 0 {
        return Err(Error::param("g must be positive"));
    }
    if theta < g {
        return Err(Error::param(format!(
            "theta ({theta}) must be >= g ({g}); tau would be negative"
        )));
    }
    Ok((theta as f64 / g as f64).log2())
}

/// Integer form of the `lsb >= tau` test. LSB values are integral, so
/// `lsb >= tau` holds exactly when `lsb >= ceil(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoughThreshold {
    min_lsb: u32,
}

impl RoughThreshold {
    pub fn from_tau(tau: f64) -> Self {
        Self {
            min_lsb: tau.max(0.0).ceil() as u32,
        }
    }

    pub fn min_lsb(self) -> u32 {
        self.min_lsb
    }

    /// Returns the RE bit that `b` sets, or `None` when `b` does not qualify.
    #[inline]
    pub fn qualifying_bit(self, b: u32, hs: &HashSuite) -> Option<u8> {
        (lsb(hs.rand32(b)) >= self.min_lsb).then(|| hs.re_bit(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Bitwise OR: union of what every input has observed.
    Outer,
    /// Bitwise AND: bits shared by every input.
    Inner,
}

/// An 8-bit rough estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct RoughEstimator(u8);

impl RoughEstimator {
    pub const fn new() -> Self {
        Self(0)
    }

    pub const fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub fn update(&mut self, b: u32, tau: f64, hs: &HashSuite) {
        if let Some(bit) = RoughThreshold::from_tau(tau).qualifying_bit(b, hs) {
            self.set_bit(bit);
        }
    }

    #[inline]
    pub fn set_bit(&mut self, bit: u8) {
        self.0 |= 1 << bit;
    }

    pub fn popcount(self) -> u32 {
        self.0.count_ones()
    }

    #[inline]
    pub fn is_candidate(self) -> bool {
        self.0.count_ones() >= RE_CANDIDATE_BITS
    }

    pub fn merge(self, other: Self, mode: MergeMode) -> Self {
        match mode {
            MergeMode::Outer => Self(self.0 | other.0),
            MergeMode::Inner => Self(self.0 & other.0),
        }
    }
}

/// Result of a linear-counting estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardinalityEstimate {
    pub value: f64,
    /// Every bit was set; `value` is clamped to the one-zero-bit estimate.
    pub saturated: bool,
}

/// Linear-counting estimate from the zero-bit count of a `len`-bit vector.
pub fn linear_count(len: usize, zeros: usize) -> CardinalityEstimate {
    let m = len as f64;
    if zeros == 0 {
        CardinalityEstimate {
            value: m * m.ln(),
            saturated: true,
        }
    } else {
        CardinalityEstimate {
            value: -m * (zeros as f64 / m).ln(),
            saturated: false,
        }
    }
}

/// Relative standard deviation of a linear estimator at load factor
/// `load` (true cardinality over `le_len`).
pub fn le_relative_std_dev(load: f64, le_len: usize) -> f64 {
    ((load.exp() - load - 1.0) / le_len as f64).sqrt()
}

/// Standard deviation of the estimate in hosts: `le_len` times the
/// relative form.
pub fn le_std_dev(load: f64, le_len: usize) -> f64 {
    le_len as f64 * le_relative_std_dev(load, le_len)
}

/// Linear estimator: a fixed-length bit vector, stored in 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearEstimator {
    words: Vec<u64>,
    len: usize,
}

pub(crate) fn check_le_len(len: usize) -> Result<()> {
    if len < 8 || !len.is_power_of_two() {
        return Err(Error::param(format!(
            "LE length must be a power of two >= 8, got {len}"
        )));
    }
    Ok(())
}

pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl LinearEstimator {
    pub fn new(len: usize) -> Result<Self> {
        check_le_len(len)?;
        Ok(Self::zeroed(len))
    }

    pub(crate) fn zeroed(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub(crate) fn from_words(words: Vec<u64>, len: usize) -> Self {
        debug_assert_eq!(words.len(), words_for(len));
        Self { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn update(&mut self, b: u32, hs: &HashSuite) {
        self.set_bit(hs.le_bit(b, self.len));
    }

    #[inline]
    pub fn set_bit(&mut self, pos: usize) {
        assert!(pos < self.len, "bit {pos} out of range for LE of {}", self.len);
        self.words[pos / 64] |= 1 << (pos % 64);
    }

    pub fn get_bit(&self, pos: usize) -> bool {
        pos < self.len && self.words[pos / 64] >> (pos % 64) & 1 == 1
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn zero_count(&self) -> usize {
        self.len - self.popcount()
    }

    pub fn estimate(&self) -> CardinalityEstimate {
        linear_count(self.len, self.zero_count())
    }

    /// Positions of the set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    fn check_same_len(&self, other: &Self) -> Result<()> {
        if self.len != other.len {
            return Err(Error::ConfigMismatch(format!(
                "LE lengths differ ({} vs {})",
                self.len, other.len
            )));
        }
        Ok(())
    }

    pub fn merge_assign(&mut self, other: &Self, mode: MergeMode) -> Result<()> {
        self.check_same_len(other)?;
        match mode {
            MergeMode::Outer => self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b),
            MergeMode::Inner => self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= b),
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self, mode: MergeMode) -> Result<Self> {
        let mut out = self.clone();
        out.merge_assign(other, mode)?;
        Ok(out)
    }

    /// Every bit set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Bit `p` lives in byte `p / 8` at bit `p % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len / 8);
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        write_le_words(&self.words, self.len, out);
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        check_le_len(len)?;
        if bytes.len() != len / 8 {
            return Err(Error::payload(format!(
                "LE of {len} bits needs {} bytes, got {}",
                len / 8,
                bytes.len()
            )));
        }
        let mut words = vec![0u64; words_for(len)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        Ok(Self { words, len })
    }
}

pub(crate) fn write_le_words(words: &[u64], len: usize, out: &mut Vec<u8>) {
    let nbytes = len / 8;
    let mut written = 0;
    for w in words {
        let take = (nbytes - written).min(8);
        out.extend_from_slice(&w.to_le_bytes()[..take]);
        written += take;
    }
}

/// Detection parameters shared by every node in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorParams {
    /// Cardinality threshold; hosts whose estimate exceeds it are super points.
    pub theta: u32,
    /// RE width used when deriving tau.
    pub g: u32,
    /// Bits per linear estimator (`|C|`).
    pub le_len: usize,
    /// LE array rows.
    pub u_hat: usize,
    /// LE array columns.
    pub v_hat: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            theta: 1024,
            g: RE_WIDTH,
            le_len: 1 << 14,
            u_hat: 5,
            v_hat: 1 << 15,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        compute_tau(self.theta, self.g)?;
        check_le_len(self.le_len)?;
        if self.u_hat == 0 {
            return Err(Error::param("u_hat must be >= 1"));
        }
        if !self.v_hat.is_power_of_two() {
            return Err(Error::param(format!(
                "v_hat must be a power of two, got {}",
                self.v_hat
            )));
        }
        Ok(())
    }

    pub fn tau(&self) -> Result<f64> {
        compute_tau(self.theta, self.g)
    }
}
