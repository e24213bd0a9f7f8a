//! The rough-estimator cube.
//!
//! A source address `a` is split into its right `r` bits (`k`, which picks
//! one RE array) and its left `32 - r` bits (`LP`). Row `i` of the array is
//! indexed by `l[i]` consecutive bits of `LP` starting at `s[i]`, wrapping
//! around modulo `32 - r`. Adjacent rows share bits, which is what lets the
//! coordinator stitch candidate indexes from different rows back into
//! addresses.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::hash::HashSuite;
use crate::sketch::{MergeMode, RoughEstimator, RoughThreshold};

const MAX_R: u8 = 24;
const MAX_ROW_BITS: u8 = 24;

/// Geometry of a [`RECube`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RECubeConfig {
    r: u8,
    widths: Vec<u8>,
    starts: Vec<u8>,
}

impl RECubeConfig {
    /// `widths[i]` is the index width of row `i`, `starts[i]` its start bit in
    /// the left part.
    pub fn new(r: u8, widths: Vec<u8>, starts: Vec<u8>) -> Result<Self> {
        let cfg = Self { r, widths, starts };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Three rows of 14 bits starting at 0, 9 and 18.
    pub fn with_default_rows(r: u8) -> Result<Self> {
        Self::new(r, vec![14; 3], vec![0, 9, 18])
    }

    /// Rows of equal width `l`, each starting `l - 2` bits after the
    /// previous one, with as few rows as full coverage allows.
    pub fn with_uniform_width(r: u8, l: u8) -> Result<Self> {
        if l < 3 || r == 0 || r > MAX_R {
            return Err(Error::InvalidCube(format!(
                "uniform geometry needs l >= 3 and 1 <= r <= {MAX_R} (got r={r}, l={l})"
            )));
        }
        let limit = 31 - r as i32;
        let step = (l - 2) as i32;
        let mut starts = vec![0u8];
        while *starts.last().unwrap() as i32 + l as i32 <= limit {
            starts.push((*starts.last().unwrap() as i32 + step) as u8);
        }
        let u = starts.len();
        Self::new(r, vec![l; u], starts)
    }

    pub fn r(&self) -> u8 {
        self.r
    }

    pub fn rows(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[u8] {
        &self.widths
    }

    pub fn starts(&self) -> &[u8] {
        &self.starts
    }

    /// Bits in the left part of an address.
    pub fn lp_width(&self) -> u32 {
        32 - self.r as u32
    }

    pub fn rea_count(&self) -> usize {
        1 << self.r
    }

    pub fn row_len(&self, row: usize) -> usize {
        1 << self.widths[row]
    }

    pub fn cells_per_rea(&self) -> usize {
        (0..self.rows()).map(|i| self.row_len(i)).sum()
    }

    /// Size of the cube in bytes (one byte per RE).
    pub fn memory_bytes(&self) -> usize {
        self.rea_count() * self.cells_per_rea()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCube(msg));
        let r = self.r as i32;
        let u = self.widths.len();
        if self.r == 0 || self.r > MAX_R {
            return bad(format!("r must satisfy 1 <= r <= {MAX_R}, got {r}"));
        }
        if u < 2 {
            return bad(format!("u must be >= 2 so rows can overlap, got {u}"));
        }
        if self.starts.len() != u {
            return bad(format!(
                "{} start bits given for {u} rows",
                self.starts.len()
            ));
        }
        let w = 32 - r;
        for (i, &l) in self.widths.iter().enumerate() {
            if l == 0 || l > MAX_ROW_BITS || l as i32 > w {
                return bad(format!(
                    "l[{i}] = {l} must satisfy 1 <= l[{i}] <= min({MAX_ROW_BITS}, 32 - r = {w})"
                ));
            }
        }
        let s: Vec<i32> = self.starts.iter().map(|&x| x as i32).collect();
        let l: Vec<i32> = self.widths.iter().map(|&x| x as i32).collect();
        if s[0] != 0 {
            return bad(format!("s[0] = 0 violated (s[0] = {})", s[0]));
        }
        for i in 0..u - 1 {
            if !(s[i] < s[i + 1] && s[i + 1] < 31 - r) {
                return bad(format!(
                    "s[{i}] < s[{}] < 31 - r violated ({} < {} < {})",
                    i + 1,
                    s[i],
                    s[i + 1],
                    31 - r
                ));
            }
            if s[i + 1] >= s[i] + l[i] - 1 {
                return bad(format!(
                    "s[{}] < s[{i}] + l[{i}] - 1 violated ({} >= {} + {} - 1)",
                    i + 1,
                    s[i + 1],
                    s[i],
                    l[i]
                ));
            }
        }
        if s[u - 1] + l[u - 1] <= 31 - r {
            return bad(format!(
                "s[u-1] + l[u-1] > 31 - r violated ({} + {} <= {})",
                s[u - 1],
                l[u - 1],
                31 - r
            ));
        }
        let covered = (0..u).fold(0u32, |acc, i| acc | self.lp_mask(i));
        if covered != lp_full_mask(self.lp_width()) {
            return bad(format!(
                "rows leave left-part bits uncovered (mask {covered:#x})"
            ));
        }
        Ok(())
    }

    /// Index of the RE in row `row` for left part `lp`: bit `j` of the index
    /// is bit `(s[row] + j) mod (32 - r)` of `lp`.
    #[inline]
    pub fn row_index(&self, lp: u32, row: usize) -> u32 {
        let w = self.lp_width();
        let rot = rotr_within(lp, self.starts[row] as u32, w);
        rot & low_mask(self.widths[row] as u32)
    }

    /// Inverse of [`row_index`](Self::row_index): the left-part bits that
    /// `index` fixes in row `row`.
    #[inline]
    pub fn deposit(&self, index: u32, row: usize) -> u32 {
        rotl_within(
            index & low_mask(self.widths[row] as u32),
            self.starts[row] as u32,
            self.lp_width(),
        )
    }

    /// Left-part positions covered by row `row`.
    pub fn lp_mask(&self, row: usize) -> u32 {
        self.deposit(u32::MAX, row)
    }

    /// `(k, [j_0, .., j_{u-1}])` for source address `a`.
    pub fn derive_indices(&self, a: u32) -> RowIndices {
        let k = a & low_mask(self.r as u32);
        let lp = self.left_part(a);
        RowIndices {
            k,
            rows: (0..self.rows()).map(|i| self.row_index(lp, i)).collect(),
        }
    }

    #[inline]
    pub fn left_part(&self, a: u32) -> u32 {
        (a as u64 >> self.r) as u32
    }

    /// Rebuilds the address from a complete tuple of row indexes.
    pub fn address(&self, k: u32, rows: &[u32]) -> u32 {
        let lp = rows
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &j)| acc | self.deposit(j, i));
        ((lp as u64) << self.r) as u32 | k
    }

    /// Number of bits rows `row` and `(row + 1) mod u` share: the overlap
    /// `s[i] + l[i] - s[i+1]` for adjacent rows, and the wraparound width
    /// `s[u-1] + l[u-1] - (32 - r)` between the last row and row 0.
    pub fn overlap(&self, row: usize) -> u32 {
        let u = self.rows();
        let end = self.starts[row] as i32 + self.widths[row] as i32;
        let next_start = if row + 1 == u {
            self.lp_width() as i32
        } else {
            self.starts[row + 1] as i32
        };
        (end - next_start).max(0) as u32
    }

    /// Whether the top `overlap(row)` bits of `j_row` equal the bottom ones
    /// of `j_next` (the index in the cyclically next row). Tuples failing
    /// this for any adjacent pair cannot come from one address.
    pub fn adjacent_overlap_agrees(&self, row: usize, j_row: u32, j_next: u32) -> bool {
        let o = self.overlap(row);
        let l = self.widths[row] as u32;
        (j_row >> (l - o)) & low_mask(o) == j_next & low_mask(o)
    }
}

#[inline]
fn low_mask(bits: u32) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

fn lp_full_mask(w: u32) -> u32 {
    low_mask(w)
}

#[inline]
fn rotr_within(x: u32, s: u32, w: u32) -> u32 {
    let x = x as u64 & low_mask(w) as u64;
    (((x >> s) | (x << (w - s))) & low_mask(w) as u64) as u32
}

#[inline]
fn rotl_within(x: u32, s: u32, w: u32) -> u32 {
    let x = x as u64 & low_mask(w) as u64;
    (((x << s) | (x >> (w - s))) & low_mask(w) as u64) as u32
}

/// RE array selector and per-row RE indexes of one address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIndices {
    pub k: u32,
    pub rows: Vec<u32>,
}

/// One candidate index per row, all consistent with a single address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CandidateTuple {
    pub k: u32,
    pub rows: Vec<u32>,
    pub address: u32,
}

/// Dense cube of rough estimators, laid out k-major, then row, then index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RECube {
    config: RECubeConfig,
    row_offsets: Vec<usize>,
    rea_stride: usize,
    cells: Vec<RoughEstimator>,
}

impl RECube {
    pub fn new(config: RECubeConfig) -> Self {
        let mut row_offsets = Vec::with_capacity(config.rows());
        let mut off = 0;
        for i in 0..config.rows() {
            row_offsets.push(off);
            off += config.row_len(i);
        }
        let cells = vec![RoughEstimator::new(); config.memory_bytes()];
        Self {
            config,
            row_offsets,
            rea_stride: off,
            cells,
        }
    }

    pub fn config(&self) -> &RECubeConfig {
        &self.config
    }

    pub(crate) fn from_raw(config: RECubeConfig, bytes: &[u8]) -> Result<Self> {
        let mut cube = Self::new(config);
        if bytes.len() != cube.cells.len() {
            return Err(Error::payload(format!(
                "cube needs {} cell bytes, got {}",
                cube.cells.len(),
                bytes.len()
            )));
        }
        for (c, &b) in cube.cells.iter_mut().zip(bytes) {
            *c = RoughEstimator::from_bits(b);
        }
        Ok(cube)
    }

    pub(crate) fn write_raw(&self, out: &mut Vec<u8>) {
        out.extend(self.cells.iter().map(|c| c.bits()));
    }

    #[inline]
    fn offset(&self, k: u32, row: usize, j: u32) -> usize {
        k as usize * self.rea_stride + self.row_offsets[row] + j as usize
    }

    pub fn cell(&self, k: u32, row: usize, j: u32) -> RoughEstimator {
        self.cells[self.offset(k, row, j)]
    }

    pub fn cell_mut(&mut self, k: u32, row: usize, j: u32) -> &mut RoughEstimator {
        let off = self.offset(k, row, j);
        &mut self.cells[off]
    }

    pub fn cells(&self) -> &[RoughEstimator] {
        &self.cells
    }

    /// Updates the `u` REs selected by `a` with opposite host `b`.
    pub fn update(&mut self, a: u32, b: u32, tau: f64, hs: &HashSuite) {
        if let Some(bit) = RoughThreshold::from_tau(tau).qualifying_bit(b, hs) {
            self.record(a, bit);
        }
    }

    /// Sets RE bit `bit` in every cell selected by `a`.
    #[inline]
    pub fn record(&mut self, a: u32, bit: u8) {
        let k = a & low_mask(self.config.r as u32);
        let lp = self.config.left_part(a);
        let base = k as usize * self.rea_stride;
        for i in 0..self.config.rows() {
            let j = self.config.row_index(lp, i) as usize;
            self.cells[base + self.row_offsets[i] + j].set_bit(bit);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|c| c.bits() == 0)
    }

    /// Cell-wise OR of `other` into `self`.
    pub fn merge_outer_assign(&mut self, other: &RECube) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch(format!(
                "cube geometries differ: {:?} vs {:?}",
                self.config, other.config
            )));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a = a.merge(*b, MergeMode::Outer);
        }
        Ok(())
    }

    /// Outer-merges a non-empty sequence of cubes, seeding the result with
    /// the first cube rather than a fresh one.
    pub fn merge_outer<I>(cubes: I) -> Result<RECube>
    where
        I: IntoIterator<Item = RECube>,
    {
        let mut iter = cubes.into_iter();
        let mut global = iter
            .next()
            .ok_or_else(|| Error::param("cannot merge an empty sequence of cubes"))?;
        for cube in iter {
            global.merge_outer_assign(&cube)?;
        }
        Ok(global)
    }

    /// Candidate indexes of row `row` in RE array `k`.
    pub fn candidate_indexes(&self, k: u32, row: usize) -> Vec<u32> {
        let start = self.offset(k, row, 0);
        self.cells[start..start + self.config.row_len(row)]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_candidate())
            .map(|(j, _)| j as u32)
            .collect()
    }

    /// All candidate RE tuples, in ascending `k` and then lexicographic
    /// row-index order.
    pub fn recover_tuples(&self) -> Vec<CandidateTuple> {
        let plan = RecoveryPlan::new(&self.config);
        let mut out = Vec::new();
        for k in 0..self.config.rea_count() as u32 {
            self.recover_rea(k, &plan, &mut out);
        }
        out
    }

    /// Global candidate super points, ascending and duplicate-free.
    pub fn recover_candidates(&self) -> Vec<u32> {
        self.recover_tuples()
            .into_iter()
            .map(|t| t.address)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn recover_rea(&self, k: u32, plan: &RecoveryPlan, out: &mut Vec<CandidateTuple>) {
        let u = self.config.rows();
        let mut per_row: Vec<Vec<u32>> = Vec::with_capacity(u);
        for i in 0..u {
            let c = self.candidate_indexes(k, i);
            if c.is_empty() {
                return;
            }
            per_row.push(c);
        }
        let buckets: Vec<HashMap<u32, Vec<u32>>> = per_row
            .iter()
            .enumerate()
            .map(|(i, cands)| {
                let mut map: HashMap<u32, Vec<u32>> = HashMap::new();
                for &j in cands {
                    map.entry(j & plan.known[i]).or_default().push(j);
                }
                map
            })
            .collect();
        let mut search = TupleSearch {
            cube: self,
            plan,
            buckets: &buckets,
            k,
            stack: Vec::with_capacity(u),
            out,
        };
        for &j0 in &per_row[0] {
            let re = self.cell(k, 0, j0);
            search.stack.push(j0);
            search.descend(1, self.config.deposit(j0, 0), re);
            search.stack.pop();
        }
    }
}

/// Per-row masks of index bits that earlier rows already determine.
struct RecoveryPlan {
    known: Vec<u32>,
}

impl RecoveryPlan {
    fn new(cfg: &RECubeConfig) -> Self {
        let mut covered = 0u32;
        let mut known = Vec::with_capacity(cfg.rows());
        for i in 0..cfg.rows() {
            known.push(cfg.row_index(covered, i));
            covered |= cfg.lp_mask(i);
        }
        Self { known }
    }
}

struct TupleSearch<'a> {
    cube: &'a RECube,
    plan: &'a RecoveryPlan,
    buckets: &'a [HashMap<u32, Vec<u32>>],
    k: u32,
    stack: Vec<u32>,
    out: &'a mut Vec<CandidateTuple>,
}

impl TupleSearch<'_> {
    fn descend(&mut self, row: usize, lp: u32, and: RoughEstimator) {
        // Inner merging only clears bits, so a partial AND that is no longer
        // a candidate can never become one again.
        if !and.is_candidate() {
            return;
        }
        let cfg = &self.cube.config;
        if row == cfg.rows() {
            self.out.push(CandidateTuple {
                k: self.k,
                rows: self.stack.clone(),
                address: ((lp as u64) << cfg.r) as u32 | self.k,
            });
            return;
        }
        let key = cfg.row_index(lp, row) & self.plan.known[row];
        let Some(matches) = self.buckets[row].get(&key) else {
            return;
        };
        for &j in matches {
            let re = self.cube.cell(self.k, row, j);
            self.stack.push(j);
            self.descend(row + 1, lp | cfg.deposit(j, row), and.merge(re, MergeMode::Inner));
            self.stack.pop();
        }
    }
}

#[cfg(test)]
#[allow(clippy::unusual_byte_groupings)]
mod tests {
    use super::*;

    fn paper_cfg() -> RECubeConfig {
        RECubeConfig::new(2, vec![14, 14, 14], vec![0, 10, 20]).unwrap()
    }

    const PAPER_LP: u32 = 0b000101_1110_010001_1100_010101_0101;

    #[test]
    fn derive_indices_matches_worked_example() {
        let cfg = paper_cfg();
        let idx = cfg.derive_indices((PAPER_LP << 2) + 2);
        assert_eq!(idx.k, 2);
        assert_eq!(idx.rows, vec![12629, 14620, 5214]);
    }

    #[test]
    fn derive_indices_of_zero() {
        let cfg = paper_cfg();
        let idx = cfg.derive_indices(0);
        assert_eq!(idx.k, 0);
        assert_eq!(idx.rows, vec![0, 0, 0]);
    }

    #[test]
    fn default_rows_are_valid_for_r_4_to_6() {
        for r in 4..=6 {
            let cfg = RECubeConfig::with_default_rows(r).unwrap();
            assert_eq!(cfg.rows(), 3);
        }
        let cfg = RECubeConfig::with_default_rows(6).unwrap();
        assert_eq!(cfg.memory_bytes(), 3 << 20);
    }

    #[test]
    fn validation_quotes_violated_inequality() {
        let err = RECubeConfig::new(2, vec![14, 14, 14], vec![1, 10, 20]).unwrap_err();
        assert!(err.to_string().contains("s[0] = 0"), "{err}");
        let err = RECubeConfig::new(2, vec![14, 14, 14], vec![0, 13, 20]).unwrap_err();
        assert!(err.to_string().contains("s[1] < s[0] + l[0] - 1"), "{err}");
        let err = RECubeConfig::new(2, vec![14, 14, 14], vec![0, 10, 29]).unwrap_err();
        assert!(err.to_string().contains("31 - r"), "{err}");
        let err = RECubeConfig::new(2, vec![14, 14, 10], vec![0, 10, 19]).unwrap_err();
        assert!(err.to_string().contains("s[u-1] + l[u-1] > 31 - r"), "{err}");
        let err = RECubeConfig::new(2, vec![14], vec![0]).unwrap_err();
        assert!(err.to_string().contains("u must be >= 2"), "{err}");
        assert!(RECubeConfig::new(0, vec![14, 14, 14], vec![0, 10, 20]).is_err());
    }

    #[test]
    fn valid_configs_cover_every_left_part_bit() {
        for r in 1..=12u8 {
            for l in 3..=14u8 {
                if let Ok(cfg) = RECubeConfig::with_uniform_width(r, l) {
                    let covered = (0..cfg.rows()).fold(0, |m, i| m | cfg.lp_mask(i));
                    assert_eq!(covered, low_mask(cfg.lp_width()), "r={r} l={l}");
                }
            }
        }
    }

    #[test]
    fn uniform_width_small_geometry() {
        let cfg = RECubeConfig::with_uniform_width(2, 4).unwrap();
        assert_eq!(cfg.rows(), 14);
        assert_eq!(*cfg.starts().last().unwrap(), 26);
    }

    #[test]
    fn record_touches_u_cells_once() {
        let cfg = paper_cfg();
        let mut cube = RECube::new(cfg.clone());
        let a = (PAPER_LP << 2) + 2;
        cube.record(a, 5);
        let set: Vec<_> = cube
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.bits() != 0)
            .collect();
        assert_eq!(set.len(), 3);
        let snapshot = cube.clone();
        cube.record(a, 5);
        assert_eq!(cube, snapshot);
        assert_eq!(cube.cell(2, 1, 14620).bits(), 1 << 5);
    }

    #[test]
    fn update_respects_threshold() {
        let hs = HashSuite::new(1, 1);
        let b = (0u32..)
            .find(|&b| crate::sketch::lsb(hs.rand32(b)) >= 3)
            .unwrap();
        let mut cube = RECube::new(paper_cfg());
        cube.update(12345, b, 3.0, &hs);
        assert_eq!(cube.cells().iter().filter(|c| c.bits() != 0).count(), 3);
        let low = (0u32..)
            .find(|&b| crate::sketch::lsb(hs.rand32(b)) < 3)
            .unwrap();
        let mut cube = RECube::new(paper_cfg());
        cube.update(12345, low, 3.0, &hs);
        assert!(cube.is_empty());
    }

    #[test]
    fn merge_rejects_mismatched_geometry() {
        let a = RECube::new(paper_cfg());
        let b = RECube::new(RECubeConfig::with_default_rows(4).unwrap());
        assert!(RECube::merge_outer([a, b]).is_err());
        assert!(RECube::merge_outer(Vec::<RECube>::new()).is_err());
    }

    #[test]
    fn empty_cube_has_no_candidates() {
        assert!(RECube::new(paper_cfg()).recover_candidates().is_empty());
    }

    #[test]
    fn overlap_widths_of_worked_example() {
        let cfg = paper_cfg();
        assert_eq!(cfg.overlap(0), 4);
        assert_eq!(cfg.overlap(1), 4);
        assert_eq!(cfg.overlap(2), 4);
    }

    #[test]
    fn recovery_finds_planted_address_and_prunes_weak_and() {
        let cfg = paper_cfg();
        let a = 0x1234_5678u32;
        let mut cube = RECube::new(cfg.clone());
        for bit in [0, 3, 6] {
            cube.record(a, bit);
        }
        assert_eq!(cube.recover_candidates(), vec![a]);

        // Each row is a candidate but the rows share only two bits.
        let idx = cfg.derive_indices(a);
        let mut cube = RECube::new(cfg);
        cube.cell_mut(idx.k, 0, idx.rows[0]).set_bit(0);
        cube.cell_mut(idx.k, 0, idx.rows[0]).set_bit(1);
        cube.cell_mut(idx.k, 0, idx.rows[0]).set_bit(2);
        *cube.cell_mut(idx.k, 1, idx.rows[1]) = RoughEstimator::from_bits(0b0001_0011);
        *cube.cell_mut(idx.k, 2, idx.rows[2]) = RoughEstimator::from_bits(0b0000_0111);
        assert!(cube.recover_candidates().is_empty());
    }
}
