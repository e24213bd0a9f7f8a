//! The û × v̂ array of linear estimators.
//!
//! Each source address owns one cell per row, picked by an independent
//! column hash. Cells are shared between addresses; the inner merge of a
//! candidate's û cells filters out most of what other addresses wrote.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hash::HashSuite;
use crate::sketch::{check_le_len, words_for, LinearEstimator, MergeMode, write_le_words};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LEArray {
    u_hat: usize,
    v_hat: usize,
    le_len: usize,
    words_per_le: usize,
    words: Vec<u64>,
}

impl LEArray {
    pub fn new(u_hat: usize, v_hat: usize, le_len: usize) -> Result<Self> {
        check_le_len(le_len)?;
        if u_hat == 0 || !v_hat.is_power_of_two() {
            return Err(Error::param(format!(
                "LE array needs u_hat >= 1 and a power-of-two v_hat (got {u_hat} x {v_hat})"
            )));
        }
        let words_per_le = words_for(le_len);
        Ok(Self {
            u_hat,
            v_hat,
            le_len,
            words_per_le,
            words: vec![0; u_hat * v_hat * words_per_le],
        })
    }

    pub fn u_hat(&self) -> usize {
        self.u_hat
    }

    pub fn v_hat(&self) -> usize {
        self.v_hat
    }

    pub fn le_len(&self) -> usize {
        self.le_len
    }

    /// û · v̂ · |C| / 8.
    pub fn memory_bytes(&self) -> usize {
        self.u_hat * self.v_hat * self.le_len / 8
    }

    #[inline]
    fn cell_range(&self, row: usize, col: usize) -> std::ops::Range<usize> {
        let start = (row * self.v_hat + col) * self.words_per_le;
        start..start + self.words_per_le
    }

    pub fn cell(&self, row: usize, col: usize) -> LinearEstimator {
        LinearEstimator::from_words(self.words[self.cell_range(row, col)].to_vec(), self.le_len)
    }

    /// Updates cell `(i, h_col[i](a))` of every row with opposite host `b`.
    pub fn update(&mut self, a: u32, b: u32, hs: &HashSuite) {
        self.record(a, hs.le_bit(b, self.le_len), hs);
    }

    /// Sets LE bit `bit` in every cell selected by `a`.
    #[inline]
    pub fn record(&mut self, a: u32, bit: usize, hs: &HashSuite) {
        debug_assert!(bit < self.le_len);
        for row in 0..self.u_hat {
            let col = hs.column(row, a, self.v_hat);
            let base = (row * self.v_hat + col) * self.words_per_le;
            self.words[base + bit / 64] |= 1 << (bit % 64);
        }
    }

    /// Inner merge (AND) of the û cells owned by `candidate`.
    pub fn extract_candidate(&self, candidate: u32, hs: &HashSuite) -> CandidateLE {
        let mut acc = self.words[self.cell_range(0, hs.column(0, candidate, self.v_hat))].to_vec();
        for row in 1..self.u_hat {
            let range = self.cell_range(row, hs.column(row, candidate, self.v_hat));
            for (a, b) in acc.iter_mut().zip(&self.words[range]) {
                *a &= b;
            }
        }
        CandidateLE {
            candidate,
            le: LinearEstimator::from_words(acc, self.le_len),
        }
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if (self.u_hat, self.v_hat, self.le_len) != (other.u_hat, other.v_hat, other.le_len) {
            return Err(Error::ConfigMismatch(format!(
                "LE array shapes differ: {}x{}x{} vs {}x{}x{}",
                self.u_hat, self.v_hat, self.le_len, other.u_hat, other.v_hat, other.le_len
            )));
        }
        Ok(())
    }

    /// Cell-wise OR of `other` into `self`.
    pub fn merge_outer_assign(&mut self, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub(crate) fn from_raw(u_hat: usize, v_hat: usize, le_len: usize, bytes: &[u8]) -> Result<Self> {
        let mut lea = Self::new(u_hat, v_hat, le_len)?;
        if bytes.len() != lea.memory_bytes() {
            return Err(Error::payload(format!(
                "LE array needs {} bytes, got {}",
                lea.memory_bytes(),
                bytes.len()
            )));
        }
        let cell_bytes = le_len / 8;
        for (cell, chunk) in lea.words.chunks_mut(lea.words_per_le).zip(bytes.chunks(cell_bytes)) {
            for (i, &byte) in chunk.iter().enumerate() {
                cell[i / 8] |= (byte as u64) << ((i % 8) * 8);
            }
        }
        Ok(lea)
    }

    /// Cells in row-major order, each `|C| / 8` bytes.
    pub(crate) fn write_raw(&self, out: &mut Vec<u8>) {
        for cell in self.words.chunks(self.words_per_le) {
            write_le_words(cell, self.le_len, out);
        }
    }
}

/// A candidate together with the inner merge of its cells at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateLE {
    pub candidate: u32,
    pub le: LinearEstimator,
}

/// Outer merge (OR) of one candidate's inner-merged LEs from every node.
pub fn outer_merge_les(les: &[CandidateLE]) -> Result<LinearEstimator> {
    let (first, rest) = les
        .split_first()
        .ok_or_else(|| Error::param("no LEs to merge"))?;
    let mut merged = first.le.clone();
    for c in rest {
        if c.candidate != first.candidate {
            return Err(Error::CandidateMismatch {
                expected: first.candidate,
                found: c.candidate,
            });
        }
        merged.merge_assign(&c.le, MergeMode::Outer)?;
    }
    Ok(merged)
}

/// Cardinality estimate of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEstimate {
    pub candidate: u32,
    pub estimate: f64,
    pub saturated: bool,
    pub is_super: bool,
}

/// Estimates every merged candidate LE and flags those exceeding `theta`.
/// Saturated LEs are always reported super. Output follows input order.
pub fn estimate_candidates<'a, I>(merged: I, theta: u32) -> Vec<CandidateEstimate>
where
    I: IntoIterator<Item = (u32, &'a LinearEstimator)>,
{
    merged
        .into_iter()
        .map(|(candidate, le)| {
            let e = le.estimate();
            CandidateEstimate {
                candidate,
                estimate: e.value,
                saturated: e.saturated,
                is_super: e.saturated || e.value > theta as f64,
            }
        })
        .collect()
}

/// Groups per-node candidate LEs by candidate and outer-merges each group.
pub fn merge_node_sets(sets: &[Vec<CandidateLE>]) -> Result<HashMap<u32, LinearEstimator>> {
    let mut merged: HashMap<u32, LinearEstimator> = HashMap::new();
    for set in sets {
        for c in set {
            match merged.get_mut(&c.candidate) {
                Some(le) => le.merge_assign(&c.le, MergeMode::Outer)?,
                None => {
                    merged.insert(c.candidate, c.le.clone());
                }
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pair_touches_u_hat_cells() {
        let hs = HashSuite::new(3, 3);
        let mut lea = LEArray::new(3, 16, 64).unwrap();
        lea.update(10, 20, &hs);
        let touched = (0..3)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .filter(|&(i, j)| !lea.cell(i, j).is_empty())
            .count();
        assert_eq!(touched, 3);
        let snap = lea.clone();
        lea.update(10, 20, &hs);
        assert_eq!(lea, snap);
    }

    #[test]
    fn extract_from_empty_array_is_empty() {
        let hs = HashSuite::new(3, 2);
        let lea = LEArray::new(2, 8, 64).unwrap();
        assert!(lea.extract_candidate(99, &hs).le.is_empty());
    }

    #[test]
    fn extract_with_one_row_is_that_cell() {
        let hs = HashSuite::new(3, 1);
        let mut lea = LEArray::new(1, 8, 64).unwrap();
        for b in 0..40 {
            lea.update(b % 5, b * 7 + 1, &hs);
        }
        let c = lea.extract_candidate(2, &hs);
        assert_eq!(c.le, lea.cell(0, hs.column(0, 2, 8)));
    }

    #[test]
    fn exclusive_cells_give_exclusive_le() {
        let hs = HashSuite::new(21, 2);
        // Two addresses that land in different columns in both rows.
        let c = 1000u32;
        let other = (1001u32..)
            .find(|&x| (0..2).all(|i| hs.column(i, x, 8) != hs.column(i, c, 8)))
            .unwrap();
        let mut lea = LEArray::new(2, 8, 64).unwrap();
        let mut exclusive = LinearEstimator::new(64).unwrap();
        for b in 0..30u32 {
            lea.update(c, b, &hs);
            exclusive.update(b, &hs);
            lea.update(other, b + 500, &hs);
        }
        assert_eq!(lea.extract_candidate(c, &hs).le, exclusive);
    }

    #[test]
    fn outer_merge_identity_and_mismatch() {
        let hs = HashSuite::new(1, 1);
        let mut le = LinearEstimator::new(64).unwrap();
        le.update(5, &hs);
        let single = [CandidateLE { candidate: 7, le: le.clone() }];
        assert_eq!(outer_merge_les(&single).unwrap(), le);
        let with_zero = [
            CandidateLE { candidate: 7, le: le.clone() },
            CandidateLE { candidate: 7, le: LinearEstimator::new(64).unwrap() },
        ];
        assert_eq!(outer_merge_les(&with_zero).unwrap(), le);
        let mismatch = [
            CandidateLE { candidate: 7, le: le.clone() },
            CandidateLE { candidate: 8, le },
        ];
        assert!(matches!(
            outer_merge_les(&mismatch),
            Err(Error::CandidateMismatch { expected: 7, found: 8 })
        ));
    }

    #[test]
    fn disjoint_node_sets_merge_to_union() {
        let hs = HashSuite::new(4, 1);
        let mut n0 = LinearEstimator::new(256).unwrap();
        let mut n1 = LinearEstimator::new(256).unwrap();
        let mut union = LinearEstimator::new(256).unwrap();
        for b in 0..60u32 {
            if b % 2 == 0 { n0.update(b, &hs) } else { n1.update(b, &hs) }
            union.update(b, &hs);
        }
        let merged = outer_merge_les(&[
            CandidateLE { candidate: 1, le: n0 },
            CandidateLE { candidate: 1, le: n1 },
        ])
        .unwrap();
        assert_eq!(merged.popcount(), union.popcount());
        assert_eq!(merged, union);
    }

    #[test]
    fn estimate_thresholds() {
        let zero = LinearEstimator::new(1024).unwrap();
        let est = estimate_candidates([(1, &zero)], 100);
        assert_eq!(est[0].estimate, 0.0);
        assert!(!est[0].is_super);

        // Zero bits n0 = |C| e^{-2 theta / |C|} gives an estimate of 2 theta.
        let len = 4096usize;
        let theta = 1024u32;
        let zeros = (len as f64 * (-2.0 * theta as f64 / len as f64).exp()).round() as usize;
        let mut le = LinearEstimator::new(len).unwrap();
        for p in 0..len - zeros {
            le.set_bit(p);
        }
        let est = estimate_candidates([(2, &le)], theta);
        assert!(est[0].is_super);
        assert!((est[0].estimate - 2.0 * theta as f64).abs() < 5.0);

        let mut full = LinearEstimator::new(8).unwrap();
        (0..8).for_each(|p| full.set_bit(p));
        let est = estimate_candidates([(3, &full)], 1_000_000);
        assert!(est[0].saturated && est[0].is_super);
    }

    #[test]
    fn estimate_equal_to_theta_is_not_super() {
        let le = LinearEstimator::new(64).unwrap();
        assert!(!estimate_candidates([(0, &le)], 0)[0].is_super);
    }

    #[test]
    fn merged_arrays_equal_array_of_concatenated_streams() {
        let hs = HashSuite::new(8, 2);
        let mut a = LEArray::new(2, 8, 64).unwrap();
        let mut b = LEArray::new(2, 8, 64).unwrap();
        let mut whole = LEArray::new(2, 8, 64).unwrap();
        for x in 0..200u32 {
            let (src, dst) = (x % 13, x.wrapping_mul(31));
            if x % 3 == 0 { a.update(src, dst, &hs) } else { b.update(src, dst, &hs) }
            whole.update(src, dst, &hs);
        }
        a.merge_outer_assign(&b).unwrap();
        assert_eq!(a, whole);
        assert!(a.merge_outer_assign(&LEArray::new(2, 16, 64).unwrap()).is_err());
    }
}
