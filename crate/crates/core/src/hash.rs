//! Deterministic keyed hashing shared by every observation node.
//!
//! All sketches in a run are only mergeable if every node maps the same
//! address to the same cell and the same bit, so every hash here is a pure
//! function of `(derived seed, input)`. Derived seeds come from the master
//! seed, a role tag and a row index.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

const TAG_RAND: u64 = 0x5241_4E44; // "RAND"
const TAG_REBIT: u64 = 0x5245_4249; // "REBI"
const TAG_LEBIT: u64 = 0x4C45_4249; // "LEBI"
const TAG_COLUMN: u64 = 0x434F_4C55; // "COLU"

/// 64-bit avalanche finaliser (murmur3 fmix64).
#[inline]
pub fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

#[inline]
fn derive_seed(master: u64, tag: u64, row: u64) -> u64 {
    fmix64(fmix64(master ^ tag.wrapping_mul(GOLDEN)).wrapping_add(row.wrapping_mul(GOLDEN)))
}

#[inline]
fn keyed(seed: u64, x: u32) -> u64 {
    fmix64(seed ^ (x as u64 | (1 << 32)).wrapping_mul(GOLDEN))
}

/// The hash functions used by estimators and arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashSuite {
    master_seed: u64,
    rand_seed: u64,
    rebit_seed: u64,
    lebit_seed: u64,
    column_seeds: Vec<u64>,
}

impl HashSuite {
    /// Builds the suite for a master seed and an LE array with `rows` rows.
    pub fn new(master_seed: u64, rows: usize) -> Self {
        Self {
            master_seed,
            rand_seed: derive_seed(master_seed, TAG_RAND, 0),
            rebit_seed: derive_seed(master_seed, TAG_REBIT, 0),
            lebit_seed: derive_seed(master_seed, TAG_LEBIT, 0),
            column_seeds: (0..rows)
                .map(|i| derive_seed(master_seed, TAG_COLUMN, i as u64))
                .collect(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn rows(&self) -> usize {
        self.column_seeds.len()
    }

    /// Opposite host to a uniform 32-bit integer (the value whose LSB is
    /// compared against tau).
    #[inline]
    pub fn rand32(&self, b: u32) -> u32 {
        (keyed(self.rand_seed, b) >> 32) as u32
    }

    /// Opposite host to one of the 8 bit positions of a rough estimator.
    #[inline]
    pub fn re_bit(&self, b: u32) -> u8 {
        (keyed(self.rebit_seed, b) >> 61) as u8
    }

    /// Opposite host to a bit position of a linear estimator of `le_len`
    /// bits. `le_len` must be a power of two. The same function is used by
    /// every LE array row so that inner merges keep a host's bit.
    #[inline]
    pub fn le_bit(&self, b: u32, le_len: usize) -> usize {
        debug_assert!(le_len.is_power_of_two());
        (keyed(self.lebit_seed, b) >> 32) as usize & (le_len - 1)
    }

    /// Source address to a column of LE array row `row`. `v_hat` must be a
    /// power of two.
    #[inline]
    pub fn column(&self, row: usize, a: u32, v_hat: usize) -> usize {
        debug_assert!(v_hat.is_power_of_two());
        (keyed(self.column_seeds[row], a) >> 32) as usize & (v_hat - 1)
    }
}
