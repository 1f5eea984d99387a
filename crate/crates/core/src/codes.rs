//! Bit-packed `{-1, +1}` code matrices. `+1` is stored as bit 1, `-1` as bit 0,
//! bit `j` of a row lives in word `j / 64` at position `j % 64`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Sign with the tie rule `sgn(0) = +1`.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    rows: usize,
    bits: usize,
    words: Vec<u64>,
}

impl CodeMatrix {
    /// All-`-1` codes.
    pub fn zeros(rows: usize, bits: usize) -> Self {
        Self {
            rows,
            bits,
            words: vec![0; rows * words_for(bits)],
        }
    }

    /// Quantizes a real matrix with [`sgn`].
    pub fn from_signs(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for (i, &v) in m.column(j).iter().enumerate() {
                if v >= 0.0 {
                    out.set(i, j, true);
                }
            }
        }
        out
    }

    /// Builds from explicit `±1` entries, one inner vector per row.
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let bits = rows.first().map_or(0, Vec::len);
        let mut out = Self::zeros(rows.len(), bits);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != bits {
                return Err(Error::validation(format!(
                    "code row {i} has {} bits, expected {bits}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    1 => out.set(i, j, true),
                    -1 => {}
                    _ => {
                        return Err(Error::validation(format!(
                            "code entry ({i}, {j}) is {v}, expected -1 or +1"
                        )))
                    }
                }
            }
        }
        Ok(out)
    }

    /// Wraps packed words; trailing bits of each row must be zero.
    pub fn from_words(rows: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let wpr = words_for(bits);
        if words.len() != rows * wpr {
            return Err(Error::validation(format!(
                "{} words for {rows} rows of {bits} bits",
                words.len()
            )));
        }
        let tail = bits % WORD_BITS;
        if tail != 0 {
            let mask = !((1u64 << tail) - 1);
            if words.chunks(wpr).any(|r| r[wpr - 1] & mask != 0) {
                return Err(Error::validation("non-zero padding bits in packed codes"));
            }
        }
        Ok(Self { rows, bits, words })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        words_for(self.bits)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        let w = self.words_per_row();
        &self.words[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn bit(&self, i: usize, j: usize) -> bool {
        let w = self.words_per_row();
        (self.words[i * w + j / WORD_BITS] >> (j % WORD_BITS)) & 1 == 1
    }

    /// Entry as `±1`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        if self.bit(i, j) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, positive: bool) {
        let w = self.words_per_row();
        let word = &mut self.words[i * w + j / WORD_BITS];
        let mask = 1u64 << (j % WORD_BITS);
        if positive {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    pub fn to_signs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.bits, |i, j| f64::from(self.get(i, j)))
    }

    pub fn to_rows(&self) -> Vec<Vec<i8>> {
        (0..self.rows)
            .map(|i| (0..self.bits).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut words = Vec::with_capacity(indices.len() * self.words_per_row());
        for &i in indices {
            words.extend_from_slice(self.row_words(i));
        }
        Self {
            rows: indices.len(),
            bits: self.bits,
            words,
        }
    }
}
