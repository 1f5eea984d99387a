//! Exact Hamming-space search over bit-packed codes by linear scan.

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};

/// Borrowed view of one packed code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRow<'a> {
    pub words: &'a [u64],
    pub bits: usize,
}

impl CodeMatrix {
    pub fn row(&self, i: usize) -> CodeRow<'_> {
        CodeRow {
            words: self.row_words(i),
            bits: self.bits(),
        }
    }
}

#[inline]
fn popcount_xor(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing positions, via XOR and popcount.
pub fn hamming_distance(a: CodeRow<'_>, b: CodeRow<'_>) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::validation(format!(
            "code lengths differ: {} vs {}",
            a.bits, b.bits
        )));
    }
    Ok(popcount_xor(a.words, b.words))
}

/// Database codes with one class label per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedIndex {
    codes: CodeMatrix,
    labels: Vec<usize>,
}

impl PackedIndex {
    pub fn new(codes: CodeMatrix, labels: Vec<usize>) -> Result<Self> {
        if codes.rows() != labels.len() {
            return Err(Error::validation(format!(
                "{} codes but {} labels",
                codes.rows(),
                labels.len()
            )));
        }
        Ok(Self { codes, labels })
    }

    pub fn len(&self) -> usize {
        self.codes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn check_query(&self, q: CodeRow<'_>) -> Result<()> {
        if q.bits != self.bits() {
            return Err(Error::validation(format!(
                "query has {} bits, index has {}",
                q.bits,
                self.bits()
            )));
        }
        Ok(())
    }

    /// Distances from `q` to every row, in row order.
    pub fn distances(&self, q: CodeRow<'_>) -> Result<Vec<u32>> {
        self.check_query(q)?;
        Ok((0..self.len())
            .map(|i| popcount_xor(self.codes.row_words(i), q.words))
            .collect())
    }

    /// Every row ordered by ascending distance, ties by ascending row id.
    /// Counting sort over the `l + 1` possible distances.
    pub fn ranking(&self, q: CodeRow<'_>) -> Result<Vec<(usize, u32)>> {
        let dist = self.distances(q)?;
        Ok(bucket_order(&dist, self.bits(), usize::MAX))
    }

    /// Rows within distance `r`, ordered by (distance, row id).
    pub fn radius_lookup(&self, q: CodeRow<'_>, r: u32) -> Result<Vec<usize>> {
        let dist = self.distances(q)?;
        Ok(bucket_order(&dist, self.bits(), usize::MAX)
            .into_iter()
            .take_while(|&(_, d)| d <= r)
            .map(|(i, _)| i)
            .collect())
    }

    /// The `n` nearest rows as `(row id, distance)`.
    pub fn rank_top_n(&self, q: CodeRow<'_>, n: usize) -> Result<Vec<(usize, u32)>> {
        if n == 0 || n > self.len() {
            return Err(Error::validation(format!(
                "top-N depth {n} must be in [1, {}]",
                self.len()
            )));
        }
        let dist = self.distances(q)?;
        Ok(bucket_order(&dist, self.bits(), n))
    }
}

fn bucket_order(dist: &[u32], bits: usize, limit: usize) -> Vec<(usize, u32)> {
    let mut counts = vec![0usize; bits + 2];
    for &d in dist {
        counts[d as usize + 1] += 1;
    }
    for k in 1..counts.len() {
        counts[k] += counts[k - 1];
    }
    let mut out = vec![(0usize, 0u32); dist.len()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut counts[d as usize];
        out[*slot] = (i, d);
        *slot += 1;
    }
    out.truncate(limit.min(dist.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codes(rows: &[Vec<i8>]) -> CodeMatrix {
        CodeMatrix::from_rows(rows).unwrap()
    }

    fn random_codes(rng: &mut ChaCha8Rng, n: usize, l: usize) -> CodeMatrix {
        let rows: Vec<Vec<i8>> = (0..n)
            .map(|_| (0..l).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
            .collect();
        codes(&rows)
    }

    #[test]
    fn distance_hand_count() {
        let c = codes(&[vec![1, -1, 1], vec![1, 1, -1]]);
        assert_eq!(hamming_distance(c.row(0), c.row(1)).unwrap(), 2);
        assert_eq!(hamming_distance(c.row(0), c.row(0)).unwrap(), 0);
        let other = codes(&[vec![1, 1]]);
        assert!(hamming_distance(c.row(0), other.row(0)).is_err());
    }

    #[test]
    fn distance_matches_unpacked_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for _ in 0..1000 {
            let c = random_codes(&mut rng, 2, 64);
            let rows = c.to_rows();
            let naive = rows[0].iter().zip(&rows[1]).filter(|(a, b)| a != b).count() as u32;
            assert_eq!(hamming_distance(c.row(0), c.row(1)).unwrap(), naive);
        }
    }

    #[test]
    fn radius_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let db = random_codes(&mut rng, 30, 16);
        let index = PackedIndex::new(db.clone(), vec![0; 30]).unwrap();
        assert_eq!(index.radius_lookup(db.row(3), 16).unwrap().len(), 30);
        let q = codes(&[vec![1; 16]]);
        let exact: Vec<usize> = (0..30)
            .filter(|&i| db.to_rows()[i].iter().all(|&v| v == 1))
            .collect();
        assert_eq!(index.radius_lookup(q.row(0), 0).unwrap(), exact);
    }

    #[test]
    fn radius_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let db = random_codes(&mut rng, 200, 16);
        let index = PackedIndex::new(db.clone(), vec![0; 200]).unwrap();
        let q = random_codes(&mut rng, 1, 16);
        let mut expect: Vec<(u32, usize)> = (0..200)
            .map(|i| (hamming_distance(db.row(i), q.row(0)).unwrap(), i))
            .filter(|&(d, _)| d <= 2)
            .collect();
        expect.sort_unstable();
        let got = index.radius_lookup(q.row(0), 2).unwrap();
        assert_eq!(got, expect.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
    }

    #[test]
    fn top_n_ties_and_duplicates() {
        let same = codes(&vec![vec![1, -1, 1, 1]; 6]);
        let index = PackedIndex::new(same.clone(), vec![0; 6]).unwrap();
        let top: Vec<usize> = index
            .rank_top_n(same.row(0), 4)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(top, vec![0, 1, 2, 3]);

        let db = codes(&[vec![1, 1], vec![-1, 1], vec![-1, -1], vec![-1, 1]]);
        let index = PackedIndex::new(db.clone(), vec![0; 4]).unwrap();
        assert_eq!(index.rank_top_n(db.row(1), 1).unwrap(), vec![(1, 0)]);
        assert!(index.rank_top_n(db.row(1), 5).is_err());
        assert!(index.rank_top_n(db.row(1), 0).is_err());
    }

    #[test]
    fn index_requires_aligned_labels() {
        assert!(PackedIndex::new(CodeMatrix::zeros(3, 4), vec![0; 2]).is_err());
    }

    proptest! {
        #[test]
        fn ranking_matches_sort_oracle(seed in any::<u64>(), n in 1usize..80, l in 1usize..130) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let db = random_codes(&mut rng, n, l);
            let q = random_codes(&mut rng, 1, l);
            let index = PackedIndex::new(db.clone(), vec![0; n]).unwrap();
            let mut oracle: Vec<(u32, usize)> = (0..n)
                .map(|i| (hamming_distance(db.row(i), q.row(0)).unwrap(), i))
                .collect();
            oracle.sort_unstable();
            let k = rng.random_range(1..=n);
            let got = index.rank_top_n(q.row(0), k).unwrap();
            let want: Vec<(usize, u32)> = oracle.iter().take(k).map(|&(d, i)| (i, d)).collect();
            prop_assert_eq!(got, want);
            let r = rng.random_range(0..=l as u32);
            let inner = index.radius_lookup(q.row(0), r).unwrap();
            let outer = index.radius_lookup(q.row(0), r + 1).unwrap();
            prop_assert!(inner.iter().all(|i| outer.contains(i)));
        }
    }
}
