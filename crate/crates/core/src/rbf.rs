//! Gaussian anchor-kernel feature map `phi(x)_j = exp(-||x - a_j||^2 / sigma)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnchorSet, FeatureMatrix};
use crate::error::{Error, Result};

/// Rows used by the data-driven width rules.
pub const SIGMA_SAMPLE_ROWS: usize = 2000;

/// How the kernel width is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum SigmaRule {
    /// Mean squared distance between sampled rows and anchors.
    #[default]
    MeanDistance,
    /// Median squared distance between sampled rows and anchors.
    MedianDistance,
    Fixed(f64),
}

impl std::str::FromStr for SigmaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(SigmaRule::MeanDistance),
            "median" => Ok(SigmaRule::MedianDistance),
            _ => {
                let v = s
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::validation(format!(
                            "sigma rule must be mean, median or fixed:<v>, got {s:?}"
                        ))
                    })?;
                if v.is_finite() && v > 0.0 {
                    Ok(SigmaRule::Fixed(v))
                } else {
                    Err(Error::validation(format!("fixed sigma must be positive, got {v}")))
                }
            }
        }
    }
}

impl std::fmt::Display for SigmaRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaRule::MeanDistance => write!(f, "mean"),
            SigmaRule::MedianDistance => write!(f, "median"),
            SigmaRule::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Picks the kernel width. Distance-based rules look at up to
/// [`SIGMA_SAMPLE_ROWS`] evenly strided rows of `x` and ignore zero distances,
/// so an anchor is never compared with itself.
pub fn fit_sigma(x: &FeatureMatrix, anchors: &AnchorSet, rule: SigmaRule) -> Result<f64> {
    if x.cols() != anchors.dim() {
        return Err(Error::validation(format!(
            "feature dimension {} does not match anchor dimension {}",
            x.cols(),
            anchors.dim()
        )));
    }
    let stat = match rule {
        SigmaRule::Fixed(v) => {
            return if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::validation(format!("fixed sigma must be positive, got {v}")))
            }
        }
        SigmaRule::MeanDistance | SigmaRule::MedianDistance => rule,
    };
    let n = x.rows();
    let take = n.min(SIGMA_SAMPLE_ROWS);
    let mut dists: Vec<f64> = (0..take)
        .flat_map(|k| {
            let i = k * n / take;
            (0..anchors.len()).map(move |j| (i, j))
        })
        .map(|(i, j)| squared_distance(x.row(i), anchors.anchors.row(j)))
        .filter(|&d| d > 0.0)
        .collect();
    if dists.is_empty() {
        return Err(Error::validation(
            "all sampled point-anchor distances are zero; cannot choose a kernel width",
        ));
    }
    let sigma = match stat {
        SigmaRule::MeanDistance => dists.iter().sum::<f64>() / dists.len() as f64,
        _ => {
            dists.sort_by(f64::total_cmp);
            let mid = dists.len() / 2;
            if dists.len() % 2 == 1 {
                dists[mid]
            } else {
                0.5 * (dists[mid - 1] + dists[mid])
            }
        }
    };
    Ok(sigma)
}

/// Fitted kernel map: anchors plus width.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfMap {
    anchors: AnchorSet,
    sigma: f64,
}

impl RbfMap {
    pub fn new(anchors: AnchorSet, sigma: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::validation("anchor set is empty"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { anchors, sigma })
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors.dim()
    }
}

/// Embeds every row of `x`, giving an `n x m` matrix with entries in (0, 1].
pub fn embed(x: &FeatureMatrix, map: &RbfMap) -> Result<DMatrix<f64>> {
    if x.cols() != map.dim() {
        return Err(Error::validation(format!(
            "feature dimension {} does not match anchor dimension {}",
            x.cols(),
            map.dim()
        )));
    }
    let m = map.len();
    let anchors = &map.anchors.anchors;
    let mut out = vec![0.0; x.rows() * m];
    out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let xi = x.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = (-squared_distance(xi, anchors.row(j)) / map.sigma).exp();
        }
    });
    Ok(DMatrix::from_row_slice(x.rows(), m, &out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_anchors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(rows: usize, cols: usize, v: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    fn anchors_of(x: &FeatureMatrix, idx: &[usize]) -> AnchorSet {
        AnchorSet {
            anchors: x.select_rows(idx).unwrap(),
            indices: idx.to_vec(),
        }
    }

    #[test]
    fn fixed_passes_through() {
        let x = fm(2, 1, &[0.0, 1.0]);
        let a = anchors_of(&x, &[0]);
        assert_eq!(fit_sigma(&x, &a, SigmaRule::Fixed(2.5)).unwrap(), 2.5);
    }

    #[test]
    fn duplicated_point_is_degenerate() {
        let x = fm(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let a = anchors_of(&x, &[0, 1]);
        assert!(matches!(
            fit_sigma(&x, &a, SigmaRule::MeanDistance),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn two_points_distance_two() {
        // Pairwise squared distances: 0 (self, skipped), 4, 4, 0 (self).
        let x = fm(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let a = anchors_of(&x, &[0, 1]);
        assert_eq!(fit_sigma(&x, &a, SigmaRule::MeanDistance).unwrap(), 4.0);
        assert_eq!(fit_sigma(&x, &a, SigmaRule::MedianDistance).unwrap(), 4.0);
    }

    #[test]
    fn sigma_rule_parse_and_display() {
        for s in ["mean", "median", "fixed:2.5"] {
            assert_eq!(s.parse::<SigmaRule>().unwrap().to_string(), s);
        }
        assert!("fixed:-1".parse::<SigmaRule>().is_err());
        assert!("max".parse::<SigmaRule>().is_err());
    }

    #[test]
    fn embed_exact_values() {
        let x = fm(2, 2, &[1.0, 2.0, 1.0, 3.0]);
        let map = RbfMap::new(anchors_of(&x, &[0]), 1.0).unwrap();
        let phi = embed(&x, &map).unwrap();
        assert_eq!(phi[(0, 0)], 1.0);
        assert!((phi[(1, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((phi[(1, 0)] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn embed_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v: Vec<f64> = (0..15).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let x = fm(5, 3, &v);
        let a = sample_anchors(&x, 2, 4).unwrap();
        let map = RbfMap::new(a.clone(), 1.7).unwrap();
        let phi = embed(&x, &map).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                let mut d2 = 0.0;
                for k in 0..3 {
                    let diff = x.row(i)[k] - a.anchors.row(j)[k];
                    d2 += diff * diff;
                }
                let expect = (-d2 / 1.7).exp();
                assert!((phi[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_rejects_dimension_mismatch() {
        let x = fm(1, 2, &[0.0, 0.0]);
        let y = fm(1, 3, &[0.0, 0.0, 0.0]);
        let map = RbfMap::new(anchors_of(&x, &[0]), 1.0).unwrap();
        assert!(embed(&y, &map).is_err());
        assert!(RbfMap::new(anchors_of(&x, &[0]), 0.0).is_err());
    }

    #[test]
    fn embed_monotone_in_distance() {
        let x = fm(4, 1, &[0.0, 0.5, 1.0, 3.0]);
        let map = RbfMap::new(anchors_of(&x, &[0]), 2.0).unwrap();
        let phi = embed(&x, &map).unwrap();
        for i in 1..4 {
            assert!(phi[(i, 0)] < phi[(i - 1, 0)]);
            assert!(phi[(i, 0)] > 0.0);
        }
    }

    #[test]
    fn embed_row_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
        let x = fm(8, 3, &v);
        let map = RbfMap::new(sample_anchors(&x, 3, 1).unwrap(), 0.5).unwrap();
        let perm = [3, 1, 7, 0, 2, 6, 5, 4];
        let phi = embed(&x, &map).unwrap();
        let phi_p = embed(&x.select_rows(&perm).unwrap(), &map).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(phi_p.row(k), phi.row(i));
        }
    }
}
