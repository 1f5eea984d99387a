//! Data-independent baseline: sign of a seeded Gaussian random projection of
//! mean-centred features.

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codes::CodeMatrix;
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    mean: RowDVector<f64>,
    projection: DMatrix<f64>,
}

impl RandomProjection {
    pub fn fit(x: &FeatureMatrix, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::validation("code length must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = DMatrix::from_fn(x.cols(), bits, |_, _| rng.sample(StandardNormal));
        let mean = x.to_dmatrix().row_mean();
        Ok(Self { mean, projection })
    }

    pub fn encode(&self, x: &FeatureMatrix) -> Result<CodeMatrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::validation(format!(
                "expected {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut centred = x.to_dmatrix();
        for mut row in centred.row_iter_mut() {
            row -= &self.mean;
        }
        Ok(CodeMatrix::from_signs(&(centred * &self.projection)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let x = FeatureMatrix::new(4, 2, vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.0, 5.0, 2.0]).unwrap();
        let a = RandomProjection::fit(&x, 9, 3).unwrap();
        let b = RandomProjection::fit(&x, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = a.encode(&x).unwrap();
        assert_eq!((c.rows(), c.bits()), (4, 9));
        assert!(a.encode(&FeatureMatrix::new(1, 3, vec![0.0; 3]).unwrap()).is_err());
    }
}
