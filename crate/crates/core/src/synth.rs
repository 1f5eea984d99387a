//! Seeded Gaussian-mixture data for experiments that need no external files.

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

/// Parsed form of `clusters:k=10,n=5000,d=64,spread=0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    pub classes: usize,
    pub n: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            n: 5000,
            dim: 64,
            spread: 1.0,
        }
    }
}

impl FromStr for ClusterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s
            .strip_prefix("clusters:")
            .or_else(|| (s == "clusters").then_some(""))
            .ok_or_else(|| Error::validation(format!("unknown generator {s:?}")))?;
        let mut spec = ClusterSpec::default();
        for kv in body.split(',').filter(|kv| !kv.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("expected key=value, got {kv:?}")))?;
            let bad = || Error::validation(format!("bad value for {key}: {value:?}"));
            match key {
                "k" => spec.classes = value.parse().map_err(|_| bad())?,
                "n" => spec.n = value.parse().map_err(|_| bad())?,
                "d" => spec.dim = value.parse().map_err(|_| bad())?,
                "spread" => spec.spread = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::validation(format!("unknown generator key {key:?}"))),
            }
        }
        if spec.classes == 0 || spec.n == 0 || spec.dim == 0 {
            return Err(Error::validation("k, n and d must be positive"));
        }
        if !(spec.spread.is_finite() && spec.spread > 0.0) {
            return Err(Error::validation("spread must be positive"));
        }
        Ok(spec)
    }
}

/// Mixture of isotropic Gaussians with equal class weights. Centres are
/// standard normal; each example is its centre plus `spread`-scaled noise.
#[derive(Debug, Clone)]
pub struct ClusterGenerator {
    centers: Vec<Vec<f64>>,
    spread: f64,
}

impl ClusterGenerator {
    pub fn new(classes: usize, dim: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..classes)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self { centers, spread }
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// One i.i.d. draw `(x, class)`.
    pub fn draw(&self, rng: &mut impl Rng) -> (Vec<f64>, usize) {
        let class = rng.random_range(0..self.classes());
        let x = self.centers[class]
            .iter()
            .map(|&c| c + self.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, class)
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(FeatureMatrix, Vec<usize>)> {
        let mut values = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, c) = self.draw(rng);
            values.extend(x);
            labels.push(c);
        }
        Ok((FeatureMatrix::new(n, self.dim(), values)?, labels))
    }
}

/// Generates a dataset from `spec`. The centres and the sample both derive
/// from `seed`.
pub fn generate(spec: &ClusterSpec, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
    let gen = ClusterGenerator::new(spec.classes, spec.dim, spec.spread, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    gen.sample(spec.n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_spec() {
        let s: ClusterSpec = "clusters:k=3,n=50,d=4,spread=0.25".parse().unwrap();
        assert_eq!(
            s,
            ClusterSpec {
                classes: 3,
                n: 50,
                dim: 4,
                spread: 0.25
            }
        );
        assert_eq!("clusters".parse::<ClusterSpec>().unwrap(), ClusterSpec::default());
        assert!("blobs:k=2".parse::<ClusterSpec>().is_err());
        assert!("clusters:k=0".parse::<ClusterSpec>().is_err());
        assert!("clusters:q=1".parse::<ClusterSpec>().is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = ClusterSpec {
            classes: 4,
            n: 30,
            dim: 5,
            spread: 0.5,
        };
        let (a, la) = generate(&spec, 8).unwrap();
        let (b, lb) = generate(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.iter().all(|&l| l < 4));
    }
}
