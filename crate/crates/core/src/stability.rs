//! Replace-one stability of the FSDH G-step.
//!
//! With the size-normalized objective
//! `(1/nl)||B - YW||^2 + (lambda'/cl)||W||^2 + (nu'/nl)||B - F(X)||^2`
//! (the FSDH objective divided by `nl` once `lambda = lambda' n / c`), the
//! G-step solutions on a sample `S` and on `S^i`, which swaps example `i` for a
//! fresh draw, satisfy `||W(S) - W(S^i)||_F <= 2 c M / (lambda' n)` when the
//! codes `B` are held fixed and `M` bounds every `||b - y W||_2`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::dataset::{one_hot_encode, FeatureMatrix, OneHotLabels};
use crate::error::{Error, Result};
use crate::fsdh::{g_step_dense, objective_dense, train};
use crate::model::TrainConfig;
use crate::synth::ClusterGenerator;

/// A labelled training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: FeatureMatrix,
    pub y: OneHotLabels,
}

impl Sample {
    pub fn draw(gen: &ClusterGenerator, n: usize, rng: &mut impl Rng) -> Result<Self> {
        let (x, labels) = gen.sample(n, rng)?;
        Ok(Self {
            x,
            y: one_hot_encode(&labels, gen.classes())?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub lambda_prime: f64,
    pub nu_prime: f64,
    pub replacements: usize,
    pub sample_sizes: Vec<usize>,
    /// Code length used to produce the shared codes.
    pub bits: usize,
    /// Anchor cap for the training run that produces the shared codes.
    pub anchors: usize,
    /// Trials (per sample size) that also retrain on `S^i` to report the
    /// end-to-end code difference. Descriptive only.
    pub code_trials: usize,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            lambda_prime: 1.0,
            nu_prime: 1e-5,
            replacements: 50,
            sample_sizes: vec![100, 400, 1600],
            bits: 32,
            anchors: 100,
            code_trials: 0,
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_prime.is_finite() && self.lambda_prime > 0.0) {
            return Err(Error::validation("lambda' must be positive"));
        }
        if !(self.nu_prime.is_finite() && self.nu_prime >= 0.0) {
            return Err(Error::validation("nu' must be non-negative"));
        }
        if self.replacements == 0 {
            return Err(Error::validation("need at least one replacement"));
        }
        if self.bits == 0 || self.anchors == 0 {
            return Err(Error::validation("bits and anchors must be positive"));
        }
        Ok(())
    }

    /// `lambda = lambda' n / c`.
    pub fn lambda_for(&self, n: usize, classes: usize) -> f64 {
        self.lambda_prime * n as f64 / classes as f64
    }
}

/// Returns `S^i`: `s` with row `i` replaced by `(x, class)`.
pub fn replace_row(s: &Sample, i: usize, x: &[f64], class: usize) -> Result<Sample> {
    if i >= s.len() {
        return Err(Error::validation(format!(
            "row {i} out of range for a sample of {}",
            s.len()
        )));
    }
    if x.len() != s.x.cols() || class >= s.y.classes() {
        return Err(Error::validation("replacement does not fit the sample"));
    }
    let mut out = s.clone();
    out.x.replace_row(i, x);
    out.y.set(i, class);
    Ok(out)
}

/// Replaces row `i` with an i.i.d. draw from `gen`.
pub fn perturb_sample(
    s: &Sample,
    i: usize,
    gen: &ClusterGenerator,
    rng: &mut impl Rng,
) -> Result<Sample> {
    if i >= s.len() {
        return Err(Error::validation(format!(
            "row {i} out of range for a sample of {}",
            s.len()
        )));
    }
    let (x, class) = gen.draw(rng);
    replace_row(s, i, &x, class)
}

/// `2 c M / (lambda' n)`.
pub fn stability_bound(classes: usize, m: f64, lambda_prime: f64, n: usize) -> f64 {
    2.0 * classes as f64 * m / (lambda_prime * n as f64)
}

/// Size-normalized objective. Equals the FSDH objective divided by `nl`
/// when `lambda = lambda' n / c` and `nu = nu'`.
pub fn normalized_objective(
    b: &CodeMatrix,
    w: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    y: &OneHotLabels,
    lambda_prime: f64,
    nu_prime: f64,
) -> f64 {
    let (n, l, c) = (b.rows() as f64, b.bits() as f64, y.classes() as f64);
    let bd = b.to_signs();
    let fit = objective_dense(&bd, y.ids(), w, fitted, 0.0, 0.0);
    fit / (n * l)
        + lambda_prime / (c * l) * w.norm_squared()
        + nu_prime / (n * l) * (&bd - fitted).norm_squared()
}

/// One replace-one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub row: usize,
    pub old_class: usize,
    pub new_class: usize,
    /// `||W(S) - W(S^i)||_F`.
    pub delta_w: f64,
    /// Largest `||b_j - y_j W||_2` seen in this trial.
    pub m_hat: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub classes: usize,
    pub lambda_prime: f64,
    pub trials: Vec<Trial>,
    /// Maximum of the per-trial `M` estimates.
    pub m_hat: f64,
    /// Bound evaluated at `m_hat`.
    pub bound: f64,
    /// Trials whose `delta_w` exceeds their own bound.
    pub violations: usize,
    /// `||B(S) - B(S^i)||_F` for fully retrained runs, when requested.
    pub code_differences: Vec<f64>,
}

impl StabilityReport {
    pub fn median_delta_w(&self) -> f64 {
        let mut v: Vec<f64> = self.trials.iter().map(|t| t.delta_w).collect();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k == 0 {
            0.0
        } else if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    }

    pub fn max_delta_w(&self) -> f64 {
        self.trials.iter().map(|t| t.delta_w).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn max_residual_norm(b: &DMatrix<f64>, ids: &[usize], w: &DMatrix<f64>) -> f64 {
    (0..b.nrows())
        .map(|i| residual_norm(b, i, ids[i], w))
        .fold(0.0, f64::max)
}

fn residual_norm(b: &DMatrix<f64>, row: usize, class: usize, w: &DMatrix<f64>) -> f64 {
    (0..b.ncols())
        .map(|j| (b[(row, j)] - w[(class, j)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Runs one G-step on `s` and on `s` with each listed replacement, all with
/// the codes `b` held fixed.
pub fn g_step_trials(
    s: &Sample,
    b: &CodeMatrix,
    replacements: &[(usize, usize)],
    lambda_prime: f64,
) -> Result<Vec<Trial>> {
    let (n, c) = (s.len(), s.y.classes());
    if b.rows() != n {
        return Err(Error::validation("codes do not match the sample"));
    }
    let lambda = lambda_prime * n as f64 / c as f64;
    let bd = b.to_signs();
    let w_s = g_step_dense(s.y.ids(), c, &bd, lambda)?;
    let m_s = max_residual_norm(&bd, s.y.ids(), &w_s);
    replacements
        .par_iter()
        .map(|&(row, new_class)| {
            if row >= n || new_class >= c {
                return Err(Error::validation("replacement out of range"));
            }
            let mut ids = s.y.ids().to_vec();
            let old_class = ids[row];
            ids[row] = new_class;
            let w_i = g_step_dense(&ids, c, &bd, lambda)?;
            let m_hat = m_s
                .max(max_residual_norm(&bd, &ids, &w_i))
                .max(residual_norm(&bd, row, new_class, &w_s))
                .max(residual_norm(&bd, row, old_class, &w_i));
            Ok(Trial {
                row,
                old_class,
                new_class,
                delta_w: (&w_s - &w_i).norm(),
                m_hat,
                bound: stability_bound(c, m_hat, lambda_prime, n),
            })
        })
        .collect()
}

/// Replace-one experiment on `s`. Codes come from an FSDH run on `s` with
/// `lambda = lambda' n / c`, `nu = nu'`, and are shared by `S` and every `S^i`.
pub fn check_g_step_stability(
    s: &Sample,
    gen: &ClusterGenerator,
    config: &StabilityConfig,
) -> Result<StabilityReport> {
    config.validate()?;
    let (n, c) = (s.len(), s.y.classes());
    let train_config = TrainConfig {
        bits: config.bits,
        lambda: config.lambda_for(n, c),
        nu: config.nu_prime,
        anchors: config.anchors,
        seed: config.seed,
        ..TrainConfig::default()
    };
    let (_, codes, _) = train(&s.x, &s.y, &train_config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut draws = Vec::with_capacity(config.replacements);
    for _ in 0..config.replacements {
        let row = rng.random_range(0..n);
        draws.push((row, gen.draw(&mut rng)));
    }
    let replacements: Vec<(usize, usize)> = draws.iter().map(|(r, (_, k))| (*r, *k)).collect();
    let trials = g_step_trials(s, &codes, &replacements, config.lambda_prime)?;

    let code_differences = draws
        .iter()
        .take(config.code_trials)
        .map(|(row, (x, class))| {
            let s_i = replace_row(s, *row, x, *class)?;
            let (_, codes_i, _) = train(&s_i.x, &s_i.y, &train_config)?;
            Ok((codes.to_signs() - codes_i.to_signs()).norm())
        })
        .collect::<Result<Vec<f64>>>()?;

    let m_hat = trials.iter().map(|t| t.m_hat).fold(0.0, f64::max);
    let violations = trials.iter().filter(|t| t.delta_w > t.bound).count();
    Ok(StabilityReport {
        n,
        classes: c,
        lambda_prime: config.lambda_prime,
        trials,
        m_hat,
        bound: stability_bound(c, m_hat, config.lambda_prime, n),
        violations,
        code_differences,
    })
}

/// Runs [`check_g_step_stability`] for every sample size.
pub fn sweep(gen: &ClusterGenerator, config: &StabilityConfig) -> Result<Vec<StabilityReport>> {
    config.validate()?;
    config
        .sample_sizes
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ n as u64);
            let s = Sample::draw(gen, n, &mut rng)?;
            check_g_step_stability(&s, gen, config)
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "n,bound,median_dW,max_dW,violations";

pub fn sweep_csv(reports: &[StabilityReport]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{}",
            r.n,
            r.bound,
            r.median_delta_w(),
            r.max_delta_w(),
            r.violations
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsdh::objective;
    use crate::rbf::{embed, RbfMap};
    use crate::dataset::sample_anchors;

    fn small_sample(n: usize, seed: u64) -> (ClusterGenerator, Sample) {
        let gen = ClusterGenerator::new(3, 4, 0.5, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Sample::draw(&gen, n, &mut rng).unwrap();
        (gen, s)
    }

    #[test]
    fn replacing_with_itself_is_identity() {
        let (_, s) = small_sample(10, 1);
        let row = s.x.row(4).to_vec();
        let same = replace_row(&s, 4, &row, s.y.ids()[4]).unwrap();
        assert_eq!(same, s);
        assert!(replace_row(&s, 10, &row, 0).is_err());
    }

    #[test]
    fn perturbation_changes_exactly_one_row() {
        let (gen, s) = small_sample(12, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = perturb_sample(&s, 7, &gen, &mut rng).unwrap();
        let differing: Vec<usize> = (0..12).filter(|&i| p.x.row(i) != s.x.row(i)).collect();
        assert_eq!(differing, vec![7]);
        for i in (0..12).filter(|&i| i != 7) {
            assert_eq!(p.y.ids()[i], s.y.ids()[i]);
        }
        assert!(perturb_sample(&s, 12, &gen, &mut rng).is_err());
    }

    #[test]
    fn replacement_class_marginal_is_uniform() {
        let (gen, s) = small_sample(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            let p = perturb_sample(&s, 0, &gen, &mut rng).unwrap();
            counts[p.y.ids()[0]] += 1;
        }
        let expect = 1000.0 / 3.0;
        let sd = (1000.0 * (1.0 / 3.0) * (2.0 / 3.0f64)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn duplicate_row_replacement_leaves_w_unchanged() {
        let (_, s) = small_sample(20, 6);
        // Make row 3 a copy of row 9, then replace row 3 with row 9 again.
        let s = replace_row(&s, 3, s.x.row(9), s.y.ids()[9]).unwrap();
        let b = CodeMatrix::from_signs(&DMatrix::from_fn(20, 6, |i, j| {
            if (i * 7 + j * 3) % 5 < 2 {
                1.0
            } else {
                -1.0
            }
        }));
        let trials = g_step_trials(&s, &b, &[(3, s.y.ids()[9])], 1.0).unwrap();
        assert!(trials[0].delta_w < 1e-12);
    }

    #[test]
    fn bound_halves_when_n_doubles() {
        for n in [10, 100, 1000] {
            assert!(stability_bound(5, 3.0, 0.7, 2 * n) <= stability_bound(5, 3.0, 0.7, n) / 2.0);
        }
    }

    #[test]
    fn normalized_objective_is_scaled_fsdh_objective() {
        let (_, s) = small_sample(30, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l = 5;
        let b = CodeMatrix::from_signs(&DMatrix::from_fn(30, l, |_, _| rng.random::<f64>() - 0.5));
        let w = DMatrix::from_fn(3, l, |_, _| rng.random::<f64>() - 0.5);
        let rbf = RbfMap::new(sample_anchors(&s.x, 6, 1).unwrap(), 2.0).unwrap();
        let phi = embed(&s.x, &rbf).unwrap();
        let p = DMatrix::from_fn(6, l, |_, _| rng.random::<f64>() - 0.5);
        let (lp, np) = (0.8, 0.05);
        let lambda = lp * 30.0 / 3.0;
        let full = objective(&b, &w, &p, &s.y, &phi, lambda, np).unwrap();
        let norm = normalized_objective(&b, &w, &(&phi * &p), &s.y, lp, np);
        assert!((norm - full / (30.0 * l as f64)).abs() <= 1e-10 * norm);
    }

    #[test]
    fn small_check_has_no_violations_and_is_deterministic() {
        let (gen, s) = small_sample(90, 12);
        let config = StabilityConfig {
            replacements: 10,
            bits: 8,
            anchors: 20,
            code_trials: 2,
            ..StabilityConfig::default()
        };
        let r1 = check_g_step_stability(&s, &gen, &config).unwrap();
        let r2 = check_g_step_stability(&s, &gen, &config).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.violations, 0);
        assert_eq!(r1.trials.len(), 10);
        assert_eq!(r1.code_differences.len(), 2);
        let csv = sweep_csv(&[r1]);
        assert_eq!(csv.lines().count(), 2);
    }
}
