//! Training configuration, the trained hash model, and training traces.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::dataset::{sample_anchors, FeatureMatrix, OneHotLabels};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, SpdSolver};
use crate::rbf::{embed, fit_sigma, RbfMap, SigmaRule};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_NU: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 5;
pub const DEFAULT_ANCHORS: usize = 1000;
pub const DEFAULT_RIDGE_EPS: f64 = 1e-8;

/// Which objective produced a model. The regression matrix orientation
/// differs: FSDH stores `W` as `c x l`, SDH as `l x c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Fsdh,
    Sdh,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fsdh => "fsdh",
            Method::Sdh => "sdh",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Code length `l`.
    pub bits: usize,
    pub lambda: f64,
    pub nu: f64,
    /// Outer iteration cap `t`.
    pub max_iters: usize,
    /// Requested anchor count; clamped to the number of training rows.
    pub anchors: usize,
    pub seed: u64,
    pub sigma_rule: SigmaRule,
    /// Diagonal ridge added to `phi^T phi` in the F-step.
    pub ridge_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            lambda: DEFAULT_LAMBDA,
            nu: DEFAULT_NU,
            max_iters: DEFAULT_MAX_ITERS,
            anchors: DEFAULT_ANCHORS,
            seed: 0,
            sigma_rule: SigmaRule::MeanDistance,
            ridge_eps: DEFAULT_RIDGE_EPS,
        }
    }
}

impl TrainConfig {
    pub fn with_bits(bits: usize) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.bits == 0 {
            return Err(Error::validation("code length must be at least 1"));
        }
        if !nonneg(self.lambda) {
            return Err(Error::validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !nonneg(self.nu) {
            return Err(Error::validation(format!("nu must be >= 0, got {}", self.nu)));
        }
        if !nonneg(self.ridge_eps) {
            return Err(Error::validation("ridge epsilon must be >= 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("iteration cap must be at least 1"));
        }
        if self.anchors == 0 {
            return Err(Error::validation("anchor count must be at least 1"));
        }
        Ok(())
    }
}

/// Trained hashing function `x -> sgn(phi(x) P)` together with the label
/// regression matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub method: Method,
    pub rbf: RbfMap,
    /// `m x l`.
    pub projection: DMatrix<f64>,
    /// `c x l` for FSDH, `l x c` for SDH.
    pub regression: DMatrix<f64>,
    pub classes: usize,
    pub config: TrainConfig,
}

impl HashModel {
    pub fn new(
        method: Method,
        rbf: RbfMap,
        projection: DMatrix<f64>,
        regression: DMatrix<f64>,
        config: TrainConfig,
    ) -> Result<Self> {
        let (m, l) = projection.shape();
        if m != rbf.len() {
            return Err(Error::validation(format!(
                "projection has {m} rows for {} anchors",
                rbf.len()
            )));
        }
        let classes = match method {
            Method::Fsdh if regression.ncols() == l => regression.nrows(),
            Method::Sdh if regression.nrows() == l => regression.ncols(),
            _ => {
                return Err(Error::validation(format!(
                    "{method} regression matrix {:?} inconsistent with {l} bits",
                    regression.shape()
                )))
            }
        };
        if projection.iter().chain(regression.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("model has non-finite entries"));
        }
        Ok(Self {
            method,
            rbf,
            projection,
            regression,
            classes,
            config,
        })
    }

    pub fn bits(&self) -> usize {
        self.projection.ncols()
    }

    pub fn dim(&self) -> usize {
        self.rbf.dim()
    }

    /// Out-of-sample codes `sgn(phi(x) P)`.
    pub fn encode(&self, x: &FeatureMatrix) -> Result<CodeMatrix> {
        encode(x, self)
    }
}

pub fn encode(x: &FeatureMatrix, model: &HashModel) -> Result<CodeMatrix> {
    let phi = embed(x, &model.rbf)?;
    Ok(CodeMatrix::from_signs(&(phi * &model.projection)))
}

/// Per-iteration record. Iteration 0 is the state after initialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub b_step: Duration,
    pub g_step: Duration,
    pub f_step: Duration,
    /// DCC sweeps spent in the B-step (SDH only).
    pub sweeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub method: Method,
    /// Anchor sampling, kernel width, embedding and factorization time.
    pub setup: Duration,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Outer iterations executed, not counting initialization.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn total_time(&self) -> Duration {
        self.setup
            + self
                .records
                .iter()
                .map(|r| r.b_step + r.g_step + r.f_step)
                .sum::<Duration>()
    }

    /// B-step time summed over outer iterations.
    pub fn b_step_time(&self) -> Duration {
        self.records.iter().map(|r| r.b_step).sum()
    }

    /// CSV with columns `iteration,objective,b_step_ms,g_step_ms,f_step_ms`,
    /// plus `sweeps_executed` for SDH.
    pub fn to_csv(&self) -> String {
        let sdh = self.method == Method::Sdh;
        let mut out = String::from("iteration,objective,b_step_ms,g_step_ms,f_step_ms");
        if sdh {
            out.push_str(",sweeps_executed");
        }
        out.push('\n');
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:e},{:.6},{:.6},{:.6}",
                r.iteration,
                r.objective,
                ms(r.b_step),
                ms(r.g_step),
                ms(r.f_step)
            );
            if sdh {
                let _ = write!(out, ",{}", r.sweeps.unwrap_or(0));
            }
            out.push('\n');
        }
        out
    }
}

/// F-step solver `P = (phi^T phi + eps I)^-1 phi^T B`. The embedding is fixed
/// for a training run, so the Gram matrix is factored once.
#[derive(Debug, Clone)]
pub struct FStep {
    phi: DMatrix<f64>,
    phi_t: DMatrix<f64>,
    solver: SpdSolver,
}

/// Relative residual accepted from the F-step solve.
pub const F_STEP_TOLERANCE: f64 = 1e-6;

impl FStep {
    pub fn new(phi: DMatrix<f64>, ridge_eps: f64) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::validation("embedding matrix is empty"));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding matrix has non-finite entries"));
        }
        let phi_t = phi.transpose();
        let mut gram = &phi_t * &phi;
        add_ridge(&mut gram, ridge_eps);
        let solver = SpdSolver::new(gram, "f-step")?;
        Ok(Self { phi, phi_t, solver })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Returns `P` and the fitted embedding `F(X) = phi P`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if b.nrows() != self.phi.nrows() {
            return Err(Error::validation(format!(
                "codes have {} rows, embedding has {}",
                b.nrows(),
                self.phi.nrows()
            )));
        }
        let rhs = &self.phi_t * b;
        let p = self.solver.solve(&rhs)?;
        let res = self.solver.residual(&p, &rhs);
        if res > F_STEP_TOLERANCE * rhs.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::numeric(
                "f-step",
                format!("relative residual {:.3e} above tolerance", res / rhs.norm()),
            ));
        }
        let fitted = &self.phi * &p;
        Ok((p, fitted))
    }

    /// `||(phi^T phi + eps I) P - phi^T B||_F / ||phi^T B||_F`.
    pub fn relative_residual(&self, p: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let rhs = &self.phi_t * b;
        self.solver.residual(p, &rhs) / rhs.norm().max(f64::MIN_POSITIVE)
    }
}

/// Solves the F-step for a given embedding and code matrix.
pub fn f_step(phi: &DMatrix<f64>, b: &CodeMatrix, ridge_eps: f64) -> Result<DMatrix<f64>> {
    FStep::new(phi.clone(), ridge_eps)?
        .solve(&b.to_signs())
        .map(|(p, _)| p)
}

/// State shared by both trainers before their first alternating step.
pub(crate) struct Prepared {
    pub rbf: RbfMap,
    pub fstep: FStep,
    pub b: DMatrix<f64>,
    pub setup_started: Instant,
}

pub(crate) fn prepare(
    x: &FeatureMatrix,
    y: &OneHotLabels,
    config: &TrainConfig,
) -> Result<Prepared> {
    let started = Instant::now();
    config.validate()?;
    if x.rows() != y.rows() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y.rows()
        )));
    }
    y.check_all_present()?;
    let m = config.anchors.min(x.rows());
    let anchors = sample_anchors(x, m, config.seed)?;
    let sigma = fit_sigma(x, &anchors, config.sigma_rule)?;
    let rbf = RbfMap::new(anchors, sigma)?;
    let phi = embed(x, &rbf)?;
    let fstep = FStep::new(phi, config.ridge_eps)?;
    Ok(Prepared {
        rbf,
        fstep,
        b: random_codes(x.rows(), config.bits, config.seed),
        setup_started: started,
    })
}

/// Seeded Bernoulli(1/2) `±1` matrix, drawn on its own stream so it is
/// independent of anchor sampling under the same seed.
pub(crate) fn random_codes(rows: usize, bits: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut b = DMatrix::zeros(rows, bits);
    for i in 0..rows {
        for j in 0..bits {
            b[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    b
}

pub(crate) fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::with_bits(0).validate().is_err());
        let bad = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn defaults_follow_experiment_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.nu, c.max_iters, c.anchors), (1.0, 1e-5, 5, 1000));
    }

    #[test]
    fn f_step_identity_design() {
        let phi = DMatrix::<f64>::identity(3, 3);
        let b = CodeMatrix::from_rows(&[vec![1, -1], vec![-1, -1], vec![1, 1]]).unwrap();
        let p = f_step(&phi, &b, 0.0).unwrap();
        assert_eq!(p, b.to_signs());
    }

    #[test]
    fn f_step_recovers_planted_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = DMatrix::from_fn(12, 4, |_, _| rng.random::<f64>());
        let p0 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
        let b = &phi * &p0;
        let fs = FStep::new(phi, 0.0).unwrap();
        let (p, _) = fs.solve(&b).unwrap();
        assert!((p - p0).amax() < 1e-8);
    }

    #[test]
    fn f_step_duplicate_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = DMatrix::from_fn(10, 3, |_, _| rng.random::<f64>());
        let phi = DMatrix::from_fn(10, 4, |i, j| base[(i, j.min(2))]);
        let b = CodeMatrix::from_signs(&DMatrix::from_fn(10, 2, |i, j| {
            if (i + j) % 3 == 0 {
                1.0
            } else {
                -1.0
            }
        }));
        assert!(matches!(
            f_step(&phi, &b, 0.0),
            Err(Error::Numeric { step: "f-step", .. })
        ));
        let p = f_step(&phi, &b, DEFAULT_RIDGE_EPS).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn f_step_rejects_non_finite_embedding() {
        let mut phi = DMatrix::<f64>::identity(2, 2);
        phi[(0, 1)] = f64::NAN;
        let b = CodeMatrix::zeros(2, 1);
        assert!(matches!(f_step(&phi, &b, 1e-8), Err(Error::Validation(_))));
    }

    #[test]
    fn trace_csv_schema() {
        let rec = |i| IterationRecord {
            iteration: i,
            objective: 1.5,
            b_step: Duration::from_millis(1),
            g_step: Duration::from_millis(2),
            f_step: Duration::from_millis(3),
            sweeps: Some(2),
        };
        let mut t = TrainTrace {
            method: Method::Fsdh,
            setup: Duration::from_millis(4),
            records: vec![rec(0), rec(1)],
            converged: false,
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("iteration,objective,b_step_ms,g_step_ms,f_step_ms\n"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(t.total_time(), Duration::from_millis(16));
        t.method = Method::Sdh;
        assert!(t.to_csv().lines().nth(2).unwrap().ends_with(",2"));
    }
}
