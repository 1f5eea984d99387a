//! Supervised discrete hashing baseline: codes regress onto labels, and the
//! B-step is discrete cyclic coordinate descent (DCC) over bit columns.
//!
//! Objective: `||Y - B W||^2 + lambda ||W||^2 + nu ||B - phi(X) P||^2` with
//! `W` of shape `l x c`.
//!
//! With every column but `k` fixed, the objective in column `z = B[:, k]` is
//! `2 z^T (B' W' w_k^T - q) + const`, where `q` is column `k` of
//! `Q = Y W^T + nu F(X)`, `w_k` row `k` of `W`, and `B'`, `W'` are `B` and `W`
//! without column/row `k`. The column minimizer is `z = sgn(q - B' W' w_k^T)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{sgn, CodeMatrix};
use crate::dataset::{FeatureMatrix, OneHotLabels};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, SpdSolver};
use crate::model::{
    prepare, timed, HashModel, IterationRecord, Method, TrainConfig, TrainTrace,
};

/// Relative residual bound on the SDH G-step normal equations.
pub const SDH_G_STEP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitOrder {
    Sequential,
    /// Fresh seeded permutation of the columns on every sweep.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DccConfig {
    pub max_sweeps: usize,
    pub bit_order: BitOrder,
}

impl Default for DccConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 5,
            bit_order: BitOrder::Sequential,
        }
    }
}

/// SDH objective `||Y - B W||^2 + lambda ||W||^2 + nu ||B - phi P||^2`.
pub fn sdh_objective(
    b: &CodeMatrix,
    w: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &OneHotLabels,
    phi: &DMatrix<f64>,
    lambda: f64,
    nu: f64,
) -> Result<f64> {
    let (n, l, c) = (b.rows(), b.bits(), y.classes());
    if y.rows() != n || w.shape() != (l, c) || p.shape() != (phi.ncols(), l) || phi.nrows() != n
    {
        return Err(Error::validation("SDH objective: inconsistent dimensions"));
    }
    Ok(sdh_objective_dense(&b.to_signs(), y.ids(), w, &(phi * p), lambda, nu))
}

pub(crate) fn sdh_objective_dense(
    b: &DMatrix<f64>,
    ids: &[usize],
    w: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    lambda: f64,
    nu: f64,
) -> f64 {
    let mut pred = b * w;
    for (i, &k) in ids.iter().enumerate() {
        pred[(i, k)] -= 1.0;
    }
    pred.norm_squared() + lambda * w.norm_squared() + nu * (b - fitted).norm_squared()
}

pub(crate) fn sdh_g_step_dense(
    b: &DMatrix<f64>,
    ids: &[usize],
    classes: usize,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let l = b.ncols();
    let bt = b.transpose();
    let mut gram = &bt * b;
    add_ridge(&mut gram, lambda);
    let mut rhs = DMatrix::zeros(l, classes);
    for (i, &k) in ids.iter().enumerate() {
        for j in 0..l {
            rhs[(j, k)] += b[(i, j)];
        }
    }
    let solver = SpdSolver::new(gram, "sdh-g-step")?;
    let w = solver.solve(&rhs)?;
    let res = solver.residual(&w, &rhs);
    if res > SDH_G_STEP_TOLERANCE * rhs.norm().max(1.0) {
        return Err(Error::numeric(
            "sdh-g-step",
            format!("normal-equation residual {res:.3e} above tolerance"),
        ));
    }
    Ok(w)
}

/// `W = (B^T B + lambda I)^-1 B^T Y`, an `l x c` matrix mapping codes to labels.
pub fn sdh_g_step(b: &CodeMatrix, y: &OneHotLabels, lambda: f64) -> Result<DMatrix<f64>> {
    if b.rows() != y.rows() {
        return Err(Error::validation(format!(
            "{} code rows but {} labels",
            b.rows(),
            y.rows()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    sdh_g_step_dense(&b.to_signs(), y.ids(), y.classes(), lambda)
}

/// DCC on dense `±1` codes, in place. `observe` runs after every column
/// update. Returns the number of sweeps executed.
pub(crate) fn dcc_dense(
    ids: &[usize],
    w: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    nu: f64,
    dcc: &DccConfig,
    b: &mut DMatrix<f64>,
    mut observe: impl FnMut(&DMatrix<f64>),
) -> usize {
    let (n, l) = b.shape();
    let mut q = fitted.scale(nu);
    for (i, &k) in ids.iter().enumerate() {
        for j in 0..l {
            q[(i, j)] += w[(j, k)];
        }
    }
    let mut order: Vec<usize> = (0..l).collect();
    let mut rng = match dcc.bit_order {
        BitOrder::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        BitOrder::Sequential => None,
    };
    let mut sweeps = 0;
    while sweeps < dcc.max_sweeps {
        sweeps += 1;
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let mut changed = false;
        for &k in &order {
            // Coupling through the other bits: (B' W') w_k^T.
            let coupling = if l > 1 {
                let b_rest = b.clone().remove_column(k);
                let w_rest = w.clone().remove_row(k);
                let w_k: DVector<f64> = w.row(k).transpose();
                (b_rest * w_rest) * w_k
            } else {
                DVector::zeros(n)
            };
            for i in 0..n {
                let z = sgn(q[(i, k)] - coupling[i]);
                if z != b[(i, k)] {
                    b[(i, k)] = z;
                    changed = true;
                }
            }
            observe(b);
        }
        if !changed {
            break;
        }
    }
    sweeps
}

/// DCC B-step starting from `b_init`. Stops after `max_sweeps` sweeps or
/// after a sweep that changes no bit.
pub fn sdh_b_step_dcc(
    y: &OneHotLabels,
    w: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    nu: f64,
    dcc: &DccConfig,
    b_init: &CodeMatrix,
) -> Result<(CodeMatrix, usize)> {
    let (n, l) = (b_init.rows(), b_init.bits());
    if y.rows() != n
        || w.shape() != (l, y.classes())
        || phi.nrows() != n
        || p.shape() != (phi.ncols(), l)
    {
        return Err(Error::validation("DCC B-step: inconsistent dimensions"));
    }
    if dcc.max_sweeps == 0 {
        return Err(Error::validation("DCC needs at least one sweep"));
    }
    let mut b = b_init.to_signs();
    let sweeps = dcc_dense(y.ids(), w, &(phi * p), nu, dcc, &mut b, |_| {});
    Ok((CodeMatrix::from_signs(&b), sweeps))
}

/// Trains the SDH baseline with the same initialization and F-step as FSDH.
pub fn sdh_train(
    x: &FeatureMatrix,
    y: &OneHotLabels,
    config: &TrainConfig,
    dcc: &DccConfig,
) -> Result<(HashModel, CodeMatrix, TrainTrace)> {
    if dcc.max_sweeps == 0 {
        return Err(Error::validation("DCC needs at least one sweep"));
    }
    let prep = prepare(x, y, config)?;
    let ids = y.ids();
    let classes = y.classes();
    let (lambda, nu) = (config.lambda, config.nu);
    let mut b = prep.b;

    let (mut w, g_init) = timed(|| sdh_g_step_dense(&b, ids, classes, lambda))?;
    let ((mut p, mut fitted), f_init) = timed(|| prep.fstep.solve(&b))?;
    let setup = prep.setup_started.elapsed() - g_init - f_init;

    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: sdh_objective_dense(&b, ids, &w, &fitted, lambda, nu),
        b_step: Default::default(),
        g_step: g_init,
        f_step: f_init,
        sweeps: Some(0),
    }];
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        let before = CodeMatrix::from_signs(&b);
        let start = Instant::now();
        let sweeps = dcc_dense(ids, &w, &fitted, nu, dcc, &mut b, |_| {});
        let b_time = start.elapsed();
        let unchanged = CodeMatrix::from_signs(&b) == before;

        let (w_new, g_time) = timed(|| sdh_g_step_dense(&b, ids, classes, lambda))?;
        let ((p_new, fitted_new), f_time) = timed(|| prep.fstep.solve(&b))?;
        w = w_new;
        p = p_new;
        fitted = fitted_new;
        records.push(IterationRecord {
            iteration,
            objective: sdh_objective_dense(&b, ids, &w, &fitted, lambda, nu),
            b_step: b_time,
            g_step: g_time,
            f_step: f_time,
            sweeps: Some(sweeps),
        });
        if unchanged {
            converged = true;
            break;
        }
    }

    let codes = CodeMatrix::from_signs(&b);
    let model = HashModel::new(Method::Sdh, prep.rbf, p, w, *config)?;
    let trace = TrainTrace {
        method: Method::Sdh,
        setup,
        records,
        converged,
    };
    Ok((model, codes, trace))
}
