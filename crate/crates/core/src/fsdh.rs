//! Label-to-code regression hashing: labels regress onto codes, which makes
//! every block update closed-form.
//!
//! Objective: `||B - Y W||^2 + lambda ||W||^2 + nu ||B - phi(X) P||^2` with
//! `B` in `{-1, +1}^{n x l}`.
//!
//! * G-step: `W = (Y^T Y + lambda I)^-1 Y^T B`
//! * F-step: `P = (phi^T phi + eps I)^-1 phi^T B`
//! * B-step: `B = sgn(Y W + nu phi P)`, all bits at once.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::codes::CodeMatrix;
use crate::dataset::{FeatureMatrix, OneHotLabels};
use crate::error::{Error, Result};
use crate::linalg::{add_ridge, SpdSolver};
use crate::model::{
    prepare, timed, HashModel, IterationRecord, Method, TrainConfig, TrainTrace,
};

/// Relative residual bound on the G-step normal equations.
pub const G_STEP_TOLERANCE: f64 = 1e-8;

fn check_dims(
    what: &str,
    (r, c): (usize, usize),
    (er, ec): (usize, usize),
) -> Result<()> {
    if (r, c) != (er, ec) {
        return Err(Error::validation(format!(
            "{what} is {r}x{c}, expected {er}x{ec}"
        )));
    }
    Ok(())
}

/// Evaluates the FSDH objective.
pub fn objective(
    b: &CodeMatrix,
    w: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &OneHotLabels,
    phi: &DMatrix<f64>,
    lambda: f64,
    nu: f64,
) -> Result<f64> {
    let (n, l, c, m) = (b.rows(), b.bits(), y.classes(), phi.ncols());
    check_dims("labels", (y.rows(), c), (n, c))?;
    check_dims("W", w.shape(), (c, l))?;
    check_dims("P", p.shape(), (m, l))?;
    check_dims("phi", phi.shape(), (n, m))?;
    Ok(objective_dense(&b.to_signs(), y.ids(), w, &(phi * p), lambda, nu))
}

pub(crate) fn objective_dense(
    b: &DMatrix<f64>,
    ids: &[usize],
    w: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    lambda: f64,
    nu: f64,
) -> f64 {
    let mut label_term = 0.0;
    for j in 0..b.ncols() {
        for (i, &k) in ids.iter().enumerate() {
            let r = b[(i, j)] - w[(k, j)];
            label_term += r * r;
        }
    }
    label_term + lambda * w.norm_squared() + nu * (b - fitted).norm_squared()
}

/// G-step on dense `±1` codes. `Y^T Y` is the diagonal of class counts and
/// `Y^T B` the per-class code sums.
pub(crate) fn g_step_dense(
    ids: &[usize],
    classes: usize,
    b: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let l = b.ncols();
    let mut gram = DMatrix::zeros(classes, classes);
    let mut rhs = DMatrix::zeros(classes, l);
    for (i, &k) in ids.iter().enumerate() {
        gram[(k, k)] += 1.0;
        for j in 0..l {
            rhs[(k, j)] += b[(i, j)];
        }
    }
    add_ridge(&mut gram, lambda);
    let solver = SpdSolver::new(gram, "g-step").map_err(|e| match e {
        Error::Numeric { step, msg } => Error::Numeric {
            step,
            msg: format!("{msg}; use lambda > 0 when a class has no examples"),
        },
        other => other,
    })?;
    let w = solver.solve(&rhs)?;
    let res = solver.residual(&w, &rhs);
    if res > G_STEP_TOLERANCE * rhs.norm().max(1.0) {
        return Err(Error::numeric(
            "g-step",
            format!("normal-equation residual {res:.3e} above tolerance"),
        ));
    }
    Ok(w)
}

/// `W = (Y^T Y + lambda I)^-1 Y^T B`, a `c x l` matrix.
pub fn g_step(y: &OneHotLabels, b: &CodeMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    check_dims("codes", (b.rows(), b.bits()), (y.rows(), b.bits()))?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    g_step_dense(y.ids(), y.classes(), &b.to_signs(), lambda)
}

/// `sgn(Y W + nu F)` with `F = phi P` precomputed.
pub(crate) fn b_step_dense(
    ids: &[usize],
    w: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    nu: f64,
) -> CodeMatrix {
    let mut out = CodeMatrix::zeros(ids.len(), w.ncols());
    for j in 0..w.ncols() {
        let f = fitted.column(j);
        for (i, &k) in ids.iter().enumerate() {
            if w[(k, j)] + nu * f[i] >= 0.0 {
                out.set(i, j, true);
            }
        }
    }
    out
}

/// Closed-form B-step `B = sgn(Y W + nu phi P)`, the exact minimizer over
/// all `±1` matrices with `W` and `P` fixed.
pub fn b_step(
    y: &OneHotLabels,
    w: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    nu: f64,
) -> Result<CodeMatrix> {
    let l = w.ncols();
    check_dims("W", w.shape(), (y.classes(), l))?;
    check_dims("phi", phi.shape(), (y.rows(), p.nrows()))?;
    check_dims("P", p.shape(), (phi.ncols(), l))?;
    Ok(b_step_dense(y.ids(), w, &(phi * p), nu))
}

/// Runs the alternating scheme: random codes, `W` then `P` initialization,
/// then B/G/F rounds until the codes stop changing or `max_iters` is hit.
pub fn train(
    x: &FeatureMatrix,
    y: &OneHotLabels,
    config: &TrainConfig,
) -> Result<(HashModel, CodeMatrix, TrainTrace)> {
    let prep = prepare(x, y, config)?;
    let ids = y.ids();
    let classes = y.classes();
    let (lambda, nu) = (config.lambda, config.nu);
    let mut b = prep.b;
    let mut codes = CodeMatrix::from_signs(&b);

    let (mut w, g_init) = timed(|| g_step_dense(ids, classes, &b, lambda))?;
    let ((mut p, mut fitted), f_init) = timed(|| prep.fstep.solve(&b))?;
    let setup = prep.setup_started.elapsed() - g_init - f_init;

    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: objective_dense(&b, ids, &w, &fitted, lambda, nu),
        b_step: Default::default(),
        g_step: g_init,
        f_step: f_init,
        sweeps: None,
    }];
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        let start = Instant::now();
        let next = b_step_dense(ids, &w, &fitted, nu);
        let b_time = start.elapsed();
        let unchanged = next == codes;
        codes = next;
        b = codes.to_signs();

        let (w_new, g_time) = timed(|| g_step_dense(ids, classes, &b, lambda))?;
        let ((p_new, fitted_new), f_time) = timed(|| prep.fstep.solve(&b))?;
        w = w_new;
        p = p_new;
        fitted = fitted_new;
        records.push(IterationRecord {
            iteration,
            objective: objective_dense(&b, ids, &w, &fitted, lambda, nu),
            b_step: b_time,
            g_step: g_time,
            f_step: f_time,
            sweeps: None,
        });
        if unchanged {
            converged = true;
            break;
        }
    }

    let model = HashModel::new(Method::Fsdh, prep.rbf, p, w, *config)?;
    let trace = TrainTrace {
        method: Method::Fsdh,
        setup,
        records,
        converged,
    };
    Ok((model, codes, trace))
}
