//! Transformed least squares estimator.
//!
//! IRWLS iteration: `beta_{k+1} = beta_k + (X'W^2 X)^{-1} X'W (T - s(X beta_k))`
//! with `W = diag(s'(x_i' beta_k))`, i.e. each step is the least-squares
//! solution of the locally linearized problem. Without a starting value the
//! first step is taken from the fitted values of `eta_0 = log(y + 0.1)`.

use crate::data::{loss_objective, Dataset, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::mloss::MTable;
use nalgebra::{DMatrix, DVector};

/// Result of one weighted least-squares step.
pub(crate) struct WlsStep {
    pub solution: DVector<f64>,
    /// True when the ridge fallback had to repair a rank-deficient system.
    pub degraded: bool,
}

/// Minimize `||A d - b||` by column-pivoted QR; on rank deficiency fall back
/// to the ridge-regularized normal equations `(A'A + lambda I) d = A'b` with
/// `lambda = 1e-10 tr(A'A)/p`, so collinear candidate fits degrade instead of
/// aborting the pipeline.
pub(crate) fn weighted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<WlsStep> {
    let p = a.ncols();
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    let full_rank = r00 > 0.0 && (0..p).all(|i| r[(i, i)].abs() > 1e-10 * r00);
    if full_rank {
        let mut z = qr.q().tr_mul(b);
        if r.solve_upper_triangular_mut(&mut z) {
            qr.p().inv_permute_rows(&mut z);
            if z.iter().all(|v| v.is_finite()) {
                return Ok(WlsStep { solution: z, degraded: false });
            }
        }
    }
    let mut normal = a.tr_mul(a);
    let trace = normal.trace();
    let lambda = if trace > 0.0 { 1e-10 * trace / p as f64 } else { 1e-10 };
    for i in 0..p {
        normal[(i, i)] += lambda;
    }
    let rhs = a.tr_mul(b);
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("ridge-regularized normal matrix not positive definite".into()))?;
    let solution = chol.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient("ridge solve produced non-finite coefficients".into()));
    }
    Ok(WlsStep { solution, degraded: true })
}

/// Scale row `i` of `x` by `w[i]`.
fn scale_rows(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut a = x.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= w[i];
    }
    a
}

fn weights_and_residuals(data: &Dataset, table: &MTable, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = data.n();
    let w = DVector::from_fn(n, |i, _| table.s_prime(eta[i]));
    let r = DVector::from_fn(n, |i, _| data.t()[i] - table.s(eta[i]));
    (w, r)
}

/// Sup norm of the LST estimating equation `X'W (T - s(X beta))`.
pub fn lst_equation_norm(data: &Dataset, table: &MTable, beta: &DVector<f64>) -> f64 {
    let eta = data.eta(beta);
    let (w, r) = weights_and_residuals(data, table, &eta);
    let mut g = DVector::zeros(data.p());
    for i in 0..data.n() {
        let c = w[i] * r[i];
        for j in 0..data.p() {
            g[j] += c * data.x()[(i, j)];
        }
    }
    g.amax()
}

/// Fit the LST estimator. `table` must be built with the square loss; `start`
/// overrides the `eta_0 = log(y + 0.1)` initialization.
pub fn lst_fit(
    data: &Dataset,
    table: &MTable,
    start: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    debug_assert!(!table.loss().is_bounded(), "LST requires the square-loss table");
    let mut degraded = false;
    let mut beta = match start {
        Some(b) => b.clone(),
        None => {
            // First step from eta_0 directly: beta_1 solves the linearized
            // problem with A = W X and b = W eta_0 + (T - s(eta_0)).
            let eta0 = DVector::from_iterator(data.n(), data.y().iter().map(|&y| (y as f64 + 0.1).ln()));
            let (w, r) = weights_and_residuals(data, table, &eta0);
            let a = scale_rows(data.x(), &w);
            let b = DVector::from_fn(data.n(), |i, _| w[i] * eta0[i] + r[i]);
            let step = weighted_lstsq(&a, &b)?;
            degraded |= step.degraded;
            step.solution
        }
    };

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let eta = data.eta(&beta);
        let (w, r) = weights_and_residuals(data, table, &eta);
        let a = scale_rows(data.x(), &w);
        let step = weighted_lstsq(&a, &r)?;
        degraded |= step.degraded;
        let next = &beta + &step.solution;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("LST iterate is non-finite".into()));
        }
        let rel = step.solution.norm() / beta.norm().max(1e-12);
        beta = next;
        if rel <= opts.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        objective: loss_objective(data, &beta, table),
        eq_residual_norm: lst_equation_norm(data, table, &beta),
        beta,
        converged,
        iterations,
        degraded,
    })
}

/// Exactly one IRWLS update on a reduced sample, starting from `anchor`
/// (normally the full-sample LST estimate). This is the one-step
/// leave-one-out fit the sensitivity matrix is made of.
pub fn lst_onestep(data_minus_j: &Dataset, anchor: &DVector<f64>, table: &MTable) -> Result<DVector<f64>> {
    let eta = data_minus_j.eta(anchor);
    let (w, r) = weights_and_residuals(data_minus_j, table, &eta);
    let a = scale_rows(data_minus_j.x(), &w);
    let step = weighted_lstsq(&a, &r)?;
    let next = anchor + step.solution;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("one-step LST update is non-finite".into()));
    }
    Ok(next)
}
