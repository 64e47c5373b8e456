//! Sensitivity matrix and principal sensitivity components.
//!
//! Entry `r_ij` is the change in the i-th fitted transformed value when
//! observation `j` is deleted and the fit updated by one IRWLS step. The
//! principal directions of `R` expose groups of jointly influential
//! observations that single-deletion diagnostics miss under masking.

use crate::data::{Dataset, FitResult};
use crate::error::{Error, Result};
use crate::lst::lst_onestep;
use crate::mloss::MTable;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Principal directions and components of a sensitivity matrix.
///
/// The directions live in the column-index space of `R` (dimension n); only
/// the leading `p` of them carry meaning and are retained. `eigenvalues[i]`
/// is the i-th eigenvalue of `R'R`, i.e. the squared singular value, so
/// `||z_1||^2 >= ||z_2||^2 >= ...` by construction.
#[derive(Debug, Clone)]
pub struct SensitivityDecomposition {
    /// The sensitivity matrix the decomposition was computed from.
    pub r: DMatrix<f64>,
    /// Orthonormal directions `v_1..v_count`, each of length n.
    pub directions: Vec<DVector<f64>>,
    /// Principal sensitivity components `z_i = R v_i`.
    pub components: Vec<DVector<f64>>,
    /// Eigenvalues of `R'R`, nonincreasing.
    pub eigenvalues: Vec<f64>,
}

/// Leave-one-out deltas `beta_(j) - anchor` for every j, each from exactly
/// one IRWLS step on the reduced sample.
///
/// At the converged anchor the full-sample estimating equation vanishes, so
/// the reduced-sample step solves `M_j delta = -w_j r_j x_j` with
/// `M_j = M - a_j a_j'`; the sweep precomputes `M^{-1}` once and applies the
/// Sherman-Morrison downdate per column. Columns where the downdate is
/// ill-conditioned (leverage near one) or `M` itself is not positive definite
/// fall back to the direct one-step fit.
fn onestep_deltas(data: &Dataset, anchor: &DVector<f64>, table: &MTable) -> Result<Vec<DVector<f64>>> {
    let n = data.n();
    let p = data.p();
    let eta = data.eta(anchor);
    let w = DVector::from_fn(n, |i, _| table.s_prime(eta[i]));
    let resid = DVector::from_fn(n, |i, _| data.t()[i] - table.s(eta[i]));

    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut g = DVector::<f64>::zeros(p);
    for i in 0..n {
        let wi = w[i];
        let xi = data.x().row(i);
        for a in 0..p {
            let wxa = wi * xi[a];
            g[a] += wxa * resid[i];
            for b in a..p {
                m[(a, b)] += wxa * wi * xi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }

    let direct = |j: usize| -> Result<DVector<f64>> {
        let reduced = data.without_row(j);
        Ok(lst_onestep(&reduced, anchor, table)
            .map_err(|e| Error::SensitivityColumn { index: j, source: Box::new(e) })?
            - anchor)
    };

    let m_inv = m.clone().cholesky().map(|c| c.inverse());
    (0..n)
        .into_par_iter()
        .map(|j| {
            let Some(m_inv) = m_inv.as_ref() else {
                return direct(j);
            };
            let aj = w[j] * data.x().row(j).transpose();
            let minv_a = m_inv * &aj;
            let h = aj.dot(&minv_a);
            if !(h < 1.0 - 1e-8) {
                return direct(j);
            }
            // g_j = g - a_j r_j; M_j^{-1} g_j via Sherman-Morrison.
            let gj = &g - &aj * resid[j];
            let minv_g = m_inv * &gj;
            let delta = &minv_g + &minv_a * (aj.dot(&minv_g) / (1.0 - h));
            if delta.iter().all(|v| v.is_finite()) {
                Ok(delta)
            } else {
                direct(j)
            }
        })
        .collect()
}

/// Sensitivity matrix `r_ij = s(x_i' beta) - s(x_i' beta_(j))` where
/// `beta_(j)` is the one-step leave-one-out LST estimate anchored at `fit`.
pub fn sensitivity_matrix(data: &Dataset, fit: &FitResult, table: &MTable) -> Result<DMatrix<f64>> {
    let n = data.n();
    let fitted = {
        let eta = data.eta(&fit.beta);
        DVector::from_fn(n, |i, _| table.s(eta[i]))
    };
    let deltas = onestep_deltas(data, &fit.beta, table)?;
    let columns: Vec<DVector<f64>> = deltas
        .into_par_iter()
        .map(|delta| {
            let beta_j = &fit.beta + delta;
            let eta_j = data.eta(&beta_j);
            DVector::from_fn(n, |i, _| fitted[i] - table.s(eta_j[i]))
        })
        .collect();
    Ok(DMatrix::from_columns(&columns))
}

/// Leading `count` principal directions of `R` by singular value
/// decomposition (right singular vectors), with components `z_i = R v_i`.
/// Each direction is normalized so its largest-magnitude entry is positive.
pub fn principal_components(r: DMatrix<f64>, count: usize) -> Result<SensitivityDecomposition> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("sensitivity matrix has non-finite entries".into()));
    }
    let n = r.ncols();
    let count = count.min(n);
    let svd = r.clone().try_svd(false, true, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numerical(format!(
            "SVD did not converge on a {}x{} matrix (sup norm {:.3e})",
            r.nrows(),
            n,
            r.amax()
        ))
    })?;
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut directions = Vec::with_capacity(count);
    let mut components = Vec::with_capacity(count);
    let mut eigenvalues = Vec::with_capacity(count);
    for &k in order.iter().take(count) {
        let mut v = v_t.row(k).transpose();
        // Deterministic sign: largest-magnitude entry positive, first such
        // entry breaking ties.
        let mut idx = 0;
        let mut best = -1.0f64;
        for (i, &val) in v.iter().enumerate() {
            if val.abs() > best {
                best = val.abs();
                idx = i;
            }
        }
        if v[idx] < 0.0 {
            v.neg_mut();
        }
        components.push(&r * &v);
        directions.push(v);
        let sigma = svd.singular_values[k];
        eigenvalues.push(sigma * sigma);
    }
    Ok(SensitivityDecomposition { r, directions, components, eigenvalues })
}

/// Residuals `e_i = t(y_i) - s(x_i' beta)` of a fit, reported alongside the
/// components in diagnostics output.
pub fn transformed_residuals(data: &Dataset, beta: &DVector<f64>, table: &MTable) -> DVector<f64> {
    let eta = data.eta(beta);
    DVector::from_fn(data.n(), |i, _| data.t()[i] - table.s(eta[i]))
}
