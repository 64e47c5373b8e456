//! Regression data and fit results shared by every estimator.

use crate::error::{Error, Result};
use crate::families::t_transform;
use crate::mloss::MTable;
use nalgebra::{DMatrix, DVector};

/// Design matrix plus count responses. The transformed responses
/// `t(y_i) = 2 sqrt(y_i)` are cached at construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<u64>,
    t: DVector<f64>,
}

impl Dataset {
    /// Build a dataset, validating `n > p` and finiteness of the design.
    pub fn new(x: DMatrix<f64>, y: Vec<u64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidData(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() <= x.ncols() {
            return Err(Error::InvalidData(format!(
                "need n > p, got n = {}, p = {}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design contains non-finite entries".into()));
        }
        let t = DVector::from_iterator(y.len(), y.iter().map(|&v| t_transform(v)));
        Ok(Dataset { x, y, t })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    /// Cached transformed responses `T = (t(y_1), ..., t(y_n))`.
    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    /// Row subset in the given order. Indices must be in range.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y: Vec<u64> = rows.iter().map(|&i| self.y[i]).collect();
        let t = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.t[i]));
        Dataset { x, y, t }
    }

    /// Dataset with row `j` removed.
    pub fn without_row(&self, j: usize) -> Dataset {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| i != j).collect();
        self.subset(&rows)
    }

    /// Linear predictor `X beta`.
    pub fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }
}

/// One fitted estimator.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficient vector.
    pub beta: DVector<f64>,
    /// Whether the producing iteration met its tolerance.
    pub converged: bool,
    /// Iterations performed (stage count for the two-stage initializer).
    pub iterations: usize,
    /// Objective under the producing loss at `beta`.
    pub objective: f64,
    /// Sup norm of the estimating equation at `beta`.
    pub eq_residual_norm: f64,
    /// Set when a rank-deficient step was repaired by the ridge fallback.
    pub degraded: bool,
}

/// Stopping rule for the IRWLS loops.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Relative coefficient-change tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-8, max_iter: 100 }
    }
}

/// `L(beta) = sum_i rho(t(y_i) - s(x_i' beta))` under the table's loss.
pub fn loss_objective(data: &Dataset, beta: &DVector<f64>, table: &MTable) -> f64 {
    let loss = table.loss();
    let eta = data.eta(beta);
    let mut acc = 0.0;
    for i in 0..data.n() {
        acc += loss.rho(data.t()[i] - table.s(eta[i]));
    }
    acc
}
