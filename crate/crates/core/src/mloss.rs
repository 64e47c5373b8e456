//! Loss functions and the tabulated centering function m(mu).
//!
//! `m(mu)` is the Fisher-consistent center of the transformed response:
//! the minimizer over gamma of `E_mu rho(t(y) - gamma)`. Estimators never
//! evaluate it directly; they go through an [`MTable`], which also provides
//! `s(eta) = m(exp(eta))` and its derivative `s'(eta)` by monotone cubic
//! interpolation on a log-spaced grid.

use crate::error::{Error, Result};
use crate::families::{t_transform, PoissonLogModel};
use rayon::prelude::*;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Default bisquare tuning constant. The residual scale is the
/// variance-stabilized one (unit-ish), so the cutoff is of that order.
pub const DEFAULT_TUNING_CONSTANT: f64 = 2.0;

/// rho/psi pair. The bisquare variant is normalized so `sup rho = 1`;
/// positive rescaling leaves every argmin unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `rho(u) = u^2`, the transformed-least-squares loss.
    Square,
    /// Tukey bisquare with cutoff `c`: bounded, redescending.
    Bisquare { c: f64 },
}

impl LossSpec {
    pub fn bisquare(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!("bisquare cutoff must be positive, got {c}")));
        }
        Ok(LossSpec::Bisquare { c })
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, LossSpec::Bisquare { .. })
    }

    /// Loss value at residual `u`.
    pub fn rho(&self, u: f64) -> f64 {
        match *self {
            LossSpec::Square => u * u,
            LossSpec::Bisquare { c } => {
                if u.abs() >= c {
                    1.0
                } else {
                    let v = 1.0 - (u / c).powi(2);
                    1.0 - v * v * v
                }
            }
        }
    }

    /// `psi = rho'`.
    pub fn psi(&self, u: f64) -> f64 {
        match *self {
            LossSpec::Square => 2.0 * u,
            LossSpec::Bisquare { c } => {
                if u.abs() >= c {
                    0.0
                } else {
                    let v = 1.0 - (u / c).powi(2);
                    6.0 * u / (c * c) * v * v
                }
            }
        }
    }

    /// IRWLS weight `psi(u)/u`, continuously extended by `psi'(0)` at zero.
    pub fn weight(&self, u: f64) -> f64 {
        match *self {
            LossSpec::Square => 2.0,
            LossSpec::Bisquare { c } => {
                if u == 0.0 {
                    6.0 / (c * c)
                } else if u.abs() >= c {
                    0.0
                } else {
                    let v = 1.0 - (u / c).powi(2);
                    6.0 / (c * c) * v * v
                }
            }
        }
    }
}

/// Truncation bound for Poisson expectations: summing to
/// `mu + 10 sqrt(mu) + 50` leaves tail mass below 1e-12.
fn truncation_bound(mu: f64) -> u64 {
    (mu + 10.0 * mu.sqrt() + 50.0).ceil() as u64
}

/// Poisson pmf over the k-window that carries mass above ~1e-17; entries
/// outside contribute less than 1e-13 to any expectation of a bounded
/// integrand. Returns (first_k, pmf values).
fn pmf_window(mu: f64, model: &PoissonLogModel) -> (u64, Vec<f64>) {
    if mu == 0.0 {
        return (0, vec![1.0]);
    }
    let lo = (mu - 14.0 * mu.sqrt() - 60.0).max(0.0).floor() as u64;
    let hi = truncation_bound(mu);
    let mut pmf = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        pmf.push(model.pmf(k, mu).expect("mu validated"));
    }
    (lo, pmf)
}

/// Golden-section refinement of a bracketed minimum, biased to the smallest
/// minimizer: on numerically flat stretches the left end wins.
///
/// Objective differences shrink quadratically near the minimum and drop under
/// machine epsilon once the bracket is ~1e-6 wide, so golden section alone
/// stalls around sqrt(eps) accuracy. A final parabolic interpolation through
/// the bracket recovers the vertex to ~1e-10 while the differences are still
/// resolvable.
fn golden_refine<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    const GOLDEN_TOL: f64 = 1e-5;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(mid), f(b));
    // Smallest minimizer on ties, so flat stretches resolve to their left end.
    let mut best_x = a;
    let mut best_f = fa;
    if fm < best_f {
        best_x = mid;
        best_f = fm;
    }
    if fb < best_f {
        best_x = b;
        best_f = fb;
    }
    // Parabola through (a, fa), (mid, fm), (b, fb); equally spaced abscissae.
    // The second difference must clear the cancellation noise of the
    // evaluations themselves or the vertex is garbage.
    let denom = fa - 2.0 * fm + fb;
    let noise = 128.0 * f64::EPSILON * fa.abs().max(fm.abs()).max(fb.abs()).max(1e-300);
    if denom > noise {
        let vertex = mid - (mid - a) * (fb - fa) / (2.0 * denom);
        let v = vertex.clamp(a, b);
        let fv = f(v);
        if fv < best_f {
            best_x = v;
        }
    }
    best_x
}

/// Fisher-consistent centering value `m(mu) = argmin_gamma E_mu rho(t(y) - gamma)`.
///
/// Global coarse grid (step 0.01) over `[0, t(k_max)]` followed by
/// golden-section refinement; the objective is not convex for the bisquare
/// loss, so the global scan is what protects against wrong local minima.
/// Ties resolve to the smallest minimizer.
pub fn m_value(mu: f64, loss: LossSpec, model: &PoissonLogModel) -> Result<f64> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::Domain(format!("poisson mean must be >= 0, got {mu}")));
    }
    let (k0, pmf) = pmf_window(mu, model);
    let gamma_max = t_transform(truncation_bound(mu));

    match loss {
        LossSpec::Square => {
            // E rho(t - gamma) is exactly quadratic; the centered form
            // S (gamma - B/S)^2 keeps full precision at every scale.
            let mut s = 0.0;
            let mut b = 0.0;
            for (i, &p) in pmf.iter().enumerate() {
                let t = t_transform(k0 + i as u64);
                s += p;
                b += p * t;
            }
            let center = b / s;
            let objective = |g: f64| s * (g - center) * (g - center);
            let coarse = coarse_argmin(&objective, gamma_max);
            Ok(refine_around(&objective, coarse, gamma_max))
        }
        LossSpec::Bisquare { c } => {
            // rho is 1 outside [-c, c], so only the window of k with
            // |t(k) - gamma| < c matters: J(gamma) = S - sum_win pmf (1 - rho).
            let t_vals: Vec<f64> = (0..pmf.len()).map(|i| t_transform(k0 + i as u64)).collect();
            let total: f64 = pmf.iter().sum();
            let objective = |g: f64| {
                // t(k) is increasing in k, so the window is contiguous.
                let lo_t = g - c;
                let hi_t = g + c;
                let lo_k = if lo_t <= 0.0 { 0.0 } else { (lo_t / 2.0) * (lo_t / 2.0) };
                let hi_k = (hi_t / 2.0) * (hi_t / 2.0);
                let i0 = (lo_k.floor() as u64).saturating_sub(k0).min(pmf.len() as u64) as usize;
                let i1 = ((hi_k.ceil() as u64 + 1).saturating_sub(k0)).min(pmf.len() as u64) as usize;
                let mut acc = 0.0;
                for i in i0..i1 {
                    let u = t_vals[i] - g;
                    if u.abs() < c {
                        let v = 1.0 - (u / c) * (u / c);
                        acc += pmf[i] * v * v * v;
                    }
                }
                total - acc
            };
            let coarse = coarse_argmin(&objective, gamma_max);
            Ok(refine_around(&objective, coarse, gamma_max))
        }
    }
}

/// Coarse scan with step 0.01; strict improvement keeps the earliest (hence
/// smallest) minimizer. Exact ties at grid resolution are logged.
fn coarse_argmin<F: Fn(f64) -> f64>(objective: &F, gamma_max: f64) -> f64 {
    const STEP: f64 = 0.01;
    let n = (gamma_max / STEP).ceil() as usize + 1;
    let mut best = 0.0;
    let mut best_j = objective(0.0);
    let mut tied = false;
    for i in 1..=n {
        let g = (i as f64 * STEP).min(gamma_max);
        let j = objective(g);
        if j < best_j {
            best_j = j;
            best = g;
            tied = false;
        } else if j == best_j {
            tied = true;
        }
    }
    if tied {
        log::warn!("m(mu) objective has ties at grid resolution; keeping the smallest minimizer");
    }
    best
}

fn refine_around<F: Fn(f64) -> f64>(objective: &F, coarse: f64, gamma_max: f64) -> f64 {
    const STEP: f64 = 0.01;
    let a = (coarse - STEP).max(0.0);
    let b = (coarse + STEP).min(gamma_max.max(STEP));
    golden_refine(objective, a, b)
}

/// Grid specification for [`MTable`]: log-spaced means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { mu_min: 1e-3, mu_max: 1e5, nodes: 512 }
    }
}

impl GridConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mu_min > 0.0 && self.mu_max > self.mu_min) || self.nodes < 4 {
            return Err(Error::TableBuild(format!(
                "grid must satisfy 0 < mu_min < mu_max and nodes >= 4, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Tabulated `m` over a log-spaced mu grid with monotone cubic interpolation
/// in `eta = ln(mu)`. Immutable after build; share freely across threads.
///
/// Outside the grid: below the floor `s` decays exponentially to zero
/// (matching `m(mu) ~ const * mu`), above the ceiling it follows the
/// asymptote `2 sqrt(mu)` anchored at the last node.
#[derive(Debug, Clone)]
pub struct MTable {
    loss: LossSpec,
    grid: GridConfig,
    eta0: f64,
    step: f64,
    m: Vec<f64>,
    slope: Vec<f64>, // dm/deta at the nodes, Fritsch–Carlson limited
}

impl MTable {
    /// Tabulate `m` for `loss` over `grid`. Nodes evaluate in parallel and
    /// assemble in index order, so the result is deterministic.
    pub fn build(loss: LossSpec, model: &PoissonLogModel, grid: &GridConfig) -> Result<Self> {
        grid.validate()?;
        let eta0 = grid.mu_min.ln();
        let eta1 = grid.mu_max.ln();
        let step = (eta1 - eta0) / (grid.nodes - 1) as f64;
        let etas: Vec<f64> = (0..grid.nodes).map(|i| eta0 + step * i as f64).collect();
        let mut m: Vec<f64> = etas
            .par_iter()
            .map(|&eta| m_value(eta.exp(), loss, model))
            .collect::<Result<_>>()?;
        // The minimizer is found to ~1e-10; decreases below 1e-9 are solver
        // wobble on flat stretches, anything larger violates the monotone-m
        // assumption the estimators rest on.
        for i in 1..m.len() {
            if m[i] < m[i - 1] {
                if m[i - 1] - m[i] < 1e-9 {
                    m[i] = m[i - 1];
                } else {
                    return Err(Error::TableBuild(format!(
                        "m not monotone at node {i}: m({:.6e}) = {:.9} < {:.9}",
                        etas[i].exp(),
                        m[i],
                        m[i - 1]
                    )));
                }
            }
        }
        let slope = monotone_cubic_slopes(step, &m);
        Ok(MTable { loss, grid: *grid, eta0, step, m, slope })
    }

    pub fn loss(&self) -> LossSpec {
        self.loss
    }

    pub fn grid(&self) -> GridConfig {
        self.grid
    }

    /// Grid nodes as (mu, m) pairs.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.m
            .iter()
            .enumerate()
            .map(move |(i, &m)| ((self.eta0 + self.step * i as f64).exp(), m))
    }

    fn eta_max(&self) -> f64 {
        self.eta0 + self.step * (self.m.len() - 1) as f64
    }

    /// `s(eta) = m(exp(eta))`.
    pub fn s(&self, eta: f64) -> f64 {
        let last = self.m.len() - 1;
        if eta <= self.eta0 {
            return self.m[0] * (eta - self.eta0).exp();
        }
        if eta >= self.eta_max() {
            return self.m[last] + 2.0 * ((eta / 2.0).exp() - (self.eta_max() / 2.0).exp());
        }
        let x = (eta - self.eta0) / self.step;
        let i = (x.floor() as usize).min(last - 1);
        let t = x - i as f64;
        let h = self.step;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (d0, d1) = (self.slope[i], self.slope[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        m0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + h * d0 * (t3 - 2.0 * t2 + t)
            + m1 * (-2.0 * t3 + 3.0 * t2)
            + h * d1 * (t3 - t2)
    }

    /// `s'(eta)`, the analytic derivative of the interpolant.
    pub fn s_prime(&self, eta: f64) -> f64 {
        let last = self.m.len() - 1;
        if eta <= self.eta0 {
            return self.m[0] * (eta - self.eta0).exp();
        }
        if eta >= self.eta_max() {
            return (eta / 2.0).exp();
        }
        let x = (eta - self.eta0) / self.step;
        let i = (x.floor() as usize).min(last - 1);
        let t = x - i as f64;
        let h = self.step;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (d0, d1) = (self.slope[i], self.slope[i + 1]);
        let t2 = t * t;
        ((m0 - m1) * (6.0 * t2 - 6.0 * t)) / h
            + d0 * (3.0 * t2 - 4.0 * t + 1.0)
            + d1 * (3.0 * t2 - 2.0 * t)
    }

    /// `m(mu)` through the interpolant.
    pub fn m_at(&self, mu: f64) -> f64 {
        self.s(mu.ln())
    }

    fn param_line(&self) -> String {
        let (kind, c) = match self.loss {
            LossSpec::Square => ("square", 0.0),
            LossSpec::Bisquare { c } => ("bisquare", c),
        };
        format!(
            "loss={kind} c={c:.17e} mu_min={:.17e} mu_max={:.17e} nodes={}",
            self.grid.mu_min, self.grid.mu_max, self.grid.nodes
        )
    }

    fn table_hash(params: &str, m: &[f64]) -> u64 {
        let mut h = DefaultHasher::new();
        params.hash(&mut h);
        for v in m {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Write the table as CSV with a header recording loss, grid and a hash.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let params = self.param_line();
        let hash = Self::table_hash(&params, &self.m);
        let mut out = std::fs::File::create(path)?;
        writeln!(out, "# robustglm m-table v1")?;
        writeln!(out, "# {params} hash={hash}")?;
        writeln!(out, "mu,m")?;
        for (mu, m) in self.nodes() {
            writeln!(out, "{:.17e},{:.17e}", mu, m)?;
        }
        Ok(())
    }

    /// Load a cached table, validating that the header matches `loss`/`grid`
    /// and that the stored hash matches the recomputed one.
    pub fn load_csv<P: AsRef<Path>>(path: P, loss: LossSpec, grid: &GridConfig) -> Result<Self> {
        grid.validate()?;
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic.trim() != "# robustglm m-table v1" {
            return Err(Error::TableCache("unrecognized header".into()));
        }
        let header = lines.next().transpose()?.unwrap_or_default();
        let header = header.trim_start_matches('#').trim();
        let (params, hash_part) = header
            .rsplit_once(" hash=")
            .ok_or_else(|| Error::TableCache("missing hash field".into()))?;
        let stored_hash: u64 = hash_part
            .trim()
            .parse()
            .map_err(|_| Error::TableCache("unparseable hash".into()))?;
        let _ = lines.next(); // column header
        let mut m = Vec::with_capacity(grid.nodes);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (_, mv) = line
                .split_once(',')
                .ok_or_else(|| Error::TableCache(format!("bad row: {line}")))?;
            m.push(
                mv.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::TableCache(format!("bad value: {mv}")))?,
            );
        }
        if m.len() != grid.nodes {
            return Err(Error::TableCache(format!(
                "node count mismatch: file has {}, requested {}",
                m.len(),
                grid.nodes
            )));
        }
        let eta0 = grid.mu_min.ln();
        let step = (grid.mu_max.ln() - eta0) / (grid.nodes - 1) as f64;
        let slope = monotone_cubic_slopes(step, &m);
        let table = MTable { loss, grid: *grid, eta0, step, m, slope };
        let params_now = table.param_line();
        if params_now != params {
            return Err(Error::TableCache(format!(
                "parameter mismatch: file built with `{params}`, requested `{params_now}`"
            )));
        }
        if Self::table_hash(&params_now, &table.m) != stored_hash {
            return Err(Error::TableCache("hash mismatch: table contents corrupted".into()));
        }
        Ok(table)
    }
}

/// Fritsch–Carlson slopes for a monotone cubic Hermite interpolant on an
/// equally spaced grid. Flat secants force zero slopes so the interpolant
/// never overshoots.
fn monotone_cubic_slopes(h: f64, m: &[f64]) -> Vec<f64> {
    let n = m.len();
    let mut delta = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        delta.push((m[i + 1] - m[i]) / h);
    }
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            d[i] = 0.5 * (delta[i - 1] + delta[i]);
        }
    }
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
        } else {
            let alpha = d[i] / delta[i];
            let beta = d[i + 1] / delta[i];
            let norm2 = alpha * alpha + beta * beta;
            if norm2 > 9.0 {
                let tau = 3.0 / norm2.sqrt();
                d[i] = tau * alpha * delta[i];
                d[i + 1] = tau * beta * delta[i];
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const MODEL: PoissonLogModel = PoissonLogModel;

    fn bisq2() -> LossSpec {
        LossSpec::bisquare(2.0).unwrap()
    }

    #[test]
    fn rho_closed_forms() {
        assert_eq!(bisq2().rho(0.0), 0.0);
        assert_eq!(bisq2().rho(2.0), 1.0);
        assert_eq!(bisq2().rho(-5.0), 1.0);
        assert_eq!(LossSpec::Square.rho(3.0), 9.0);
    }

    #[test]
    fn psi_closed_forms() {
        assert_eq!(bisq2().psi(2.0), 0.0);
        assert_abs_diff_eq!(bisq2().psi(1.0), 27.0 / 32.0, epsilon = 1e-15);
        assert_eq!(LossSpec::Square.psi(3.0), 6.0);
    }

    #[test]
    fn weight_limit_at_zero() {
        assert_abs_diff_eq!(bisq2().weight(0.0), 6.0 / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bisq2().weight(1e-12), 6.0 / 4.0, epsilon = 1e-9);
        assert_eq!(LossSpec::Square.weight(0.0), 2.0);
    }

    proptest! {
        #[test]
        fn psi_matches_central_difference_of_rho(u in -6.0f64..6.0, c in 0.5f64..5.0) {
            let loss = LossSpec::bisquare(c).unwrap();
            let h = 1e-5;
            let fd = (loss.rho(u + h) - loss.rho(u - h)) / (2.0 * h);
            prop_assert!((fd - loss.psi(u)).abs() <= 1e-6);
        }

        #[test]
        fn bisquare_bounded_and_redescending(u in -50.0f64..50.0, c in 0.5f64..5.0) {
            let loss = LossSpec::bisquare(c).unwrap();
            let r = loss.rho(u);
            prop_assert!((0.0..=1.0).contains(&r));
            if u.abs() >= c {
                prop_assert_eq!(loss.psi(u), 0.0);
            }
            prop_assert!(loss.rho(u) == loss.rho(-u));
        }
    }

    /// Independent dense-grid argmin of E rho(t(y) - gamma); naive full sum
    /// per gamma, its own truncation rule.
    fn m_brute_force(mu: f64, loss: LossSpec, step: f64) -> f64 {
        let kmax = (mu + 12.0 * mu.sqrt() + 60.0).ceil() as u64;
        let pmf: Vec<f64> = (0..=kmax).map(|k| MODEL.pmf(k, mu).unwrap()).collect();
        let ts: Vec<f64> = (0..=kmax).map(t_transform).collect();
        let gmax = *ts.last().unwrap();
        let mut best = 0.0;
        let mut best_j = f64::INFINITY;
        let mut g = 0.0;
        while g <= gmax {
            let j: f64 = pmf.iter().zip(&ts).map(|(&p, &t)| p * loss.rho(t - g)).sum();
            if j < best_j {
                best_j = j;
                best = g;
            }
            g += step;
        }
        best
    }

    #[test]
    fn m_value_point_mass_at_zero() {
        assert_eq!(m_value(0.0, bisq2(), &MODEL).unwrap(), 0.0);
        assert_eq!(m_value(0.0, LossSpec::Square, &MODEL).unwrap(), 0.0);
    }

    #[test]
    fn m_value_square_equals_expected_t() {
        for &mu in &[0.3, 1.0, 4.0, 50.0] {
            let m = m_value(mu, LossSpec::Square, &MODEL).unwrap();
            let e = MODEL.expected_t(mu).unwrap();
            assert_abs_diff_eq!(m, e, epsilon = 1e-8);
        }
    }

    #[test]
    fn m_value_bisquare_matches_dense_oracle() {
        for &mu in &[0.5, 1.0, 2.0, 7.0, 30.0] {
            let m = m_value(mu, bisq2(), &MODEL).unwrap();
            let oracle = m_brute_force(mu, bisq2(), 1e-4);
            assert!((m - oracle).abs() <= 1e-3, "mu={mu}: m={m} oracle={oracle}");
        }
    }

    #[test]
    fn m_value_bisquare_low_mu_flat_zero() {
        // For c = 2 the objective is stationary at gamma = 0 for every mu and
        // the origin stays the global minimizer until mu ~ 0.7.
        assert_eq!(m_value(0.2, bisq2(), &MODEL).unwrap(), 0.0);
        assert_eq!(m_value(0.5, bisq2(), &MODEL).unwrap(), 0.0);
        assert!(m_value(1.0, bisq2(), &MODEL).unwrap() > 2.0);
    }

    fn small_grid() -> GridConfig {
        GridConfig { mu_min: 1e-3, mu_max: 1e3, nodes: 200 }
    }

    #[test]
    fn table_passes_through_nodes() {
        let table = MTable::build(bisq2(), &MODEL, &small_grid()).unwrap();
        for (mu, m) in table.nodes().step_by(17) {
            let direct = m_value(mu, bisq2(), &MODEL).unwrap();
            assert_abs_diff_eq!(table.s(mu.ln()), m, epsilon = 1e-12);
            assert_abs_diff_eq!(m, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn table_square_matches_expected_t() {
        let table = MTable::build(LossSpec::Square, &MODEL, &small_grid()).unwrap();
        for (mu, m) in table.nodes().step_by(11) {
            assert_abs_diff_eq!(m, MODEL.expected_t(mu).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn s_prime_matches_finite_difference() {
        let table = MTable::build(LossSpec::Square, &MODEL, &small_grid()).unwrap();
        let h = 1e-5;
        let eta_lo = 1e-3f64.ln() + 0.05;
        let eta_hi = 1e3f64.ln() - 0.05;
        let mut eta = eta_lo;
        let mut worst = 0.0f64;
        while eta < eta_hi {
            let fd = (table.s(eta + h) - table.s(eta - h)) / (2.0 * h);
            worst = worst.max((fd - table.s_prime(eta)).abs());
            eta += 0.11;
        }
        assert!(worst <= 1e-4, "max |fd - s'| = {worst}");
    }

    #[test]
    fn fisher_consistency_first_order_condition() {
        // sum_k psi(t(k) - m(mu)) pmf(k, mu) ~ 0 wherever the minimum is
        // stationary; with c = 2 that includes the flat-zero stretch.
        let table = MTable::build(bisq2(), &MODEL, &small_grid()).unwrap();
        for (mu, m) in table.nodes().step_by(7) {
            let kmax = truncation_bound(mu);
            let mut score = 0.0;
            for k in 0..=kmax {
                score += bisq2().psi(t_transform(k) - m) * MODEL.pmf(k, mu).unwrap();
            }
            assert!(score.abs() <= 1e-5, "mu={mu} m={m} score={score}");
        }
    }

    #[test]
    fn table_monotone_and_s_prime_nonnegative() {
        let table = MTable::build(bisq2(), &MODEL, &small_grid()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for (_, m) in table.nodes() {
            assert!(m >= prev);
            prev = m;
        }
        let mut eta = 1e-3f64.ln();
        while eta < 1e3f64.ln() {
            assert!(table.s_prime(eta) >= 0.0);
            eta += 0.03;
        }
    }

    #[test]
    fn extensions_are_continuous_and_increasing() {
        let table = MTable::build(LossSpec::Square, &MODEL, &small_grid()).unwrap();
        let eta_lo = 1e-3f64.ln();
        let eta_hi = 1e3f64.ln();
        assert_abs_diff_eq!(table.s(eta_lo - 1e-9), table.s(eta_lo), epsilon = 1e-6);
        assert_abs_diff_eq!(table.s(eta_hi + 1e-9), table.s(eta_hi), epsilon = 1e-6);
        assert!(table.s(eta_hi + 3.0) > table.s(eta_hi + 1.0));
        assert!(table.s(eta_lo - 1.0) < table.s(eta_lo));
        assert!(table.s(eta_lo - 40.0) >= 0.0);
    }

    #[test]
    fn cache_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mtable.csv");
        let grid = GridConfig { mu_min: 1e-2, mu_max: 1e2, nodes: 64 };
        let table = MTable::build(bisq2(), &MODEL, &grid).unwrap();
        table.save_csv(&path).unwrap();
        let loaded = MTable::load_csv(&path, bisq2(), &grid).unwrap();
        for ((mu_a, m_a), (mu_b, m_b)) in table.nodes().zip(loaded.nodes()) {
            assert_eq!(mu_a.to_bits(), mu_b.to_bits());
            assert_eq!(m_a.to_bits(), m_b.to_bits());
        }
        // Wrong loss parameters must be rejected.
        let err = MTable::load_csv(&path, LossSpec::bisquare(3.0).unwrap(), &grid);
        assert!(matches!(err, Err(Error::TableCache(_))));
        // Wrong grid must be rejected.
        let other = GridConfig { mu_min: 1e-2, mu_max: 1e2, nodes: 32 };
        assert!(matches!(MTable::load_csv(&path, bisq2(), &other), Err(Error::TableCache(_))));
        // Corrupted contents must be rejected.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("mu,m", "mu,m").replacen('5', "6", 1);
        std::fs::write(&path, text).unwrap();
        assert!(MTable::load_csv(&path, bisq2(), &grid).is_err());
    }
}
