//! Poisson distribution with log link.
//!
//! Densities, quantiles and the variance-stabilizing transformation
//! `t(y) = 2 sqrt(y)` that every estimator in this crate works on. All
//! functions are pure and safe to call from any number of threads.

use crate::error::{Error, Result};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::{gamma_ur, ln_gamma};

/// Mean above which quantiles start from a normal approximation instead of
/// forward summation of the pmf.
const QUANTILE_SUMMATION_CEILING: f64 = 1e4;

/// Mean above which the quantile refinement via the incomplete gamma function
/// is skipped and the continuity-corrected normal approximation is returned
/// as-is. Far outside any range exercised by data; only reachable through
/// wildly diverged candidate coefficients during trimming.
const QUANTILE_EXACT_CEILING: f64 = 1e12;

/// Mean above which `expected_t` switches to its asymptotic expansion.
const EXPECTED_T_ASYMPTOTIC_FLOOR: f64 = 1e5;

/// Poisson response with canonical log link. Stateless; the mean is supplied
/// per call. Dispersion is fixed at one.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonLogModel;

/// Variance-stabilizing transformation for Poisson counts: `t(y) = 2 sqrt(y)`.
pub fn t_transform(y: u64) -> f64 {
    2.0 * (y as f64).sqrt()
}

impl PoissonLogModel {
    /// Link function `g(mu) = ln(mu)`.
    pub fn link(&self, mu: f64) -> f64 {
        mu.ln()
    }

    /// Inverse link `g^-1(eta) = exp(eta)`.
    pub fn inv_link(&self, eta: f64) -> f64 {
        eta.exp()
    }

    /// Log of the pmf at `k` for mean `mu`.
    pub fn ln_pmf(&self, k: u64, mu: f64) -> Result<f64> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!("poisson mean must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
        }
        let kf = k as f64;
        Ok(-mu + kf * mu.ln() - ln_gamma(kf + 1.0))
    }

    /// Probability mass at `k`, computed in log space.
    pub fn pmf(&self, k: u64, mu: f64) -> Result<f64> {
        Ok(self.ln_pmf(k, mu)?.exp())
    }

    /// `P(Y <= k)` for mean `mu`.
    pub fn cdf(&self, k: u64, mu: f64) -> Result<f64> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!("poisson mean must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(1.0);
        }
        if mu <= QUANTILE_SUMMATION_CEILING && (k as f64) <= mu + 20.0 * mu.sqrt() + 200.0 {
            // Forward Kahan summation of exp(ln pmf); each term from the log
            // formula directly so no drift accumulates across terms.
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for j in 0..=k {
                let term = self.pmf(j, mu)?;
                let y = term - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            Ok(sum.min(1.0))
        } else {
            // P(Y <= k) = Q(k + 1, mu), upper regularized incomplete gamma.
            Ok(gamma_ur(k as f64 + 1.0, mu))
        }
    }

    /// Smallest integer `k` with `cdf(k, mu) >= q`.
    pub fn quantile(&self, q: f64, mu: f64) -> Result<u64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must be in (0,1), got {q}")));
        }
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!("poisson mean must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(0);
        }
        if mu <= QUANTILE_SUMMATION_CEILING {
            // Forward cumulative summation in log-stabilized arithmetic.
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            let mut k = 0u64;
            loop {
                let term = self.pmf(k, mu)?;
                let y = term - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
                if sum >= q {
                    return Ok(k);
                }
                // The loop is bounded: past mu + O(sqrt(mu)) the cdf is within
                // machine epsilon of one, which exceeds any admissible q.
                if (k as f64) > mu + 20.0 * mu.sqrt() + 200.0 {
                    return Ok(k);
                }
                k += 1;
            }
        } else {
            // Normal approximation with continuity correction as a starting
            // bracket, then exact refinement through the gamma-function cdf.
            let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
            let z = normal.inverse_cdf(q);
            let approx = mu + z * mu.sqrt() - 0.5;
            let mut k = approx.max(0.0).round() as u64;
            if mu > QUANTILE_EXACT_CEILING {
                return Ok(k);
            }
            while self.cdf(k, mu)? < q {
                k += 1;
            }
            while k > 0 && self.cdf(k - 1, mu)? >= q {
                k -= 1;
            }
            Ok(k)
        }
    }

    /// `E[t(Y)]` for mean `mu`: the truncated sum of `2 sqrt(k) pmf(k, mu)`,
    /// switching to the expansion `2 sqrt(mu) - 1/(4 sqrt(mu))` above 1e5.
    pub fn expected_t(&self, mu: f64) -> Result<f64> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(Error::Domain(format!("poisson mean must be >= 0, got {mu}")));
        }
        if mu == 0.0 {
            return Ok(0.0);
        }
        if mu > EXPECTED_T_ASYMPTOTIC_FLOOR {
            let r = mu.sqrt();
            return Ok(2.0 * r - 1.0 / (4.0 * r));
        }
        // Head terms below pmf ~ 1e-40 are skipped; the tail stops once the
        // pmf drops under 1e-15 past mu + 10 sqrt(mu) + 20.
        let start = (mu - 14.0 * mu.sqrt() - 60.0).max(0.0).floor() as u64;
        let tail_gate = mu + 10.0 * mu.sqrt() + 20.0;
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        let mut k = start;
        loop {
            let p = self.pmf(k, mu)?;
            let term = t_transform(k) * p;
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if p < 1e-15 && (k as f64) > tail_gate {
                break;
            }
            k += 1;
        }
        Ok(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const MODEL: PoissonLogModel = PoissonLogModel;

    #[test]
    fn pmf_matches_direct_evaluation() {
        assert_abs_diff_eq!(MODEL.pmf(0, 1.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(MODEL.pmf(2, 2.0).unwrap(), 2.0 * (-2.0f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn pmf_point_mass_at_zero_mean() {
        assert_eq!(MODEL.pmf(0, 0.0).unwrap(), 1.0);
        assert_eq!(MODEL.pmf(3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn pmf_rejects_negative_mean() {
        assert!(matches!(MODEL.pmf(0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(MODEL.quantile(0.5, 0.0).unwrap(), 0);
        // CDF(2;1) = 0.9197 < 0.975, CDF(3;1) = 0.9810.
        assert_eq!(MODEL.quantile(0.975, 1.0).unwrap(), 3);
        // CDF(0;4) = 0.0183 < 0.025, CDF(1;4) = 0.0916.
        assert_eq!(MODEL.quantile(0.025, 4.0).unwrap(), 1);
    }

    #[test]
    fn quantile_rejects_bad_level() {
        assert!(MODEL.quantile(0.0, 1.0).is_err());
        assert!(MODEL.quantile(1.0, 1.0).is_err());
        assert!(MODEL.quantile(-0.2, 1.0).is_err());
    }

    #[test]
    fn quantile_large_mean_consistent_with_cdf() {
        for &mu in &[2e4, 1e5, 3e6] {
            for &q in &[0.025, 0.5, 0.975] {
                let k = MODEL.quantile(q, mu).unwrap();
                assert!(MODEL.cdf(k, mu).unwrap() >= q);
                assert!(MODEL.cdf(k - 1, mu).unwrap() < q);
            }
        }
    }

    #[test]
    fn t_transform_examples() {
        assert_eq!(t_transform(0), 0.0);
        assert_eq!(t_transform(4), 4.0);
        assert_eq!(t_transform(9), 6.0);
    }

    #[test]
    fn expected_t_examples() {
        assert_eq!(MODEL.expected_t(0.0).unwrap(), 0.0);
        // Truncated-sum oracle 2 e^-1 sum sqrt(k)/k! computed independently.
        let oracle = {
            let mut s = 0.0;
            let mut fact = 1.0f64;
            for k in 1..60u64 {
                fact *= k as f64;
                s += (k as f64).sqrt() / fact;
            }
            2.0 * (-1.0f64).exp() * s
        };
        assert_abs_diff_eq!(oracle, 1.546385312758572, epsilon = 1e-12);
        assert_abs_diff_eq!(MODEL.expected_t(1.0).unwrap(), oracle, epsilon = 1e-10);
        // Truncated sum against the asymptotic expansion at mu = 100.
        let v = MODEL.expected_t(100.0).unwrap();
        assert_abs_diff_eq!(v, 19.974889125382294, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 2.0 * 10.0 - 1.0 / 40.0, epsilon = 2e-4);
    }

    #[test]
    fn pmf_sums_to_one_over_truncation_window() {
        for &mu in &[1e-3f64, 0.1, 1.0, 7.5, 40.0, 300.0, 2000.0] {
            let kmax = (mu + 10.0 * mu.sqrt() + 50.0).ceil() as u64;
            let mut sum = 0.0;
            for k in 0..=kmax {
                sum += MODEL.pmf(k, mu).unwrap();
            }
            assert!((sum - 1.0).abs() <= 1e-12, "mu={mu}: sum={sum}");
        }
    }

    #[test]
    fn quantile_cdf_consistency_grid() {
        for &mu in &[0.01, 0.5, 1.0, 3.7, 25.0, 1000.0] {
            for &q in &[0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999] {
                let k = MODEL.quantile(q, mu).unwrap();
                assert!(MODEL.cdf(k, mu).unwrap() >= q, "mu={mu} q={q} k={k}");
                if k > 0 {
                    assert!(MODEL.cdf(k - 1, mu).unwrap() < q, "mu={mu} q={q} k={k}");
                }
            }
        }
    }

    #[test]
    fn expected_t_strictly_increasing() {
        let mut prev = MODEL.expected_t(1e-3).unwrap();
        let mut mu = 1e-3;
        while mu < 2e5 {
            mu *= 1.35;
            let v = MODEL.expected_t(mu).unwrap();
            assert!(v > prev, "expected_t not increasing at mu={mu}");
            prev = v;
        }
    }

    #[test]
    fn cdf_nondecreasing_in_k() {
        for &mu in &[0.2, 4.0, 60.0] {
            let mut prev = 0.0;
            for k in 0..((mu as u64) * 3 + 20) {
                let c = MODEL.cdf(k, mu).unwrap();
                assert!(c >= prev);
                prev = c;
            }
        }
    }
}
